#include "slt/fusion.hpp"

#include <stdexcept>

namespace slt::fusion {

ParamMap init_projector(const std::string& prefix, int d_in, int d_out, std::mt19937_64& rng,
                        int hidden) {
    if (hidden <= 0) hidden = 4 * d_out;
    ParamMap p;
    p[prefix + ".w1"] = Tensor::randn({d_in, hidden}, rng, 1.0 / std::sqrt(d_in));
    p[prefix + ".b1"] = Tensor::zeros({1, hidden});
    p[prefix + ".w2"] = Tensor::randn({hidden, d_out}, rng, 1.0 / std::sqrt(hidden));
    p[prefix + ".b2"] = Tensor::zeros({1, d_out});
    return p;
}

ProjectorVars bind_projector(Tape& tape, const ParamMap& params, const std::string& prefix,
                             bool trainable) {
    ProjectorVars v;
    v.w1 = tape.leaf(params.at(prefix + ".w1"), trainable);
    v.b1 = tape.leaf(params.at(prefix + ".b1"), trainable);
    v.w2 = tape.leaf(params.at(prefix + ".w2"), trainable);
    v.b2 = tape.leaf(params.at(prefix + ".b2"), trainable);
    return v;
}

Var fuse_cues(Var z_s, Var z_face, Var z_hand, const FusionConfig& cfg) {
    if (z_s.shape() != z_face.shape() || z_s.shape() != z_hand.shape())
        throw std::invalid_argument("fuse_cues: cue streams disagree in shape: skeleton " +
                                    shape_str(z_s.shape()) + ", face " + shape_str(z_face.shape()) +
                                    ", hand " + shape_str(z_hand.shape()));
    return add(z_s, add(scale(z_face, cfg.alpha), scale(z_hand, cfg.beta_hand)));
}

Tensor fuse_cues(const CueFeatureSequence& z_s, const CueFeatureSequence& z_face,
                 const CueFeatureSequence& z_hand, const FusionConfig& cfg) {
    Tape t(false);
    Var out = fuse_cues(t.constant(z_s.frames), t.constant(z_face.frames),
                        t.constant(z_hand.frames), cfg);
    return out.value();
}

Var project_prefix(Var z_e, const ProjectorVars& proj) {
    if (z_e.shape().at(1) != proj.w1.shape().at(0))
        throw std::invalid_argument("project_prefix: input dim " + shape_str(z_e.shape()) +
                                    " does not match projector " + shape_str(proj.w1.shape()));
    Var h = add_rowvec(matmul(z_e, proj.w1), proj.b1);
    if (!proj.linear_only) h = vtanh(h);
    return add_rowvec(matmul(h, proj.w2), proj.b2);
}

CueFeatureSequence repair_missing_frames(const CueFeatureSequence& stream) {
    if (stream.detected.empty()) return stream;
    if (static_cast<int>(stream.detected.size()) != stream.frame_count())
        throw std::invalid_argument("repair_missing_frames: flag count != frame count");
    int first_ok = -1;
    for (int i = 0; i < stream.frame_count(); ++i)
        if (stream.detected[i]) { first_ok = i; break; }
    if (first_ok < 0) throw std::invalid_argument("repair_missing_frames: no detected frames");

    CueFeatureSequence out = stream;
    int last_ok = first_ok;
    for (int i = 0; i < out.frame_count(); ++i) {
        if (stream.detected[i]) {
            last_ok = i;
            continue;
        }
        int src = i < first_ok ? first_ok : last_ok;
        for (int j = 0; j < out.feature_dim(); ++j) out.frames.at(i, j) = stream.frames.at(src, j);
        out.detected[i] = true;
    }
    return out;
}

}  // namespace slt::fusion
