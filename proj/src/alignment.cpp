#include "slt/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace slt::alignment {

namespace {

Var masked_row_mean(Var col, const std::vector<bool>& valid) {
    // col: (M,1); averages the valid rows only
    int m = col.shape().at(0);
    int count = 0;
    for (bool v : valid) count += v ? 1 : 0;
    if (count == 0) throw std::invalid_argument("masked mean: all rows masked");
    Tensor w({1, m});
    for (int i = 0; i < m; ++i) w.at(0, i) = valid[i] ? 1.0 / count : 0.0;
    return matmul(col.tape()->constant(std::move(w)), col);
}

Var directional_similarity(Var e, Var inv_tau, const std::vector<bool>& row_valid,
                           const std::vector<bool>& col_valid, Var* p_out) {
    int rows = e.shape().at(0);
    std::vector<std::vector<bool>> mask(rows, col_valid);
    Var p = softmax_rows(mul_scalar(e, inv_tau), 1.0, &mask);
    if (p_out) *p_out = p;
    Var weighted = mul(p, e);
    Tensor ones({e.shape().at(1), 1});
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    Var row_sums = matmul(weighted, e.tape()->constant(std::move(ones)));
    return masked_row_mean(row_sums, row_valid);
}

Var stack_scalars_to_matrix(const std::vector<std::vector<Var>>& grid) {
    Var out;
    for (const auto& row : grid) {
        Var col = row[0];
        for (std::size_t j = 1; j < row.size(); ++j) col = concat_rows(col, row[j]);
        Var r = transpose(col);  // (1,B)
        out = out.valid() ? concat_rows(out, r) : r;
    }
    return out;
}

}  // namespace

ParamMap init_encoder(const std::string& prefix, int d_feat, std::mt19937_64& rng) {
    ParamMap p = fusion::init_projector(prefix + ".frame", d_feat, d_feat, rng, 2 * d_feat);
    double s = 1.0 / std::sqrt(d_feat);
    p[prefix + ".wq"] = Tensor::randn({d_feat, d_feat}, rng, s);
    p[prefix + ".wk"] = Tensor::randn({d_feat, d_feat}, rng, s);
    p[prefix + ".wv"] = Tensor::randn({d_feat, d_feat}, rng, s);
    p[prefix + ".wo"] = Tensor::randn({d_feat, d_feat}, rng, s);
    return p;
}

EncoderVars bind_encoder(Tape& tape, const ParamMap& params, const std::string& prefix,
                         bool trainable) {
    EncoderVars v;
    v.frame_mlp = fusion::bind_projector(tape, params, prefix + ".frame", trainable);
    v.wq = tape.leaf(params.at(prefix + ".wq"), trainable);
    v.wk = tape.leaf(params.at(prefix + ".wk"), trainable);
    v.wv = tape.leaf(params.at(prefix + ".wv"), trainable);
    v.wo = tape.leaf(params.at(prefix + ".wo"), trainable);
    return v;
}

Var encode_skeleton(Var frames, const EncoderVars& enc, const std::vector<bool>& valid) {
    int m = frames.shape().at(0);
    if (static_cast<int>(valid.size()) != m)
        throw std::invalid_argument("encode_skeleton: validity mask size != frame count");
    Var h = fusion::project_prefix(frames, enc.frame_mlp);
    int d = h.shape().at(1);
    Var q = matmul(h, enc.wq);
    Var k = matmul(h, enc.wk);
    Var v = matmul(h, enc.wv);
    Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<std::vector<bool>> mask(m, valid);
    Var attn = softmax_rows(scores, 1.0, &mask);
    Var mixed = matmul(matmul(attn, v), enc.wo);
    return mask_rows(add(h, mixed), valid);
}

Var embed_stream(Var feats, const fusion::ProjectorVars& proj, const std::vector<bool>& valid) {
    if (static_cast<int>(valid.size()) != feats.shape().at(0))
        throw std::invalid_argument("embed_stream: validity mask size != row count");
    Var y = fusion::project_prefix(feats, proj);
    return mask_rows(l2_normalize_rows(y), valid);
}

SimilarityBundle global_similarity(Var f_s, Var f_t, Var log_tau,
                                   const std::vector<bool>& s_valid,
                                   const std::vector<bool>& t_valid) {
    bool any_s = std::any_of(s_valid.begin(), s_valid.end(), [](bool b) { return b; });
    bool any_t = std::any_of(t_valid.begin(), t_valid.end(), [](bool b) { return b; });
    if (!any_s || !any_t) throw std::invalid_argument("global_similarity: a side is fully masked");
    SimilarityBundle b;
    b.row_valid = s_valid;
    b.col_valid = t_valid;
    b.e = matmul(f_s, transpose(f_t));
    Var inv_tau = vexp(scale(log_tau, -1.0));
    b.z_st = directional_similarity(b.e, inv_tau, s_valid, t_valid, &b.p);
    b.z_ts = directional_similarity(transpose(b.e), inv_tau, t_valid, s_valid, nullptr);
    return b;
}

BatchSimilarity batch_similarity_matrices(const std::vector<Var>& f_s,
                                          const std::vector<Var>& f_t, Var log_tau,
                                          const std::vector<std::vector<bool>>& s_valid,
                                          const std::vector<std::vector<bool>>& t_valid) {
    std::size_t b = f_s.size();
    if (b == 0 || f_t.size() != b)
        throw std::invalid_argument("batch_similarity_matrices: batch sides disagree");
    int d = f_s[0].shape().at(1);
    for (const Var& v : f_s)
        if (v.shape().at(1) != d)
            throw std::invalid_argument("batch_similarity_matrices: heterogeneous embed dim");
    for (const Var& v : f_t)
        if (v.shape().at(1) != d)
            throw std::invalid_argument("batch_similarity_matrices: heterogeneous embed dim");

    std::vector<std::vector<Var>> s2t(b, std::vector<Var>(b));
    std::vector<std::vector<Var>> t2s(b, std::vector<Var>(b));
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            SimilarityBundle sim =
                global_similarity(f_s[i], f_t[j], log_tau, s_valid[i], t_valid[j]);
            s2t[i][j] = sim.z_st;  // skeleton i vs text j
            t2s[j][i] = sim.z_ts;  // text j vs skeleton i
        }
    }
    BatchSimilarity out;
    out.z_s2t = stack_scalars_to_matrix(s2t);
    out.z_t2s = stack_scalars_to_matrix(t2s);
    return out;
}

Var infonce_loss(Var z_s2t, Var z_t2s, double tau_prime, double beta_dir) {
    if (tau_prime <= 0) throw std::invalid_argument("infonce_loss: tau_prime must be > 0");
    auto directional = [&](Var z) {
        const Shape& s = z.shape();
        if (s.size() != 2 || s[0] != s[1])
            throw std::invalid_argument("infonce_loss: square matrix required, got " +
                                        shape_str(s));
        std::vector<int> diag(s[0]);
        std::iota(diag.begin(), diag.end(), 0);
        Var scaled = scale(z, 1.0 / tau_prime);
        return mean(sub(logsumexp_rows(scaled), gather_rows(scaled, diag)));
    };
    return add(scale(directional(z_s2t), beta_dir), scale(directional(z_t2s), 1.0 - beta_dir));
}

Var pretrain_objective(Var l_con, const std::function<Var()>& translation_loss) {
    return add(l_con, translation_loss());
}

}  // namespace slt::alignment
