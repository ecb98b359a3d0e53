#pragma once

// Additive cue fusion and the prefix projector feeding the translator.

#include "slt/features.hpp"
#include "slt/tensor.hpp"

namespace slt::fusion {

struct FusionConfig {
    double alpha = 1.0;      // face coefficient
    double beta_hand = 1.0;  // hand coefficient (distinct from other betas)
};

struct ProjectedPrefix {
    Tensor z;  // (m, d_model)
    int valid_len = 0;
};

// Two-layer projector parameters, hidden width 4x the output dim by default.
struct ProjectorVars {
    Var w1, b1, w2, b2;
    bool linear_only = false;  // test hook: skip the nonlinearity
};

ParamMap init_projector(const std::string& prefix, int d_in, int d_out, std::mt19937_64& rng,
                        int hidden = -1);
ProjectorVars bind_projector(Tape& tape, const ParamMap& params, const std::string& prefix,
                             bool trainable = true);

// Z_e = Z_s + alpha * Z_face + beta_hand * Z_hand (frame counts must agree).
Var fuse_cues(Var z_s, Var z_face, Var z_hand, const FusionConfig& cfg);
Tensor fuse_cues(const CueFeatureSequence& z_s, const CueFeatureSequence& z_face,
                 const CueFeatureSequence& z_hand, const FusionConfig& cfg);

// Per-frame two-layer map with tanh nonlinearity; frame count preserved.
Var project_prefix(Var z_e, const ProjectorVars& proj);

// Undetected frames copy the nearest preceding detected frame; a leading run
// copies the first detected frame. Idempotent.
CueFeatureSequence repair_missing_frames(const CueFeatureSequence& stream);

}  // namespace slt::fusion
