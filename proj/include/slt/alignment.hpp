#pragma once

// Stage-1 objective: masked segment-token similarity with a trainable
// temperature, global bidirectional similarities, batch InfoNCE, and the
// combined pre-training loss.

#include <functional>

#include "slt/features.hpp"
#include "slt/fusion.hpp"
#include "slt/tensor.hpp"

namespace slt::alignment {

struct ContrastiveConfig {
    int embed_dim = 16;          // D
    double init_tau = 0.1;       // stored/trained as log tau
    double tau_prime = 0.07;     // fixed InfoNCE temperature
    double beta_dir = 0.5;       // directional weight
};

struct SimilarityBundle {
    Var e;         // (M, L) cosine similarities
    Var p;         // (M, L) masked row-softmax of E / tau
    Var z_st;      // scalar, sign-to-text
    Var z_ts;      // scalar, text-to-sign
    std::vector<bool> row_valid, col_valid;
};

// Toy skeleton encoder: per-frame feed-forward map + one self-attention mixer.
struct EncoderVars {
    fusion::ProjectorVars frame_mlp;
    Var wq, wk, wv, wo;
};

ParamMap init_encoder(const std::string& prefix, int d_feat, std::mt19937_64& rng);
EncoderVars bind_encoder(Tape& tape, const ParamMap& params, const std::string& prefix,
                         bool trainable = true);

// (m, d_feat) frames -> contextual features of the same dim; masked rows zero.
Var encode_skeleton(Var frames, const EncoderVars& enc, const std::vector<bool>& valid);

// Projection + row L2 normalization; masked rows exactly zero.
Var embed_stream(Var feats, const fusion::ProjectorVars& proj, const std::vector<bool>& valid);

// E = F_S F_T^T, P = masked row-softmax of E/tau, re-weighted row similarities
// averaged over unmasked rows; the text-to-sign direction runs on E^T.
SimilarityBundle global_similarity(Var f_s, Var f_t, Var log_tau,
                                   const std::vector<bool>& s_valid,
                                   const std::vector<bool>& t_valid);

// (B,B) matrices of global similarities for every ordered pair in the batch.
struct BatchSimilarity {
    Var z_s2t, z_t2s;
};
BatchSimilarity batch_similarity_matrices(const std::vector<Var>& f_s,
                                          const std::vector<Var>& f_t, Var log_tau,
                                          const std::vector<std::vector<bool>>& s_valid,
                                          const std::vector<std::vector<bool>>& t_valid);

// Bidirectional InfoNCE over the diagonal of the batch matrices.
Var infonce_loss(Var z_s2t, Var z_t2s, double tau_prime, double beta_dir);

// L_pt = L_con + L_slt; the translation loss is supplied by the decoder.
Var pretrain_objective(Var l_con, const std::function<Var()>& translation_loss);

}  // namespace slt::alignment
