#pragma once

// Toy autoregressive translator: conditions on a projected feature prefix,
// scores/samples/beam-decodes token sequences, and supports low-rank adapters
// on the attention query/value projections with an explicit merge.

#include <cstdint>
#include <optional>
#include <unordered_map>

#include "slt/features.hpp"
#include "slt/fusion.hpp"
#include "slt/tensor.hpp"

namespace slt::policy {

struct Vocabulary {
    std::vector<std::string> tokens;  // id -> string
    std::unordered_map<std::string, int> ids;
    int begin_id = 0, end_id = 1, pad_id = 2;

    // Reserved tokens <s>, </s>, <pad> are prepended automatically.
    static Vocabulary build(const std::vector<std::string>& words);
    int size() const { return static_cast<int>(tokens.size()); }
    int id_of(const std::string& w) const;
    bool is_reserved(int id) const { return id == begin_id || id == end_id || id == pad_id; }
};

struct PolicyConfig {
    int vocab_size = 0;
    int d_model = 32;
    int d_ff = 64;
    int n_blocks = 1;
    int max_positions = 360;  // prefix frames + text
};

struct Policy {
    PolicyConfig cfg;
    ParamMap params;
    bool merged_adapters = false;  // set once adapters have been folded in
};

Policy init_policy(const PolicyConfig& cfg, std::mt19937_64& rng);

struct AdapterSpec {
    std::vector<std::string> targets;  // parameter names, e.g. dec.b0.wq
    int rank = 8;
    double scale = 16.0;
    double dropout = 0.0;
};

struct AdapterWeights {
    AdapterSpec spec;
    // per target: A (rank, d_out), B (d_in, rank); delta = (scale/rank) B A
    std::map<std::string, std::pair<Tensor, Tensor>> ab;
};

// B starts at zero so the adapted policy initially equals the base.
AdapterWeights init_adapters(const Policy& base, const AdapterSpec& spec, std::mt19937_64& rng);

struct AdapterBinding {
    const AdapterSpec* spec = nullptr;
    std::map<std::string, std::pair<Var, Var>> ab;  // (A, B) vars
    bool training = false;
    std::mt19937_64* dropout_rng = nullptr;
};

AdapterBinding bind_adapters(Tape& tape, const AdapterWeights& w, bool trainable = true);

struct BoundPolicy {
    const PolicyConfig* cfg;
    std::map<std::string, Var> params;
    const AdapterBinding* adapters = nullptr;  // optional
};

BoundPolicy bind_policy(Tape& tape, const Policy& p, bool trainable = false,
                        const AdapterBinding* adapters = nullptr);

// Logits for every text position. Input row t of the text segment is the
// embedding of tokens_in[t]; row t of the output scores the next token.
// prefix may be invalid (unconditioned policy).
Var forward_logits(const BoundPolicy& p, Var prefix, const std::vector<int>& tokens_in);

struct DecodeConfig {
    int beam_width = 5;
    int max_length = 300;
    double temperature = 1.0;
};

// Distribution over the next token given the generated ids so far (begin token
// implicit). No gradients.
Tensor next_token_distribution(const Policy& p, const Tensor& prefix,
                               const std::vector<int>& generated,
                               const AdapterWeights* adapters = nullptr);

struct SequenceScore {
    double total = 0.0;
    std::vector<double> per_token;
};

SequenceScore sequence_log_prob(const Policy& p, const Tensor& prefix,
                                const std::vector<int>& tokens,
                                const AdapterWeights* adapters = nullptr);

// Ancestral sampling at cfg.temperature; deterministic given the seed.
std::vector<std::vector<int>> sample_candidates(const Policy& p, const Tensor& prefix, int n,
                                                const DecodeConfig& cfg, std::uint64_t seed,
                                                const AdapterWeights* adapters = nullptr);

// Length-normalized beam search; ties broken lexicographically on token ids.
std::vector<int> beam_decode(const Policy& p, const Tensor& prefix, const DecodeConfig& cfg,
                             const AdapterWeights* adapters = nullptr);

// Mean over the batch of the per-sequence summed NLL of the reference tokens.
struct SftExample {
    Var prefix;                  // bound on the same tape
    std::vector<int> reference;  // ends with end_id
};
Var sft_loss(const BoundPolicy& p, const std::vector<SftExample>& batch);

// Token-level cross-entropy of one sequence, summed (used by both the stage-1
// translation loss and sft_loss).
Var sequence_nll(const BoundPolicy& p, Var prefix, const std::vector<int>& reference);

// Returns base with (scale/rank) B A folded into each target weight.
Policy merge_adapters(const Policy& base, const AdapterWeights& w);

}  // namespace slt::policy
