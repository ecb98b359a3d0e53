#pragma once

// Stage-3 reinforcement fine-tuning: sentence-level reward, group-relative
// advantages, clipped ratio surrogate with a KL penalty to a frozen reference,
// and the training loop over current / behavior / reference policies.

#include <cstdint>
#include <functional>

#include "slt/metrics.hpp"
#include "slt/policy.hpp"
#include "slt/tensor.hpp"

namespace slt::grpo {

struct RewardConfig {
    double lambda = 0.5;  // BLEU-4 weight; ROUGE-L gets 1 - lambda
    metrics::Smoothing smoothing = metrics::Smoothing::AddEps;
    bool pad_short_targets = false;  // append sentence punctuation to short references
    int pad_below_len = 4;
};

// lambda * BLEU-4 + (1 - lambda) * ROUGE-L, on the 0-100 scale.
double reward(const metrics::TokenSequence& candidate, const metrics::TokenSequence& reference,
              const RewardConfig& cfg);

// (r_i - mean) / population std; all zeros when std < eps_std.
std::vector<double> group_advantages(const std::vector<double>& rewards, double eps_std = 1e-8);

// Non-negative estimator: mean_t[ exp(d) - d - 1 ], d = logp_ref - logp_theta.
double kl_estimate(const std::vector<double>& logp_theta, const std::vector<double>& logp_ref);

enum class RatioLevel { Token, Sequence };

struct GrpoConfig {
    int group_size = 8;        // N
    double epsilon_clip = 0.2;
    double kl_coefficient = 0.04;
    double eps_std = 1e-8;
    double lr = 1e-2;
    int epochs = 2;
    int old_refresh_every = 1;  // optimizer steps between behavior snapshots
    RatioLevel ratio_level = RatioLevel::Token;
    double sample_temperature = 1.0;
    int max_length = 300;
};

// One candidate's contribution to the objective. logp_theta is a (T,1) column
// on the live tape; the old/ref log-probs are frozen numbers.
struct CandidateTerms {
    Var logp_theta;
    std::vector<double> logp_old;
    std::vector<double> logp_ref;
    double advantage = 0.0;
};

// Negated GRPO objective (a loss). Gradients flow only through logp_theta.
Var grpo_objective(const std::vector<CandidateTerms>& group, const GrpoConfig& cfg);

struct RftExample {
    Tensor prefix;  // (m, d_model) conditioning rows
    std::vector<int> reference_ids;
    metrics::TokenSequence reference_text;
};

using RewardFn = std::function<double(const metrics::TokenSequence&, const RftExample&)>;

struct RftLogRecord {
    int step = 0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    double kl = 0.0;
    double loss = 0.0;
};

struct RftResult {
    policy::AdapterWeights adapters;
    std::vector<RftLogRecord> log;
};

// base must be a merged SFT policy; it stays frozen and doubles as pi_ref.
// Fresh adapters (initially zero delta) are the trainable pi_theta.
RftResult rft_train(const policy::Policy& base, const std::vector<RftExample>& dataset,
                    const policy::Vocabulary& vocab, metrics::TokenMode mode,
                    const RewardConfig& reward_cfg, const GrpoConfig& cfg,
                    const policy::AdapterSpec& adapter_spec, std::uint64_t seed,
                    const RewardFn& custom_reward = nullptr,
                    const std::function<void(const RftLogRecord&)>& on_step = nullptr,
                    const std::function<void(int, const policy::AdapterWeights&)>& on_epoch =
                        nullptr);

// Token-id sequence -> scored token sequence (reserved ids dropped).
metrics::TokenSequence ids_to_token_sequence(const std::vector<int>& ids,
                                             const policy::Vocabulary& vocab,
                                             metrics::TokenMode mode);

}  // namespace slt::grpo
