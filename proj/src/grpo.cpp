#include "slt/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slt/optim.hpp"

namespace slt::grpo {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (step + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

// Per-token log-prob column (T,1) of `tokens` on the live tape.
Var logp_column(const policy::BoundPolicy& bp, Var prefix, const std::vector<int>& tokens) {
    std::vector<int> in;
    in.push_back(0);  // begin
    in.insert(in.end(), tokens.begin(), tokens.end() - 1);
    Var logits = policy::forward_logits(bp, prefix, in);
    return sub(gather_rows(logits, tokens), logsumexp_rows(logits));
}

}  // namespace

double reward(const metrics::TokenSequence& candidate, const metrics::TokenSequence& reference,
              const RewardConfig& cfg) {
    if (reference.empty()) throw std::invalid_argument("reward: empty reference");
    if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
        throw std::invalid_argument("reward: lambda outside [0,1]");
    metrics::TokenSequence ref = reference;
    if (cfg.pad_short_targets) {
        const char* punct = ref.mode == metrics::TokenMode::CjkChar ? "\xE3\x80\x82" : ".";
        while (static_cast<int>(ref.size()) < cfg.pad_below_len) ref.tokens.push_back(punct);
    }
    if (candidate.empty()) return 0.0;
    double b = metrics::bleu(candidate, ref, 4, cfg.smoothing);
    double r = metrics::rouge_l(candidate, ref);
    return cfg.lambda * b + (1.0 - cfg.lambda) * r;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double eps_std) {
    std::size_t n = rewards.size();
    if (n < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
    double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    double std_dev = std::sqrt(var / n);  // population std
    std::vector<double> adv(n, 0.0);
    if (std_dev < eps_std) return adv;
    for (std::size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / std_dev;
    return adv;
}

double kl_estimate(const std::vector<double>& logp_theta, const std::vector<double>& logp_ref) {
    if (logp_theta.empty() || logp_theta.size() != logp_ref.size())
        throw std::invalid_argument("kl_estimate: length mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < logp_theta.size(); ++i) {
        double d = logp_ref[i] - logp_theta[i];
        acc += std::exp(d) - d - 1.0;
    }
    return acc / static_cast<double>(logp_theta.size());
}

Var grpo_objective(const std::vector<CandidateTerms>& group, const GrpoConfig& cfg) {
    if (group.empty()) throw std::invalid_argument("grpo_objective: empty group");
    Var loss_sum;
    for (const CandidateTerms& c : group) {
        int t_len = c.logp_theta.shape().at(0);
        if (static_cast<int>(c.logp_old.size()) != t_len ||
            static_cast<int>(c.logp_ref.size()) != t_len)
            throw std::invalid_argument("grpo_objective: log-prob length mismatch");
        Tape* tape = c.logp_theta.tape();

        Var lp = c.logp_theta;
        std::vector<double> lp_old = c.logp_old;
        if (cfg.ratio_level == RatioLevel::Sequence) {
            lp = sum(lp);  // (1,1): one sequence-level ratio
            lp_old = {std::accumulate(c.logp_old.begin(), c.logp_old.end(), 0.0)};
        }
        int terms = lp.value().rows();
        Tensor old_t({terms, 1});
        for (int i = 0; i < terms; ++i) old_t.at(i, 0) = lp_old[i];
        Var rho = vexp(sub(lp, tape->constant(std::move(old_t))));

        // min(rho*A, clip(rho)*A): the clipped branch is locally constant, so
        // pick the active branch per term and route gradients accordingly.
        double lo = 1.0 - cfg.epsilon_clip, hi = 1.0 + cfg.epsilon_clip;
        std::vector<bool> unclipped(terms);
        Tensor frozen({terms, 1});
        for (int i = 0; i < terms; ++i) {
            double r = rho.value().at(i, 0);
            double live = r * c.advantage;
            double clipped = std::clamp(r, lo, hi) * c.advantage;
            unclipped[i] = live <= clipped;
            frozen.at(i, 0) = unclipped[i] ? 0.0 : clipped;
        }
        Var surr = add(mask_rows(scale(rho, c.advantage), unclipped),
                       tape->constant(std::move(frozen)));
        Var surr_mean = mean(surr);

        Tensor ref_t({t_len, 1});
        for (int i = 0; i < t_len; ++i) ref_t.at(i, 0) = c.logp_ref[i];
        Var d = sub(tape->constant(std::move(ref_t)), c.logp_theta);
        Var ones = tape->constant(Tensor::full({t_len, 1}, 1.0));
        Var kl = mean(sub(sub(vexp(d), d), ones));

        Var contribution = sub(surr_mean, scale(kl, cfg.kl_coefficient));
        loss_sum = loss_sum.valid() ? add(loss_sum, contribution) : contribution;
    }
    // negated objective, averaged over the group
    return scale(loss_sum, -1.0 / static_cast<double>(group.size()));
}

metrics::TokenSequence ids_to_token_sequence(const std::vector<int>& ids,
                                             const policy::Vocabulary& vocab,
                                             metrics::TokenMode mode) {
    metrics::TokenSequence seq;
    seq.mode = mode;
    for (int id : ids) {
        if (vocab.is_reserved(id)) continue;
        seq.tokens.push_back(vocab.tokens.at(id));
    }
    return seq;
}

RftResult rft_train(const policy::Policy& base, const std::vector<RftExample>& dataset,
                    const policy::Vocabulary& vocab, metrics::TokenMode mode,
                    const RewardConfig& reward_cfg, const GrpoConfig& cfg,
                    const policy::AdapterSpec& adapter_spec, std::uint64_t seed,
                    const RewardFn& custom_reward,
                    const std::function<void(const RftLogRecord&)>& on_step,
                    const std::function<void(int, const policy::AdapterWeights&)>& on_epoch) {
    if (dataset.empty()) throw std::invalid_argument("rft_train: empty dataset");
    if (cfg.group_size < 2) throw std::invalid_argument("rft_train: group size must be >= 2");
    if (!base.merged_adapters)
        throw std::invalid_argument("rft_train: base policy has unmerged adapters");

    std::mt19937_64 init_rng(mix_seed(seed, 0));
    policy::AdapterWeights theta = policy::init_adapters(base, adapter_spec, init_rng);
    policy::AdapterWeights old_policy = theta;

    optim::AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = 0.0;

    policy::DecodeConfig sample_cfg;
    sample_cfg.max_length = cfg.max_length;
    sample_cfg.temperature = cfg.sample_temperature;

    RftResult result;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const RftExample& ex : dataset) {
            ++step;
            std::uint64_t step_seed = mix_seed(seed, static_cast<std::uint64_t>(step));

            auto sampled = policy::sample_candidates(base, ex.prefix, cfg.group_size, sample_cfg,
                                                     step_seed, &old_policy);
            // terminate-by-end is itself an action: score the end token too
            std::vector<std::vector<int>> actions;
            for (auto& s : sampled) {
                std::vector<int> a = s;
                if (static_cast<int>(a.size()) < cfg.max_length) a.push_back(/*end*/ 1);
                if (a.empty()) a.push_back(1);
                actions.push_back(std::move(a));
            }

            std::vector<double> rewards;
            for (const auto& s : sampled) {
                metrics::TokenSequence cand = ids_to_token_sequence(s, vocab, mode);
                rewards.push_back(custom_reward ? custom_reward(cand, ex)
                                                : reward(cand, ex.reference_text, reward_cfg));
            }
            std::vector<double> adv = group_advantages(rewards, cfg.eps_std);

            Tape tape(true, false);
            std::mt19937_64 dropout_rng(mix_seed(step_seed, 7));
            policy::AdapterBinding theta_bind = policy::bind_adapters(tape, theta, true);
            theta_bind.training = adapter_spec.dropout > 0.0;
            theta_bind.dropout_rng = &dropout_rng;
            policy::BoundPolicy bp = policy::bind_policy(tape, base, false, &theta_bind);
            Var prefix = ex.prefix.numel() > 0 ? tape.constant(ex.prefix) : Var();

            std::vector<CandidateTerms> group;
            double kl_sum = 0.0;
            for (std::size_t i = 0; i < actions.size(); ++i) {
                CandidateTerms terms;
                terms.logp_theta = logp_column(bp, prefix, actions[i]);
                terms.logp_old =
                    policy::sequence_log_prob(base, ex.prefix, actions[i], &old_policy).per_token;
                terms.logp_ref = policy::sequence_log_prob(base, ex.prefix, actions[i]).per_token;
                terms.advantage = adv[i];
                std::vector<double> theta_vals;
                for (int t = 0; t < terms.logp_theta.value().rows(); ++t)
                    theta_vals.push_back(terms.logp_theta.value().at(t, 0));
                kl_sum += kl_estimate(theta_vals, terms.logp_ref);
                group.push_back(std::move(terms));
            }

            Var loss = grpo_objective(group, cfg);
            double loss_val = loss.value().item();
            if (!std::isfinite(loss_val))
                throw std::runtime_error("rft_train: non-finite loss at step " +
                                         std::to_string(step));
            tape.backward(loss);

            for (auto& [name, pair] : theta.ab) {
                const auto& bound = theta_bind.ab.at(name);
                opt.step("A:" + name, pair.first, tape.grad(bound.first));
                opt.step("B:" + name, pair.second, tape.grad(bound.second));
            }
            if (cfg.old_refresh_every > 0 && step % cfg.old_refresh_every == 0)
                old_policy = theta;

            RftLogRecord rec;
            rec.step = step;
            rec.reward_mean =
                std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();
            double var = 0.0;
            for (double r : rewards) var += (r - rec.reward_mean) * (r - rec.reward_mean);
            rec.reward_std = std::sqrt(var / rewards.size());
            rec.kl = kl_sum / static_cast<double>(actions.size());
            rec.loss = loss_val;
            result.log.push_back(rec);
            if (on_step) on_step(rec);
        }
        if (on_epoch) on_epoch(epoch, theta);
    }
    result.adapters = std::move(theta);
    return result;
}

}  // namespace slt::grpo
