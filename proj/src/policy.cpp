#include "slt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slt::policy {

namespace {

double uniform01(std::mt19937_64& rng) {
    // top 53 bits -> [0,1); avoids distribution-object implementation drift
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string block_name(int i, const char* leaf) {
    return "dec.b" + std::to_string(i) + "." + leaf;
}

void check_token_ids(const std::vector<int>& ids, int vocab) {
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw std::out_of_range("token id " + std::to_string(id) + " out of range [0," +
                                    std::to_string(vocab) + ")");
}

// x W, plus the low-rank path (scale/rank) (drop(x) B) A when `name` is an
// adapter target.
Var apply_weight(const BoundPolicy& p, const std::string& name, Var x) {
    Var y = matmul(x, p.params.at(name));
    if (!p.adapters) return y;
    auto it = p.adapters->ab.find(name);
    if (it == p.adapters->ab.end()) return y;
    const auto& [a, b] = it->second;
    Var xin = x;
    double rate = p.adapters->spec->dropout;
    if (p.adapters->training && rate > 0.0) {
        if (!p.adapters->dropout_rng)
            throw std::logic_error("adapter dropout requested without an RNG");
        Tensor mask(x.shape());
        for (double& v : mask.data)
            v = uniform01(*p.adapters->dropout_rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
        xin = mul(x, x.tape()->constant(std::move(mask)));
    }
    double s = p.adapters->spec->scale / p.adapters->spec->rank;
    return add(y, scale(matmul(matmul(xin, b), a), s));
}

Tensor last_logits(const Policy& p, const Tensor& prefix, const std::vector<int>& generated,
                   const AdapterWeights* adapters) {
    Tape t(false);
    AdapterBinding ab;
    const AdapterBinding* abp = nullptr;
    if (adapters) {
        ab = bind_adapters(t, *adapters, false);
        abp = &ab;
    }
    BoundPolicy bp = bind_policy(t, p, false, abp);
    Var pfx = prefix.numel() > 0 ? t.constant(prefix) : Var();
    std::vector<int> in;
    in.reserve(generated.size() + 1);
    in.push_back(/*begin*/ 0);
    in.insert(in.end(), generated.begin(), generated.end());
    Var logits = forward_logits(bp, pfx, in);
    int last = logits.shape().at(0) - 1;
    Var row = slice_rows(logits, last, last + 1);
    return row.value();
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& words) {
    Vocabulary v;
    v.tokens = {"<s>", "</s>", "<pad>"};
    v.begin_id = 0;
    v.end_id = 1;
    v.pad_id = 2;
    for (const std::string& w : words) {
        if (v.ids.count(w) || w == "<s>" || w == "</s>" || w == "<pad>")
            throw std::invalid_argument("Vocabulary::build: duplicate or reserved token '" + w +
                                        "'");
        v.ids[w] = static_cast<int>(v.tokens.size());
        v.tokens.push_back(w);
    }
    v.ids["<s>"] = v.begin_id;
    v.ids["</s>"] = v.end_id;
    v.ids["<pad>"] = v.pad_id;
    return v;
}

int Vocabulary::id_of(const std::string& w) const {
    auto it = ids.find(w);
    if (it == ids.end()) throw std::out_of_range("unknown token '" + w + "'");
    return it->second;
}

Policy init_policy(const PolicyConfig& cfg, std::mt19937_64& rng) {
    if (cfg.vocab_size < 4) throw std::invalid_argument("init_policy: vocab too small");
    Policy p;
    p.cfg = cfg;
    int d = cfg.d_model;
    double s = 1.0 / std::sqrt(static_cast<double>(d));
    p.params["dec.tok_emb"] = Tensor::randn({cfg.vocab_size, d}, rng, 0.1);
    p.params["dec.pos_emb"] = Tensor::randn({cfg.max_positions, d}, rng, 0.1);
    for (int i = 0; i < cfg.n_blocks; ++i) {
        p.params[block_name(i, "wq")] = Tensor::randn({d, d}, rng, s);
        p.params[block_name(i, "wk")] = Tensor::randn({d, d}, rng, s);
        p.params[block_name(i, "wv")] = Tensor::randn({d, d}, rng, s);
        p.params[block_name(i, "wo")] = Tensor::randn({d, d}, rng, s);
        p.params[block_name(i, "ff1")] = Tensor::randn({d, cfg.d_ff}, rng, s);
        p.params[block_name(i, "ff1b")] = Tensor::zeros({1, cfg.d_ff});
        p.params[block_name(i, "ff2")] =
            Tensor::randn({cfg.d_ff, d}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
        p.params[block_name(i, "ff2b")] = Tensor::zeros({1, d});
    }
    p.params["dec.out_w"] = Tensor::randn({d, cfg.vocab_size}, rng, s);
    p.params["dec.out_b"] = Tensor::zeros({1, cfg.vocab_size});
    return p;
}

AdapterWeights init_adapters(const Policy& base, const AdapterSpec& spec, std::mt19937_64& rng) {
    if (spec.rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
    AdapterWeights w;
    w.spec = spec;
    for (const std::string& target : spec.targets) {
        auto it = base.params.find(target);
        if (it == base.params.end())
            throw std::invalid_argument("adapter target '" + target + "' not in policy");
        int d_in = it->second.rows(), d_out = it->second.cols();
        if (spec.rank > std::min(d_in, d_out))
            throw std::invalid_argument("adapter rank " + std::to_string(spec.rank) +
                                        " exceeds dims of '" + target + "'");
        Tensor a = Tensor::randn({spec.rank, d_out}, rng, 1.0 / std::sqrt(spec.rank));
        Tensor b = Tensor::zeros({d_in, spec.rank});
        w.ab[target] = {std::move(a), std::move(b)};
    }
    return w;
}

AdapterBinding bind_adapters(Tape& tape, const AdapterWeights& w, bool trainable) {
    AdapterBinding b;
    b.spec = &w.spec;
    for (const auto& [name, pair] : w.ab)
        b.ab[name] = {tape.leaf(pair.first, trainable), tape.leaf(pair.second, trainable)};
    return b;
}

BoundPolicy bind_policy(Tape& tape, const Policy& p, bool trainable,
                        const AdapterBinding* adapters) {
    BoundPolicy b;
    b.cfg = &p.cfg;
    for (const auto& [name, tensor] : p.params) b.params[name] = tape.leaf(tensor, trainable);
    b.adapters = adapters;
    return b;
}

Var forward_logits(const BoundPolicy& p, Var prefix, const std::vector<int>& tokens_in) {
    const PolicyConfig& cfg = *p.cfg;
    check_token_ids(tokens_in, cfg.vocab_size);
    if (tokens_in.empty()) throw std::invalid_argument("forward_logits: empty token input");
    Var tok = select_rows(p.params.at("dec.tok_emb"), tokens_in);
    Var x = prefix.valid() ? concat_rows(prefix, tok) : tok;
    int total = x.shape().at(0);
    int pfx_len = total - static_cast<int>(tokens_in.size());
    if (total > cfg.max_positions)
        throw std::invalid_argument("sequence length " + std::to_string(total) +
                                    " exceeds max positions " + std::to_string(cfg.max_positions));
    x = add(x, slice_rows(p.params.at("dec.pos_emb"), 0, total));

    std::vector<std::vector<bool>> causal(total, std::vector<bool>(total, false));
    for (int i = 0; i < total; ++i)
        for (int j = 0; j <= i; ++j) causal[i][j] = true;

    double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (int i = 0; i < cfg.n_blocks; ++i) {
        Var q = apply_weight(p, block_name(i, "wq"), x);
        Var k = matmul(x, p.params.at(block_name(i, "wk")));
        Var v = apply_weight(p, block_name(i, "wv"), x);
        Var attn = softmax_rows(scale(matmul(q, transpose(k)), att_scale), 1.0, &causal);
        x = add(x, matmul(matmul(attn, v), p.params.at(block_name(i, "wo"))));
        Var h = vtanh(add_rowvec(matmul(x, p.params.at(block_name(i, "ff1"))),
                                 p.params.at(block_name(i, "ff1b"))));
        x = add(x, add_rowvec(matmul(h, p.params.at(block_name(i, "ff2"))),
                              p.params.at(block_name(i, "ff2b"))));
    }
    Var text = pfx_len > 0 ? slice_rows(x, pfx_len, total) : x;
    return add_rowvec(matmul(text, p.params.at("dec.out_w")), p.params.at("dec.out_b"));
}

Tensor next_token_distribution(const Policy& p, const Tensor& prefix,
                               const std::vector<int>& generated,
                               const AdapterWeights* adapters) {
    Tensor logits = last_logits(p, prefix, generated, adapters);
    return softmax_rows_value(logits, 1.0, nullptr);
}

SequenceScore sequence_log_prob(const Policy& p, const Tensor& prefix,
                                const std::vector<int>& tokens,
                                const AdapterWeights* adapters) {
    if (tokens.empty()) throw std::invalid_argument("sequence_log_prob: empty sequence");
    Tape t(false);
    AdapterBinding ab;
    const AdapterBinding* abp = nullptr;
    if (adapters) {
        ab = bind_adapters(t, *adapters, false);
        abp = &ab;
    }
    BoundPolicy bp = bind_policy(t, p, false, abp);
    Var pfx = prefix.numel() > 0 ? t.constant(prefix) : Var();
    std::vector<int> in;
    in.push_back(0);  // begin
    in.insert(in.end(), tokens.begin(), tokens.end() - 1);
    Var logits = forward_logits(bp, pfx, in);
    Var lse = logsumexp_rows(logits);
    Var picked = gather_rows(logits, tokens);
    SequenceScore s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        double lp = picked.value().at(static_cast<int>(i), 0) - lse.value().at(static_cast<int>(i), 0);
        s.per_token.push_back(lp);
        s.total += lp;
    }
    return s;
}

std::vector<std::vector<int>> sample_candidates(const Policy& p, const Tensor& prefix, int n,
                                                const DecodeConfig& cfg, std::uint64_t seed,
                                                const AdapterWeights* adapters) {
    if (n < 1) throw std::invalid_argument("sample_candidates: n must be >= 1");
    if (cfg.temperature <= 0) throw std::invalid_argument("sample_candidates: temperature <= 0");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<int>> out;
    for (int c = 0; c < n; ++c) {
        std::vector<int> gen;
        while (static_cast<int>(gen.size()) < cfg.max_length) {
            Tensor logits = last_logits(p, prefix, gen, adapters);
            Tensor probs = softmax_rows_value(logits, cfg.temperature, nullptr);
            double u = uniform01(rng);
            int pick = probs.cols() - 1;
            double acc = 0.0;
            for (int j = 0; j < probs.cols(); ++j) {
                acc += probs.at(0, j);
                if (u < acc) { pick = j; break; }
            }
            if (pick == /*end*/ 1) break;
            gen.push_back(pick);
        }
        out.push_back(std::move(gen));
    }
    return out;
}

std::vector<int> beam_decode(const Policy& p, const Tensor& prefix, const DecodeConfig& cfg,
                             const AdapterWeights* adapters) {
    if (cfg.beam_width < 1) throw std::invalid_argument("beam_decode: width must be >= 1");
    struct Beam {
        std::vector<int> tokens;  // excludes begin/end
        double logprob = 0.0;
        bool finished = false;
        double norm() const {
            std::size_t len = tokens.size() + 1;  // count the terminator
            return logprob / static_cast<double>(len);
        }
    };
    // Prune by raw log-prob during the search (so width 1 is exactly greedy);
    // length normalization only picks the final hypothesis.
    auto better_raw = [](const Beam& a, const Beam& b) {
        if (a.logprob != b.logprob) return a.logprob > b.logprob;
        return a.tokens < b.tokens;  // lexicographic tie-break
    };
    auto better_norm = [](const Beam& a, const Beam& b) {
        if (a.norm() != b.norm()) return a.norm() > b.norm();
        return a.tokens < b.tokens;
    };

    std::vector<Beam> beams{Beam{}};
    for (int step = 0; step < cfg.max_length; ++step) {
        bool all_done = true;
        std::vector<Beam> next;
        for (const Beam& b : beams) {
            if (b.finished) {
                next.push_back(b);
                continue;
            }
            all_done = false;
            Tensor logits = last_logits(p, prefix, b.tokens, adapters);
            double mx = *std::max_element(logits.data.begin(), logits.data.end());
            double denom = 0.0;
            for (double v : logits.data) denom += std::exp(v - mx);
            double lse = mx + std::log(denom);
            for (int j = 0; j < logits.cols(); ++j) {
                if (j == /*pad*/ 2 || j == /*begin*/ 0) continue;
                Beam nb = b;
                nb.logprob += logits.at(0, j) - lse;
                if (j == /*end*/ 1) nb.finished = true;
                else nb.tokens.push_back(j);
                next.push_back(std::move(nb));
            }
        }
        if (all_done) break;
        std::sort(next.begin(), next.end(), better_raw);
        if (static_cast<int>(next.size()) > cfg.beam_width) next.resize(cfg.beam_width);
        beams = std::move(next);
    }
    std::sort(beams.begin(), beams.end(), better_norm);
    return beams.front().tokens;
}

Var sequence_nll(const BoundPolicy& p, Var prefix, const std::vector<int>& reference) {
    if (reference.empty()) throw std::invalid_argument("sequence_nll: empty reference");
    std::vector<int> in;
    in.push_back(0);  // begin
    in.insert(in.end(), reference.begin(), reference.end() - 1);
    std::vector<int> targets = reference;
    // pad positions carry no loss
    std::vector<bool> keep(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) keep[i] = targets[i] != 2;
    Var logits = forward_logits(p, prefix, in);
    Var nll_per_pos = sub(logsumexp_rows(logits), gather_rows(logits, targets));
    return sum(mask_rows(nll_per_pos, keep));
}

Var sft_loss(const BoundPolicy& p, const std::vector<SftExample>& batch) {
    if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
    Var total;
    for (const SftExample& ex : batch) {
        Var nll = sequence_nll(p, ex.prefix, ex.reference);
        total = total.valid() ? add(total, nll) : nll;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

Policy merge_adapters(const Policy& base, const AdapterWeights& w) {
    Policy merged = base;
    double s = w.spec.scale / w.spec.rank;
    for (const auto& [name, pair] : w.ab) {
        const Tensor& a = pair.first;   // (r, d_out)
        const Tensor& b = pair.second;  // (d_in, r)
        Tensor& target = merged.params.at(name);
        for (int i = 0; i < target.rows(); ++i)
            for (int j = 0; j < target.cols(); ++j) {
                double acc = 0.0;
                for (int r = 0; r < w.spec.rank; ++r) acc += b.at(i, r) * a.at(r, j);
                target.at(i, j) += s * acc;
            }
    }
    merged.merged_adapters = true;
    return merged;
}

}  // namespace slt::policy
