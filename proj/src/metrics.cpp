#include "slt/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>

namespace slt::metrics {

namespace {

// Minimal UTF-8 code point split. The corpus generator emits composed text,
// so no combining-sequence normalization is required here.
std::vector<std::string> utf8_codepoints(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (c >= 0xF0) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC0) len = 2;
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

bool is_space_cp(const std::string& cp) {
    if (cp.size() == 1) return std::isspace(static_cast<unsigned char>(cp[0])) != 0;
    return cp == "\xE3\x80\x80";  // ideographic space
}

bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

struct NgramCounts {
    std::size_t match = 0;
    std::size_t total = 0;
};

NgramCounts clipped_ngrams(const std::vector<std::string>& cand,
                           const std::vector<std::string>& ref, int n) {
    NgramCounts c;
    if (static_cast<int>(cand.size()) < n) return c;
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];
    std::map<std::vector<std::string>, std::size_t> cand_counts;
    for (std::size_t i = 0; i + n <= cand.size(); ++i)
        ++cand_counts[std::vector<std::string>(cand.begin() + i, cand.begin() + i + n)];
    for (const auto& [gram, cnt] : cand_counts) {
        c.total += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) c.match += std::min(cnt, it->second);
    }
    return c;
}

double pooled_bleu(const std::vector<NgramCounts>& counts, std::size_t cand_len,
                   std::size_t ref_len, int max_n, Smoothing smoothing,
                   double* bp_out = nullptr) {
    if (cand_len == 0) {
        if (bp_out) *bp_out = 1.0;
        return 0.0;
    }
    double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) /
                                            static_cast<double>(cand_len)));
    if (bp_out) *bp_out = bp;
    double log_sum = 0.0;
    int used = 0;
    for (int n = 1; n <= max_n; ++n) {
        const NgramCounts& c = counts[n - 1];
        if (c.total == 0) continue;  // candidate shorter than n: fold the order out
        double match = static_cast<double>(c.match);
        if (match == 0.0) {
            if (smoothing == Smoothing::AddEps) match = 0.1;
            else return 0.0;
        }
        log_sum += std::log(match / static_cast<double>(c.total));
        ++used;
    }
    if (used == 0) return 0.0;
    return 100.0 * bp * std::exp(log_sum / used);
}

}  // namespace

TokenSequence tokenize(const std::string& text, TokenMode mode) {
    TokenSequence seq;
    seq.mode = mode;
    if (mode == TokenMode::CjkChar) {
        for (const std::string& cp : utf8_codepoints(text)) {
            if (is_space_cp(cp)) continue;
            seq.tokens.push_back(cp);
        }
        return seq;
    }
    std::string lowered = text;
    for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t i = 0;
    while (i < lowered.size()) {
        while (i < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
        std::size_t j = i;
        while (j < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[j]))) ++j;
        if (j > i) {
            std::string word = lowered.substr(i, j - i);
            std::size_t b = 0, e = word.size();
            while (b < e && is_ascii_punct(word[b])) ++b;
            while (e > b && is_ascii_punct(word[e - 1])) --e;
            if (e > b) seq.tokens.push_back(word.substr(b, e - b));
        }
        i = j;
    }
    return seq;
}

double bleu(const TokenSequence& candidate, const TokenSequence& reference, int max_n,
            Smoothing smoothing) {
    if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
    if (reference.empty()) throw std::invalid_argument("bleu: empty reference");
    if (candidate.empty()) return 0.0;
    std::vector<NgramCounts> counts;
    for (int n = 1; n <= max_n; ++n)
        counts.push_back(clipped_ngrams(candidate.tokens, reference.tokens, n));
    return pooled_bleu(counts, candidate.size(), reference.size(), max_n, smoothing);
}

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
    std::size_t m = a.size(), n = b.size();
    std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            if (a.tokens[i - 1] == b.tokens[j - 1]) cur[j] = prev[j - 1] + 1;
            else cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference, double f_beta) {
    if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
    if (candidate.empty()) return 0.0;
    double l = static_cast<double>(lcs_length(candidate, reference));
    double p = l / static_cast<double>(candidate.size());
    double r = l / static_cast<double>(reference.size());
    double b2 = f_beta * f_beta;
    double denom = r + b2 * p;
    if (denom == 0.0) return 0.0;
    return 100.0 * (1.0 + b2) * p * r / denom;
}

ScoreReport corpus_scores(
    const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs, int max_n) {
    if (pairs.empty()) throw std::invalid_argument("corpus_scores: empty pair list");
    std::vector<NgramCounts> pooled(max_n);
    ScoreReport rep;
    double rouge_sum = 0.0;
    for (const auto& [cand, ref] : pairs) {
        if (ref.empty()) throw std::invalid_argument("corpus_scores: empty reference");
        rep.candidate_len += cand.size();
        rep.reference_len += ref.size();
        for (int n = 1; n <= max_n; ++n) {
            NgramCounts c = clipped_ngrams(cand.tokens, ref.tokens, n);
            pooled[n - 1].match += c.match;
            pooled[n - 1].total += c.total;
        }
        rouge_sum += rouge_l(cand, ref);
    }
    for (int k = 1; k <= std::min(max_n, 4); ++k)
        rep.bleu[k - 1] = pooled_bleu(pooled, rep.candidate_len, rep.reference_len, k,
                                      Smoothing::None, k == max_n ? &rep.brevity_penalty : nullptr);
    rep.rouge_l = rouge_sum / static_cast<double>(pairs.size());
    return rep;
}

}  // namespace slt::metrics
