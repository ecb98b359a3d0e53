#pragma once

// BLEU-n and ROUGE-L on a 0-100 scale, with the tokenizers used by both the
// evaluation path and the reinforcement reward.

#include <string>
#include <vector>

namespace slt::metrics {

enum class TokenMode { CjkChar, LatinWord };

struct TokenSequence {
    std::vector<std::string> tokens;
    TokenMode mode = TokenMode::LatinWord;

    bool empty() const { return tokens.empty(); }
    std::size_t size() const { return tokens.size(); }
};

enum class Smoothing { None, AddEps };

struct ScoreReport {
    double bleu[4] = {0, 0, 0, 0};  // BLEU-1..4
    double rouge_l = 0.0;
    double brevity_penalty = 1.0;
    std::size_t candidate_len = 0;
    std::size_t reference_len = 0;
};

// cjk-char: NFC-ish normalization (the synthetic corpus is already composed),
// whitespace dropped, one token per code point. latin-word: lowercase,
// whitespace split, leading/trailing punctuation stripped.
TokenSequence tokenize(const std::string& text, TokenMode mode);

double bleu(const TokenSequence& candidate, const TokenSequence& reference, int max_n = 4,
            Smoothing smoothing = Smoothing::None);

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference,
               double f_beta = 1.0);

// LCS length, exposed for the reward path tests.
std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b);

// Corpus BLEU pools n-gram counts and lengths before the geometric mean;
// ROUGE-L is the unweighted mean of sentence scores.
ScoreReport corpus_scores(
    const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs, int max_n = 4);

}  // namespace slt::metrics
