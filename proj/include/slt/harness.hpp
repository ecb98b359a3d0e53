#pragma once

// Synthetic-task generation, configuration, three-stage orchestration
// (pretrain -> sft -> rft), checkpoint persistence, and evaluation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "slt/alignment.hpp"
#include "slt/features.hpp"
#include "slt/fusion.hpp"
#include "slt/grpo.hpp"
#include "slt/metrics.hpp"
#include "slt/policy.hpp"

namespace slt::harness {

namespace fs = std::filesystem;

// ---- configuration ----------------------------------------------------------
// Flat `key = value` file with '#' comments; unknown keys are rejected.

struct Config {
    std::uint64_t seed = 1;
    double scale = 0.15;  // shrinks the 200/40/2 stage epochs for desk runs

    // corpus
    int gesture_vocab = 20;
    int text_vocab = 30;
    int rule_count = 20;
    double reorder_prob = 0.1;
    double many_to_one_fraction = 0.15;
    double ambiguous_fraction = 0.3;
    double noise_std_skeleton = 0.15;
    double noise_std_face = 0.15;
    double noise_std_hand = 0.15;
    double detect_drop_face = 0.08;
    double detect_drop_hand = 0.08;
    int frames_per_gesture = 2;
    int min_gestures = 3;
    int max_gestures = 5;
    int train_size = 500;
    int dev_size = 64;
    int test_size = 64;
    int d_feat = 16;

    // model
    int embed_dim = 16;  // contrastive D
    int d_model = 32;
    int d_ff = 64;
    double init_tau = 0.1;
    double tau_prime = 0.07;
    double beta_dir = 0.5;

    // fusion
    double alpha = 1.0;
    double beta_hand = 1.0;

    // stage schedules (paper-shaped 200/40/2, scaled)
    int epochs_pretrain = 200;
    int epochs_sft = 40;
    int epochs_rft = 2;
    int batch_size = 8;
    double lr_pretrain = 0.05;
    double wd_pretrain = 0.001;
    double lr_sft_llm = 0.01;
    double lr_sft_proj = 0.005;
    double lr_rft = 0.01;

    // adapters
    int sft_rank = 16;
    double sft_scale = 32.0;
    double sft_dropout = 0.0;
    int rft_rank = 16;
    double rft_scale = 32.0;
    double rft_dropout = 0.0;
    bool merge_after_sft = true;

    // reward / grpo
    double lambda = 0.5;
    bool pad_short_targets = false;
    int group_size = 8;
    double epsilon_clip = 0.2;
    double kl_coefficient = 0.04;
    double eps_std = 1e-8;
    std::string ratio_level = "token";  // or "sequence"
    double sample_temperature = 1.0;

    // decoding
    int beam_width = 5;
    int max_length = 300;

    int checkpoint_every = 0;  // step checkpoints for learning curves; 0 = off

    int scaled_epochs(int full) const;
};

Config load_config(const fs::path& path);          // defaults + overrides
Config parse_config(const std::string& text);
std::string config_to_json(const Config& c);
Config config_from_json(const std::string& json);

// ---- corpus -----------------------------------------------------------------

struct Example {
    std::string id;
    std::vector<std::string> gestures;
    CueFeatureSequence skeleton, face, hand;
    std::string reference;
};

struct Grammar {
    // gesture -> phrase (variant 0), and variant-1 phrase for ambiguous ones
    std::vector<std::vector<std::string>> phrase;
    std::vector<std::vector<std::string>> phrase_alt;
    std::vector<int> variant_channel;  // -1 none, 0 face, 1 hand
};

struct Corpus {
    std::vector<Example> train, dev, test;
    std::vector<std::string> text_words;  // corpus vocabulary, sorted
    Grammar grammar;
};

Corpus generate_corpus(const Config& cfg);
void write_corpus(const Corpus& corpus, const fs::path& dir);
Corpus load_corpus(const fs::path& dir);

// sidecar binary (magic RVLF) for one split
void write_features(const std::vector<Example>& split, const fs::path& path);
void read_features(std::vector<Example>& split, const fs::path& path);

// ---- checkpoints ------------------------------------------------------------

enum class Stage : std::uint8_t { Pretrain = 0, Sft = 1, Rft = 2 };

struct Checkpoint {
    Stage stage = Stage::Pretrain;
    ParamMap params;           // full model incl. adapters as lora.{A,B}.<target>
    std::string config_json;   // config snapshot + merged flag
    std::string rng_state;
    bool merged = false;
};

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);  // atomic, bit-exact
Checkpoint load_checkpoint(const fs::path& path);

// ---- pipeline ---------------------------------------------------------------

struct RunRecord {
    std::string stage;
    int step = 0;
    double loss = 0.0;
    double reward_mean = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double wall_ms = 0.0;
};

using RunLog = std::vector<RunRecord>;
void append_runlog(const RunLog& log, const fs::path& path);  // JSON lines

struct StageResult {
    Checkpoint checkpoint;
    RunLog log;
    double best_dev_bleu4 = 0.0;
};

// Model assembly shared by the stage runners.
policy::Vocabulary corpus_vocabulary(const Corpus& corpus);
ParamMap init_model(const Config& cfg, int vocab_size, std::mt19937_64& rng);

// Encoded + fused + projected conditioning rows for one example.
Tensor example_prefix(const ParamMap& params, const Config& cfg, const Example& ex,
                      bool use_cues);

StageResult run_pretrain(const Config& cfg, const Corpus& corpus);
StageResult run_sft(const Config& cfg, const Corpus& corpus, const Checkpoint& pretrain,
                    const fs::path* step_ckpt_dir = nullptr);
StageResult run_rft(const Config& cfg, const Corpus& corpus, const Checkpoint& sft,
                    const fs::path* step_ckpt_dir = nullptr);

struct EvalResult {
    metrics::ScoreReport corpus;
    // id, reference, hypothesis, sentence bleu4, sentence rouge_l
    std::vector<std::tuple<std::string, std::string, std::string, double, double>> rows;
};

EvalResult evaluate(const Checkpoint& ckpt, const Config& cfg,
                    const std::vector<Example>& split, const policy::Vocabulary& vocab,
                    bool use_cues = true);
void write_eval_tsv(const EvalResult& r, const fs::path& path);

// dev-batch retrieval diagnostic for the contrastive stage
double retrieval_top1(const ParamMap& params, const Config& cfg,
                      const std::vector<Example>& split, const policy::Vocabulary& vocab,
                      int batch = 32);

void atomic_write(const fs::path& path, const std::string& bytes);

}  // namespace slt::harness
