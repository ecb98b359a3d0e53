#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "slt/harness.hpp"

using namespace slt;
using namespace slt::harness;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.seed = 5;
    cfg.train_size = 20;
    cfg.dev_size = 6;
    cfg.test_size = 6;
    cfg.gesture_vocab = 8;
    cfg.text_vocab = 12;
    cfg.rule_count = 10;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path scratch(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / "slt-harness-tests";
    fs::create_directories(dir);
    return dir / leaf;
}

}  // namespace

TEST_CASE("config parsing") {
    Config cfg = parse_config("seed = 9\nalpha = 0.25\n# comment\nratio_level = sequence\n"
                              "merge_after_sft = false\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.alpha == 0.25);
    CHECK(cfg.ratio_level == "sequence");
    CHECK(!cfg.merge_after_sft);
    CHECK(cfg.beam_width == 5);      // untouched defaults
    CHECK(cfg.max_length == 300);
    CHECK(cfg.lambda == 0.5);
    CHECK(cfg.group_size == 8);
    CHECK(cfg.epochs_pretrain == 200);
    CHECK(cfg.epochs_sft == 40);
    CHECK(cfg.epochs_rft == 2);

    CHECK_THROWS(parse_config("unknown_key = 1\n"));
    CHECK_THROWS(parse_config("seed 9\n"));

    Config rt = config_from_json(config_to_json(cfg));
    CHECK(rt.seed == cfg.seed);
    CHECK(rt.alpha == cfg.alpha);
    CHECK(rt.ratio_level == cfg.ratio_level);
    CHECK(rt.merge_after_sft == cfg.merge_after_sft);
}

TEST_CASE("corpus generation is deterministic and sized") {
    Config cfg = tiny_config();
    Corpus a = generate_corpus(cfg);
    Corpus b = generate_corpus(cfg);
    CHECK(a.train.size() == 20);
    CHECK(a.dev.size() == 6);
    CHECK(a.test.size() == 6);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].reference == b.train[i].reference);
        CHECK(a.train[i].skeleton.frames.data == b.train[i].skeleton.frames.data);
    }
    for (const Example& ex : a.train) {
        CHECK(!ex.reference.empty());
        CHECK(ex.skeleton.frame_count() == ex.face.frame_count());
        CHECK(ex.skeleton.frame_count() == ex.hand.frame_count());
    }

    Config bad = cfg;
    bad.rule_count = 1000000;
    CHECK_THROWS(generate_corpus(bad));
}

TEST_CASE("monotone grammar when reordering and collapses are off") {
    Config cfg = tiny_config();
    cfg.reorder_prob = 0.0;
    cfg.many_to_one_fraction = 0.0;
    cfg.ambiguous_fraction = 0.0;
    Corpus c = generate_corpus(cfg);
    for (const Example& ex : c.train) {
        std::string expect;
        for (const std::string& g : ex.gestures) {
            int gi = std::stoi(g.substr(1));
            for (const std::string& w : c.grammar.phrase[gi])
                expect += (expect.empty() ? "" : " ") + w;
        }
        CHECK(ex.reference == expect);
    }
}

TEST_CASE("corpus files round-trip bit-exactly") {
    Config cfg = tiny_config();
    Corpus c = generate_corpus(cfg);
    fs::path dir = scratch("corpus");
    fs::remove_all(dir);
    write_corpus(c, dir);
    std::string bytes1 = slurp(dir / "train.feat");
    Corpus loaded = load_corpus(dir);
    for (std::size_t i = 0; i < c.train.size(); ++i) {
        CHECK(loaded.train[i].id == c.train[i].id);
        CHECK(loaded.train[i].reference == c.train[i].reference);
        CHECK(loaded.train[i].skeleton.frames.data == c.train[i].skeleton.frames.data);
        CHECK(loaded.train[i].face.detected == c.train[i].face.detected);
    }
    write_features(loaded.train, dir / "rewrite.feat");
    CHECK(slurp(dir / "rewrite.feat") == bytes1);
    CHECK(bytes1.substr(0, 4) == "RVLF");
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    Config cfg = tiny_config();
    std::mt19937_64 rng(cfg.seed);
    ParamMap params = init_model(cfg, 15, rng);
    Checkpoint ckpt;
    ckpt.stage = Stage::Sft;
    ckpt.params = params;
    ckpt.config_json = config_to_json(cfg);
    ckpt.rng_state = "12345 67";
    ckpt.merged = true;
    fs::path p1 = scratch("ckpt1.rvck");
    fs::path p2 = scratch("ckpt2.rvck");
    save_checkpoint(ckpt, p1);
    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.stage == Stage::Sft);
    CHECK(loaded.merged);
    CHECK(loaded.rng_state == ckpt.rng_state);
    CHECK(loaded.params.size() == params.size());
    for (const auto& [name, t] : params) CHECK(loaded.params.at(name).data == t.data);
    save_checkpoint(loaded, p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1).substr(0, 4) == "RVCK");
}

TEST_CASE("runlog is json-lines") {
    fs::path p = scratch("run.log");
    fs::remove(p);
    RunLog log;
    RunRecord r;
    r.stage = "sft";
    r.step = 3;
    r.loss = 1.5;
    log.push_back(r);
    append_runlog(log, p);
    append_runlog(log, p);
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        CHECK(line.find("\"stage\":\"sft\"") != std::string::npos);
        ++n;
    }
    CHECK(n == 2);
}

TEST_CASE("example_prefix honors the cue switch and repairs detection gaps") {
    Config cfg = tiny_config();
    Corpus c = generate_corpus(cfg);
    std::mt19937_64 rng(cfg.seed);
    policy::Vocabulary vocab = corpus_vocabulary(c);
    ParamMap params = init_model(cfg, vocab.size(), rng);
    const Example& ex = c.train[0];
    Tensor with = example_prefix(params, cfg, ex, true);
    Tensor without = example_prefix(params, cfg, ex, false);
    CHECK(with.rows() == ex.skeleton.frame_count());
    CHECK(with.cols() == cfg.d_model);
    double diff = 0;
    for (std::size_t i = 0; i < with.data.size(); ++i)
        diff += std::abs(with.data[i] - without.data[i]);
    CHECK(diff > 1e-9);
    // deterministic
    Tensor again = example_prefix(params, cfg, ex, true);
    CHECK(again.data == with.data);
}

TEST_CASE("overfit a 10-example corpus to BLEU-4 100 via sft") {
    Config cfg = tiny_config();
    cfg.train_size = 10;
    cfg.dev_size = 2;
    cfg.test_size = 2;
    cfg.scale = 1.0;
    cfg.epochs_pretrain = 30;
    cfg.epochs_sft = 120;
    cfg.batch_size = 5;
    cfg.max_length = 40;
    cfg.detect_drop_face = 0.0;
    cfg.detect_drop_hand = 0.0;
    Corpus c = generate_corpus(cfg);
    StageResult pre = run_pretrain(cfg, c);
    StageResult sft = run_sft(cfg, c, pre.checkpoint);
    policy::Vocabulary vocab = corpus_vocabulary(c);
    EvalResult train_eval = evaluate(sft.checkpoint, cfg, c.train, vocab, true);
    CHECK(train_eval.corpus.bleu[3] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(sft.checkpoint.merged);

    // eval TSV is deterministic
    fs::path t1 = scratch("eval1.tsv");
    fs::path t2 = scratch("eval2.tsv");
    write_eval_tsv(train_eval, t1);
    write_eval_tsv(evaluate(sft.checkpoint, cfg, c.train, vocab, true), t2);
    CHECK(slurp(t1) == slurp(t2));

    // stage gating: rft refuses unmerged checkpoints
    Checkpoint fake = sft.checkpoint;
    fake.merged = false;
    CHECK_THROWS(run_rft(cfg, c, fake, nullptr));
    CHECK_THROWS(run_rft(cfg, c, pre.checkpoint, nullptr));
}
