// Command-line driver: corpus generation, the three training stages, and
// evaluation/scoring utilities.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

#include "slt/harness.hpp"

namespace h = slt::harness;
using nlohmann::json;

namespace {

h::Config make_config(const std::string& config_path, std::int64_t seed_override) {
    h::Config cfg;
    if (!config_path.empty()) cfg = h::load_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    return cfg;
}

void print_scores(const std::string& tag, const slt::metrics::ScoreReport& r) {
    json j{{"split", tag},
           {"bleu1", r.bleu[0]},
           {"bleu2", r.bleu[1]},
           {"bleu3", r.bleu[2]},
           {"bleu4", r.bleu[3]},
           {"rouge_l", r.rouge_l},
           {"brevity_penalty", r.brevity_penalty}};
    std::cout << j.dump() << "\n";
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

const std::vector<h::Example>& pick_split(const h::Corpus& corpus, const std::string& name) {
    if (name == "train") return corpus.train;
    if (name == "dev") return corpus.dev;
    if (name == "test") return corpus.test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"three-stage gesture-to-text translation pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, init_path, log_path, step_dir;
    std::string split = "test", hyp_path, ref_path, mode = "latin";
    std::int64_t seed_override = -1;
    int every = 0;
    bool no_cues = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--seed", seed_override, "override config seed");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic corpus");
    add_common(gen);
    gen->add_option("--out", data_dir, "corpus directory")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "contrastive + translation pre-training");
    add_common(pre);
    pre->add_option("--data", data_dir, "corpus directory")->required();
    pre->add_option("--out", out_path, "checkpoint path")->required();
    pre->add_option("--log", log_path, "json-lines run log");

    CLI::App* sft = app.add_subcommand("sft", "supervised fine-tuning with adapters");
    add_common(sft);
    sft->add_option("--data", data_dir, "corpus directory")->required();
    sft->add_option("--init", init_path, "pretrain checkpoint")->required();
    sft->add_option("--out", out_path, "checkpoint path")->required();
    sft->add_option("--log", log_path, "json-lines run log");
    sft->add_option("--step-dir", step_dir, "directory for periodic step checkpoints");

    CLI::App* rft = app.add_subcommand("rft", "grpo reinforcement fine-tuning");
    add_common(rft);
    rft->add_option("--data", data_dir, "corpus directory")->required();
    rft->add_option("--init", init_path, "merged sft checkpoint")->required();
    rft->add_option("--out", out_path, "checkpoint path")->required();
    rft->add_option("--log", log_path, "json-lines run log");
    rft->add_option("--step-dir", step_dir, "directory for periodic checkpoints");

    CLI::App* ev = app.add_subcommand("eval", "beam-search evaluation of a checkpoint");
    add_common(ev);
    ev->add_option("--data", data_dir, "corpus directory")->required();
    ev->add_option("--ckpt", init_path, "checkpoint path (or directory with --every)")
        ->required();
    ev->add_option("--split", split, "train|dev|test");
    ev->add_option("--out", out_path, "per-sentence tsv (or learning-curve csv with --every)");
    ev->add_option("--every", every, "evaluate every n-th checkpoint in --ckpt directory");
    ev->add_flag("--no-cues", no_cues, "drop face/hand cue channels at fusion");

    CLI::App* sc = app.add_subcommand("score", "score hypothesis file against references");
    sc->add_option("--hyp", hyp_path, "hypothesis file, one sentence per line")->required();
    sc->add_option("--ref", ref_path, "reference file, one sentence per line")->required();
    sc->add_option("--mode", mode, "latin|cjk");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            h::Config cfg = make_config(config_path, seed_override);
            h::Corpus corpus = h::generate_corpus(cfg);
            h::write_corpus(corpus, data_dir);
            std::cout << json{{"train", corpus.train.size()},
                              {"dev", corpus.dev.size()},
                              {"test", corpus.test.size()},
                              {"vocab", corpus.text_words.size()}}
                             .dump()
                      << "\n";
        } else if (*pre || *sft || *rft) {
            h::Config cfg = make_config(config_path, seed_override);
            h::Corpus corpus = h::load_corpus(data_dir);
            h::StageResult res;
            if (*pre) {
                res = h::run_pretrain(cfg, corpus);
            } else {
                h::Checkpoint init = h::load_checkpoint(init_path);
                h::fs::path sd = step_dir;
                const h::fs::path* sdp = step_dir.empty() ? nullptr : &sd;
                if (!step_dir.empty()) h::fs::create_directories(sd);
                res = *sft ? h::run_sft(cfg, corpus, init, sdp)
                           : h::run_rft(cfg, corpus, init, sdp);
            }
            h::save_checkpoint(res.checkpoint, out_path);
            if (!log_path.empty()) h::append_runlog(res.log, log_path);
            std::cout << json{{"checkpoint", out_path},
                              {"best_dev_bleu4", res.best_dev_bleu4}}
                             .dump()
                      << "\n";
        } else if (*ev) {
            h::Config cfg = make_config(config_path, seed_override);
            h::Corpus corpus = h::load_corpus(data_dir);
            slt::policy::Vocabulary vocab = h::corpus_vocabulary(corpus);
            const std::vector<h::Example>& examples = pick_split(corpus, split);
            if (every > 0) {
                std::vector<h::fs::path> ckpts;
                for (const auto& e : h::fs::directory_iterator(init_path))
                    if (e.path().extension() == ".rvck") ckpts.push_back(e.path());
                std::sort(ckpts.begin(), ckpts.end());
                std::string csv = "checkpoint,bleu4,rouge_l\n";
                for (std::size_t i = 0; i < ckpts.size(); i += every) {
                    h::Checkpoint c = h::load_checkpoint(ckpts[i]);
                    h::EvalResult r = h::evaluate(c, cfg, examples, vocab, !no_cues);
                    csv += ckpts[i].filename().string() + "," +
                           std::to_string(r.corpus.bleu[3]) + "," +
                           std::to_string(r.corpus.rouge_l) + "\n";
                }
                if (!out_path.empty()) h::atomic_write(out_path, csv);
                else std::cout << csv;
            } else {
                h::Checkpoint c = h::load_checkpoint(init_path);
                bool cues = !no_cues && c.stage != h::Stage::Pretrain;
                h::EvalResult r = h::evaluate(c, cfg, examples, vocab, cues);
                if (!out_path.empty()) h::write_eval_tsv(r, out_path);
                print_scores(split, r.corpus);
            }
        } else if (*sc) {
            std::vector<std::string> hyps = read_lines(hyp_path);
            std::vector<std::string> refs = read_lines(ref_path);
            if (hyps.size() != refs.size())
                throw std::runtime_error("hypothesis/reference line counts differ");
            slt::metrics::TokenMode tm = mode == "cjk" ? slt::metrics::TokenMode::CjkChar
                                                       : slt::metrics::TokenMode::LatinWord;
            std::vector<std::pair<slt::metrics::TokenSequence, slt::metrics::TokenSequence>>
                pairs;
            for (std::size_t i = 0; i < hyps.size(); ++i)
                pairs.push_back({slt::metrics::tokenize(hyps[i], tm),
                                 slt::metrics::tokenize(refs[i], tm)});
            print_scores("score", slt::metrics::corpus_scores(pairs));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
