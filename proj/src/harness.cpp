#include "slt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slt/optim.hpp"

namespace slt::harness {

using nlohmann::json;

// ---- configuration ----------------------------------------------------------

namespace {

// Single field table shared by the parser and the JSON round trip.
template <typename F>
void for_each_field(Config& c, F&& f) {
    f("seed", c.seed);
    f("scale", c.scale);
    f("gesture_vocab", c.gesture_vocab);
    f("text_vocab", c.text_vocab);
    f("rule_count", c.rule_count);
    f("reorder_prob", c.reorder_prob);
    f("many_to_one_fraction", c.many_to_one_fraction);
    f("ambiguous_fraction", c.ambiguous_fraction);
    f("noise_std_skeleton", c.noise_std_skeleton);
    f("noise_std_face", c.noise_std_face);
    f("noise_std_hand", c.noise_std_hand);
    f("detect_drop_face", c.detect_drop_face);
    f("detect_drop_hand", c.detect_drop_hand);
    f("frames_per_gesture", c.frames_per_gesture);
    f("min_gestures", c.min_gestures);
    f("max_gestures", c.max_gestures);
    f("train_size", c.train_size);
    f("dev_size", c.dev_size);
    f("test_size", c.test_size);
    f("d_feat", c.d_feat);
    f("embed_dim", c.embed_dim);
    f("d_model", c.d_model);
    f("d_ff", c.d_ff);
    f("init_tau", c.init_tau);
    f("tau_prime", c.tau_prime);
    f("beta_dir", c.beta_dir);
    f("alpha", c.alpha);
    f("beta_hand", c.beta_hand);
    f("epochs_pretrain", c.epochs_pretrain);
    f("epochs_sft", c.epochs_sft);
    f("epochs_rft", c.epochs_rft);
    f("batch_size", c.batch_size);
    f("lr_pretrain", c.lr_pretrain);
    f("wd_pretrain", c.wd_pretrain);
    f("lr_sft_llm", c.lr_sft_llm);
    f("lr_sft_proj", c.lr_sft_proj);
    f("lr_rft", c.lr_rft);
    f("sft_rank", c.sft_rank);
    f("sft_scale", c.sft_scale);
    f("sft_dropout", c.sft_dropout);
    f("rft_rank", c.rft_rank);
    f("rft_scale", c.rft_scale);
    f("rft_dropout", c.rft_dropout);
    f("merge_after_sft", c.merge_after_sft);
    f("lambda", c.lambda);
    f("pad_short_targets", c.pad_short_targets);
    f("group_size", c.group_size);
    f("epsilon_clip", c.epsilon_clip);
    f("kl_coefficient", c.kl_coefficient);
    f("eps_std", c.eps_std);
    f("ratio_level", c.ratio_level);
    f("sample_temperature", c.sample_temperature);
    f("beam_width", c.beam_width);
    f("max_length", c.max_length);
    f("checkpoint_every", c.checkpoint_every);
}

void set_field_from_string(const std::string& key, const std::string& value, Config& c) {
    bool found = false;
    auto apply = [&](const char* name, auto& ref) {
        if (found || key != name) return;
        found = true;
        using T = std::decay_t<decltype(ref)>;
        if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") ref = true;
            else if (value == "false" || value == "0") ref = false;
            else throw std::invalid_argument("config: bad bool for " + key + ": " + value);
        } else if constexpr (std::is_same_v<T, std::string>) {
            ref = value;
        } else if constexpr (std::is_integral_v<T>) {
            ref = static_cast<T>(std::stoll(value));
        } else {
            ref = std::stod(value);
        }
    };
    for_each_field(c, apply);
    if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

int Config::scaled_epochs(int full) const {
    return std::max(1, static_cast<int>(std::lround(full * scale)));
}

Config parse_config(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        set_field_from_string(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), c);
    }
    return c;
}

Config load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_json(const Config& c) {
    json j;
    Config& mut = const_cast<Config&>(c);
    for_each_field(mut, [&](const char* name, auto& ref) { j[name] = ref; });
    return j.dump();
}

Config config_from_json(const std::string& text) {
    json j = json::parse(text);
    Config c;
    for_each_field(c, [&](const char* name, auto& ref) {
        if (j.contains(name)) ref = j.at(name).get<std::decay_t<decltype(ref)>>();
    });
    return c;
}

// ---- corpus generation ------------------------------------------------------

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor randn_f32(Shape s, std::mt19937_64& rng, double stddev) {
    Tensor t = Tensor::randn(std::move(s), rng, stddev);
    for (double& v : t.data) v = quantize_f32(v);
    return t;
}

constexpr int kFrameCap = 300;

struct GestureBank {
    std::vector<Tensor> skel, face, hand, variant_dir;
};

Example make_example(const Config& cfg, const Corpus& corpus, const GestureBank& bank,
                     const std::string& id, std::mt19937_64& rng) {
    const Grammar& g = corpus.grammar;
    Example ex;
    ex.id = id;
    int k = uniform_int(rng, cfg.min_gestures, cfg.max_gestures);
    std::vector<int> gestures, variants;
    for (int i = 0; i < k; ++i) {
        int gi = uniform_int(rng, 0, cfg.gesture_vocab - 1);
        gestures.push_back(gi);
        variants.push_back(g.variant_channel[gi] >= 0 ? uniform_int(rng, 0, 1) : 0);
        ex.gestures.push_back("g" + std::to_string(gi));
    }

    // phrases in gesture order, then local adjacent reordering
    std::vector<std::vector<std::string>> phrases;
    for (int i = 0; i < k; ++i)
        phrases.push_back(variants[i] ? g.phrase_alt[gestures[i]] : g.phrase[gestures[i]]);
    for (int i = 0; i + 1 < k; ++i)
        if (uniform01(rng) < cfg.reorder_prob) std::swap(phrases[i], phrases[i + 1]);
    std::vector<std::string> words;
    for (const auto& ph : phrases) words.insert(words.end(), ph.begin(), ph.end());
    std::string ref;
    for (std::size_t i = 0; i < words.size(); ++i) ref += (i ? " " : "") + words[i];
    ex.reference = ref;

    int m = std::min(k * cfg.frames_per_gesture, kFrameCap);
    int d = cfg.d_feat;
    ex.skeleton.frames = Tensor({m, d});
    ex.face.frames = Tensor({m, d});
    ex.hand.frames = Tensor({m, d});
    ex.skeleton.channel = CueChannel::Skeleton;
    ex.face.channel = CueChannel::Face;
    ex.hand.channel = CueChannel::Hand;
    ex.skeleton.valid_len = ex.face.valid_len = ex.hand.valid_len = m;
    ex.face.detected.assign(m, true);
    ex.hand.detected.assign(m, true);

    int frame = 0;
    for (int i = 0; i < k && frame < m; ++i) {
        int gi = gestures[i];
        double sign = variants[i] ? 1.0 : -1.0;
        for (int f = 0; f < cfg.frames_per_gesture && frame < m; ++f, ++frame) {
            for (int j = 0; j < d; ++j) {
                double skel = bank.skel[gi].data[j] +
                              cfg.noise_std_skeleton * quantize_f32(uniform01(rng) * 2 - 1);
                double face = bank.face[gi].data[j] +
                              cfg.noise_std_face * quantize_f32(uniform01(rng) * 2 - 1);
                double hand = bank.hand[gi].data[j] +
                              cfg.noise_std_hand * quantize_f32(uniform01(rng) * 2 - 1);
                // the disambiguating signal lives only in its exclusive channel
                if (g.variant_channel[gi] == 0)
                    face += sign * 1.5 * bank.variant_dir[gi].data[j];
                else if (g.variant_channel[gi] == 1)
                    hand += sign * 1.5 * bank.variant_dir[gi].data[j];
                ex.skeleton.frames.at(frame, j) = quantize_f32(skel);
                ex.face.frames.at(frame, j) = quantize_f32(face);
                ex.hand.frames.at(frame, j) = quantize_f32(hand);
            }
            if (uniform01(rng) < cfg.detect_drop_face) ex.face.detected[frame] = false;
            if (uniform01(rng) < cfg.detect_drop_hand) ex.hand.detected[frame] = false;
        }
    }
    // the repair path needs at least one detected frame per stream
    if (std::none_of(ex.face.detected.begin(), ex.face.detected.end(), [](bool b) { return b; }))
        ex.face.detected[0] = true;
    if (std::none_of(ex.hand.detected.begin(), ex.hand.detected.end(), [](bool b) { return b; }))
        ex.hand.detected[0] = true;
    return ex;
}

}  // namespace

Corpus generate_corpus(const Config& cfg) {
    if (cfg.train_size < 1 || cfg.dev_size < 1 || cfg.test_size < 1)
        throw std::invalid_argument("generate_corpus: split sizes must be >= 1");
    if (cfg.min_gestures < 1 || cfg.max_gestures < cfg.min_gestures)
        throw std::invalid_argument("generate_corpus: bad gesture count range");
    long long max_rules =
        static_cast<long long>(cfg.text_vocab) + static_cast<long long>(cfg.text_vocab) * cfg.text_vocab;
    if (cfg.rule_count > max_rules)
        throw std::invalid_argument("generate_corpus: more rules than token pairs available");

    std::mt19937_64 rng(cfg.seed);
    Corpus corpus;
    for (int i = 0; i < cfg.text_vocab; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "w%03d", i);
        corpus.text_words.push_back(buf);
    }

    // distinct phrase rules of 1-2 words
    std::vector<std::vector<std::string>> rules;
    std::set<std::vector<std::string>> seen;
    int want = std::min<long long>(cfg.rule_count, max_rules);
    int guard = 0;
    while (static_cast<int>(rules.size()) < want) {
        if (++guard > 100000)
            throw std::invalid_argument("generate_corpus: could not draw distinct rules");
        int len = uniform_int(rng, 1, 2);
        std::vector<std::string> ph;
        for (int i = 0; i < len; ++i)
            ph.push_back(corpus.text_words[uniform_int(rng, 0, cfg.text_vocab - 1)]);
        if (seen.insert(ph).second) rules.push_back(std::move(ph));
    }

    Grammar& g = corpus.grammar;
    g.phrase.resize(cfg.gesture_vocab);
    g.phrase_alt.resize(cfg.gesture_vocab);
    g.variant_channel.assign(cfg.gesture_vocab, -1);
    for (int gi = 0; gi < cfg.gesture_vocab; ++gi)
        g.phrase[gi] = rules[gi % rules.size()];
    // many-to-one collapses: a fraction of gestures reuse an earlier phrase
    int collapse = static_cast<int>(cfg.many_to_one_fraction * cfg.gesture_vocab);
    for (int i = 0; i < collapse && cfg.gesture_vocab > 1; ++i) {
        int dst = uniform_int(rng, 1, cfg.gesture_vocab - 1);
        g.phrase[dst] = g.phrase[uniform_int(rng, 0, dst - 1)];
    }
    // ambiguous gestures carry a second phrase selected by a hidden variant
    // bit that only the face (even) or hand (odd) channel encodes
    int ambiguous = static_cast<int>(cfg.ambiguous_fraction * cfg.gesture_vocab);
    for (int i = 0; i < ambiguous; ++i) {
        int gi = i;  // deterministic choice keeps the ablation reproducible
        g.variant_channel[gi] = i % 2;
        g.phrase_alt[gi] = rules[(gi + 7) % rules.size()];
        if (g.phrase_alt[gi] == g.phrase[gi]) g.phrase_alt[gi] = rules[(gi + 13) % rules.size()];
    }
    for (int gi = 0; gi < cfg.gesture_vocab; ++gi)
        if (g.variant_channel[gi] < 0) g.phrase_alt[gi] = g.phrase[gi];

    GestureBank bank;
    for (int gi = 0; gi < cfg.gesture_vocab; ++gi) {
        bank.skel.push_back(randn_f32({1, cfg.d_feat}, rng, 1.0));
        bank.face.push_back(randn_f32({1, cfg.d_feat}, rng, 1.0));
        bank.hand.push_back(randn_f32({1, cfg.d_feat}, rng, 1.0));
        bank.variant_dir.push_back(randn_f32({1, cfg.d_feat}, rng, 1.0));
    }

    auto fill = [&](std::vector<Example>& split, const char* tag, int n) {
        for (int i = 0; i < n; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "%s-%04d", tag, i);
            split.push_back(make_example(cfg, corpus, bank, id, rng));
        }
    };
    fill(corpus.train, "train", cfg.train_size);
    fill(corpus.dev, "dev", cfg.dev_size);
    fill(corpus.test, "test", cfg.test_size);
    return corpus;
}

// ---- corpus files -----------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("truncated binary file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void atomic_write(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    fs::rename(tmp, path);
}

void write_features(const std::vector<Example>& split, const fs::path& path) {
    std::string out;
    out += "RVLF";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(split.size()));
    for (const Example& ex : split) {
        put_str(out, ex.id);
        int m = ex.skeleton.frame_count(), d = ex.skeleton.feature_dim();
        put_u32(out, static_cast<std::uint32_t>(m));
        put_u32(out, static_cast<std::uint32_t>(d));
        for (const Tensor* t : {&ex.skeleton.frames, &ex.face.frames, &ex.hand.frames})
            for (double v : t->data) put_f32(out, static_cast<float>(v));
        for (const CueFeatureSequence* s : {&ex.face, &ex.hand})
            for (int i = 0; i < m; ++i) out.push_back(s->detected[i] ? 1 : 0);
    }
    atomic_write(path, out);
}

void read_features(std::vector<Example>& split, const fs::path& path) {
    std::string buf = read_file(path);
    Reader r{buf};
    if (buf.size() < 4 || buf.substr(0, 4) != "RVLF")
        throw std::runtime_error("bad magic in " + path.string());
    r.pos = 4;
    std::uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error("unsupported feature file version");
    std::uint32_t count = r.u32();
    if (count != split.size())
        throw std::runtime_error("feature file example count mismatch: file " +
                                 std::to_string(count) + ", tsv " + std::to_string(split.size()));
    for (Example& ex : split) {
        std::string id = r.str();
        if (id != ex.id) throw std::runtime_error("feature/tsv id mismatch at " + ex.id);
        int m = static_cast<int>(r.u32());
        int d = static_cast<int>(r.u32());
        for (CueFeatureSequence* s : {&ex.skeleton, &ex.face, &ex.hand}) {
            s->frames = Tensor({m, d});
            s->valid_len = m;
            for (double& v : s->frames.data) v = static_cast<double>(r.f32());
        }
        ex.skeleton.channel = CueChannel::Skeleton;
        ex.face.channel = CueChannel::Face;
        ex.hand.channel = CueChannel::Hand;
        for (CueFeatureSequence* s : {&ex.face, &ex.hand}) {
            s->detected.resize(m);
            for (int i = 0; i < m; ++i) s->detected[i] = r.u8() != 0;
        }
    }
}

namespace {

void write_split(const std::vector<Example>& split, const fs::path& dir, const std::string& name) {
    std::string tsv;
    for (const Example& ex : split) {
        std::string gest;
        for (std::size_t i = 0; i < ex.gestures.size(); ++i)
            gest += (i ? " " : "") + ex.gestures[i];
        tsv += ex.id + "\t" + gest + "\t" + ex.reference + "\n";
    }
    atomic_write(dir / (name + ".tsv"), tsv);
    write_features(split, dir / (name + ".feat"));
}

std::vector<Example> read_split(const fs::path& dir, const std::string& name) {
    std::vector<Example> split;
    std::ifstream in(dir / (name + ".tsv"));
    if (!in) throw std::runtime_error("cannot open " + (dir / (name + ".tsv")).string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("malformed tsv line: " + line);
        Example ex;
        ex.id = line.substr(0, t1);
        std::istringstream gs(line.substr(t1 + 1, t2 - t1 - 1));
        std::string w;
        while (gs >> w) ex.gestures.push_back(w);
        ex.reference = line.substr(t2 + 1);
        split.push_back(std::move(ex));
    }
    read_features(split, dir / (name + ".feat"));
    return split;
}

}  // namespace

void write_corpus(const Corpus& corpus, const fs::path& dir) {
    fs::create_directories(dir);
    write_split(corpus.train, dir, "train");
    write_split(corpus.dev, dir, "dev");
    write_split(corpus.test, dir, "test");
    std::string vocab;
    for (const std::string& w : corpus.text_words) vocab += w + "\n";
    atomic_write(dir / "vocab.txt", vocab);
}

Corpus load_corpus(const fs::path& dir) {
    Corpus corpus;
    corpus.train = read_split(dir, "train");
    corpus.dev = read_split(dir, "dev");
    corpus.test = read_split(dir, "test");
    std::ifstream in(dir / "vocab.txt");
    if (!in) throw std::runtime_error("cannot open " + (dir / "vocab.txt").string());
    std::string w;
    while (std::getline(in, w))
        if (!w.empty()) corpus.text_words.push_back(w);
    return corpus;
}

// ---- checkpoints ------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::string out;
    out += "RVCK";
    put_u32(out, 1);
    out.push_back(static_cast<char>(ckpt.stage));
    put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        put_str(out, name);
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
        for (double v : t.data) put_f64(out, v);
    }
    json meta;
    meta["merged"] = ckpt.merged;
    meta["config"] = json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
    put_str(out, meta.dump());
    put_str(out, ckpt.rng_state);
    atomic_write(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::string buf = read_file(path);
    if (buf.size() < 4 || buf.substr(0, 4) != "RVCK")
        throw std::runtime_error("bad checkpoint magic in " + path.string());
    Reader r{buf};
    r.pos = 4;
    std::uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.stage = static_cast<Stage>(r.u8());
    std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.u32()));
        Tensor t(shape);
        for (double& v : t.data) v = r.f64();
        ckpt.params[name] = std::move(t);
    }
    json meta = json::parse(r.str());
    ckpt.merged = meta.value("merged", false);
    ckpt.config_json = meta.at("config").dump();
    ckpt.rng_state = r.str();
    return ckpt;
}

void append_runlog(const RunLog& log, const fs::path& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const RunRecord& r : log) {
        json j{{"stage", r.stage},     {"step", r.step},
               {"loss", r.loss},       {"reward_mean", r.reward_mean},
               {"bleu4", r.bleu4},     {"rouge_l", r.rouge_l},
               {"wall_ms", r.wall_ms}};
        out << j.dump() << "\n";
    }
}

// ---- model assembly ---------------------------------------------------------

policy::Vocabulary corpus_vocabulary(const Corpus& corpus) {
    return policy::Vocabulary::build(corpus.text_words);
}

ParamMap init_model(const Config& cfg, int vocab_size, std::mt19937_64& rng) {
    ParamMap p;
    ParamMap enc = alignment::init_encoder("enc", cfg.d_feat, rng);
    p.insert(enc.begin(), enc.end());
    ParamMap ps = fusion::init_projector("proj_s", cfg.d_feat, cfg.embed_dim, rng);
    p.insert(ps.begin(), ps.end());
    ParamMap pt = fusion::init_projector("proj_t", cfg.d_feat, cfg.embed_dim, rng);
    p.insert(pt.begin(), pt.end());
    ParamMap fus = fusion::init_projector("fus", cfg.d_feat, cfg.d_model, rng);
    p.insert(fus.begin(), fus.end());
    p["txt.emb"] = Tensor::randn({vocab_size, cfg.d_feat}, rng, 0.5);
    p["log_tau"] = Tensor::scalar(std::log(cfg.init_tau));

    policy::PolicyConfig pc;
    pc.vocab_size = vocab_size;
    pc.d_model = cfg.d_model;
    pc.d_ff = cfg.d_ff;
    pc.max_positions = kFrameCap + cfg.max_length + 2;
    policy::Policy pol = policy::init_policy(pc, rng);
    p.insert(pol.params.begin(), pol.params.end());
    return p;
}

namespace {

policy::PolicyConfig policy_config(const Config& cfg, int vocab_size) {
    policy::PolicyConfig pc;
    pc.vocab_size = vocab_size;
    pc.d_model = cfg.d_model;
    pc.d_ff = cfg.d_ff;
    pc.max_positions = kFrameCap + cfg.max_length + 2;
    return pc;
}

policy::Policy policy_view(const ParamMap& params, const Config& cfg, int vocab_size,
                           bool merged) {
    policy::Policy p;
    p.cfg = policy_config(cfg, vocab_size);
    for (const auto& [name, t] : params)
        if (name.rfind("dec.", 0) == 0) p.params[name] = t;
    p.merged_adapters = merged;
    return p;
}

std::optional<policy::AdapterWeights> adapters_view(const ParamMap& params,
                                                    const policy::AdapterSpec& spec) {
    policy::AdapterWeights w;
    w.spec = spec;
    for (const auto& [name, t] : params) {
        if (name.rfind("lora.A.", 0) == 0) w.ab[name.substr(7)].first = t;
        else if (name.rfind("lora.B.", 0) == 0) w.ab[name.substr(7)].second = t;
    }
    if (w.ab.empty()) return std::nullopt;
    w.spec.targets.clear();
    for (const auto& [name, ab] : w.ab) w.spec.targets.push_back(name);
    return w;
}

std::vector<int> word_ids(const std::string& text, const policy::Vocabulary& vocab) {
    std::istringstream in(text);
    std::string w;
    std::vector<int> ids;
    while (in >> w) ids.push_back(vocab.id_of(w));
    return ids;
}

policy::AdapterSpec sft_adapter_spec(const Config& cfg) {
    return {{"dec.b0.wq", "dec.b0.wv"}, cfg.sft_rank, cfg.sft_scale, cfg.sft_dropout};
}

policy::AdapterSpec rft_adapter_spec(const Config& cfg) {
    return {{"dec.b0.wq", "dec.b0.wv"}, cfg.rft_rank, cfg.rft_scale, cfg.rft_dropout};
}

double now_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

std::string join_ids(const std::vector<int>& ids, const policy::Vocabulary& vocab) {
    std::string out;
    bool first = true;
    for (int id : ids) {
        if (vocab.is_reserved(id)) continue;
        out += (first ? "" : " ") + vocab.tokens[id];
        first = false;
    }
    return out;
}

// greedy/beam dev BLEU-4 used for per-epoch model selection
double dev_bleu4(const ParamMap& params, const Config& cfg, const std::vector<Example>& split,
                 const policy::Vocabulary& vocab, bool use_cues, int beam_width,
                 const policy::AdapterWeights* adapters = nullptr) {
    policy::Policy pol = policy_view(params, cfg, vocab.size(), true);
    policy::DecodeConfig dc;
    dc.beam_width = beam_width;
    dc.max_length = std::min(cfg.max_length, 40);  // selection decode cap
    std::vector<std::pair<metrics::TokenSequence, metrics::TokenSequence>> pairs;
    for (const Example& ex : split) {
        Tensor prefix = example_prefix(params, cfg, ex, use_cues);
        std::vector<int> ids = policy::beam_decode(pol, prefix, dc, adapters);
        pairs.push_back({grpo::ids_to_token_sequence(ids, vocab, metrics::TokenMode::LatinWord),
                         metrics::tokenize(ex.reference, metrics::TokenMode::LatinWord)});
    }
    return metrics::corpus_scores(pairs).bleu[3];
}

}  // namespace

Tensor example_prefix(const ParamMap& params, const Config& cfg, const Example& ex,
                      bool use_cues) {
    Tape tape(false);
    alignment::EncoderVars enc = alignment::bind_encoder(tape, params, "enc", false);
    fusion::ProjectorVars fus = fusion::bind_projector(tape, params, "fus", false);
    std::vector<bool> valid(ex.skeleton.frame_count(), true);
    Var z = alignment::encode_skeleton(tape.constant(ex.skeleton.frames), enc, valid);
    fusion::FusionConfig fc;
    fc.alpha = use_cues ? cfg.alpha : 0.0;
    fc.beta_hand = use_cues ? cfg.beta_hand : 0.0;
    CueFeatureSequence face = fusion::repair_missing_frames(ex.face);
    CueFeatureSequence hand = fusion::repair_missing_frames(ex.hand);
    Var z_e = fusion::fuse_cues(z, tape.constant(face.frames), tape.constant(hand.frames), fc);
    return fusion::project_prefix(z_e, fus).value();
}

double retrieval_top1(const ParamMap& params, const Config& cfg,
                      const std::vector<Example>& split, const policy::Vocabulary& vocab,
                      int batch) {
    int hits = 0, total = 0;
    for (std::size_t start = 0; start + batch <= split.size(); start += batch) {
        Tape tape(false);
        alignment::EncoderVars enc = alignment::bind_encoder(tape, params, "enc", false);
        fusion::ProjectorVars ps = fusion::bind_projector(tape, params, "proj_s", false);
        fusion::ProjectorVars pt = fusion::bind_projector(tape, params, "proj_t", false);
        Var txt_emb = tape.constant(params.at("txt.emb"));
        Var log_tau = tape.constant(params.at("log_tau"));
        std::vector<Var> f_s, f_t;
        std::vector<std::vector<bool>> sv, tv;
        for (int i = 0; i < batch; ++i) {
            const Example& ex = split[start + i];
            std::vector<bool> valid(ex.skeleton.frame_count(), true);
            Var z = alignment::encode_skeleton(tape.constant(ex.skeleton.frames), enc, valid);
            f_s.push_back(alignment::embed_stream(z, ps, valid));
            sv.push_back(valid);
            std::vector<int> ids = word_ids(ex.reference, vocab);
            std::vector<bool> tvalid(ids.size(), true);
            f_t.push_back(alignment::embed_stream(select_rows(txt_emb, ids), pt, tvalid));
            tv.push_back(tvalid);
        }
        alignment::BatchSimilarity bs =
            alignment::batch_similarity_matrices(f_s, f_t, log_tau, sv, tv);
        const Tensor& z = bs.z_s2t.value();
        for (int i = 0; i < batch; ++i) {
            int arg = 0;
            for (int j = 1; j < batch; ++j)
                if (z.at(i, j) > z.at(i, arg)) arg = j;
            hits += arg == i ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

// ---- stage runners ----------------------------------------------------------

namespace {

void collect(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
             const fusion::ProjectorVars& v) {
    out.push_back({prefix + ".w1", v.w1});
    out.push_back({prefix + ".b1", v.b1});
    out.push_back({prefix + ".w2", v.w2});
    out.push_back({prefix + ".b2", v.b2});
}

void collect(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
             const alignment::EncoderVars& v) {
    collect(out, prefix + ".frame", v.frame_mlp);
    out.push_back({prefix + ".wq", v.wq});
    out.push_back({prefix + ".wk", v.wk});
    out.push_back({prefix + ".wv", v.wv});
    out.push_back({prefix + ".wo", v.wo});
}

Checkpoint make_checkpoint(Stage stage, ParamMap params, const Config& cfg, bool merged,
                           std::mt19937_64& rng) {
    Checkpoint c;
    c.stage = stage;
    c.params = std::move(params);
    c.config_json = config_to_json(cfg);
    std::ostringstream os;
    os << rng;
    c.rng_state = os.str();
    c.merged = merged;
    return c;
}

// encoder output fused with repaired face/hand streams; frozen after pretrain
Tensor fused_rows(const ParamMap& params, const Config& cfg, const Example& ex, bool use_cues) {
    Tape tape(false);
    alignment::EncoderVars enc = alignment::bind_encoder(tape, params, "enc", false);
    std::vector<bool> valid(ex.skeleton.frame_count(), true);
    Var z = alignment::encode_skeleton(tape.constant(ex.skeleton.frames), enc, valid);
    fusion::FusionConfig fc;
    fc.alpha = use_cues ? cfg.alpha : 0.0;
    fc.beta_hand = use_cues ? cfg.beta_hand : 0.0;
    CueFeatureSequence face = fusion::repair_missing_frames(ex.face);
    CueFeatureSequence hand = fusion::repair_missing_frames(ex.hand);
    return fusion::fuse_cues(z, tape.constant(face.frames), tape.constant(hand.frames), fc)
        .value();
}

std::vector<const Example*> selection_subset(const std::vector<Example>& split, int cap) {
    std::vector<const Example*> out;
    for (int i = 0; i < static_cast<int>(split.size()) && i < cap; ++i) out.push_back(&split[i]);
    return out;
}

double subset_bleu4(const ParamMap& params, const Config& cfg,
                    const std::vector<const Example*>& subset, const policy::Vocabulary& vocab,
                    bool use_cues, const policy::AdapterWeights* adapters = nullptr) {
    std::vector<Example> view;
    view.reserve(subset.size());
    for (const Example* e : subset) view.push_back(*e);
    return dev_bleu4(params, cfg, view, vocab, use_cues, 1, adapters);
}

}  // namespace

StageResult run_pretrain(const Config& cfg, const Corpus& corpus) {
    auto t0 = std::chrono::steady_clock::now();
    policy::Vocabulary vocab = corpus_vocabulary(corpus);
    std::mt19937_64 rng(cfg.seed);
    ParamMap params = init_model(cfg, vocab.size(), rng);
    optim::Sgd sgd{cfg.lr_pretrain, cfg.wd_pretrain};

    int epochs = cfg.scaled_epochs(cfg.epochs_pretrain);
    int eval_every = std::max(1, epochs / 8);
    std::vector<int> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const Example*> selset = selection_subset(corpus.dev, 24);

    StageResult res;
    ParamMap best_params = params;
    double best = -1.0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t s = 0; s + cfg.batch_size <= order.size(); s += cfg.batch_size) {
            Tape tape(true, false);
            std::vector<std::pair<std::string, Var>> named;
            alignment::EncoderVars enc = alignment::bind_encoder(tape, params, "enc");
            fusion::ProjectorVars ps = fusion::bind_projector(tape, params, "proj_s");
            fusion::ProjectorVars pt = fusion::bind_projector(tape, params, "proj_t");
            fusion::ProjectorVars fus = fusion::bind_projector(tape, params, "fus");
            Var txt_emb = tape.leaf(params.at("txt.emb"));
            Var log_tau = tape.leaf(params.at("log_tau"));
            collect(named, "enc", enc);
            collect(named, "proj_s", ps);
            collect(named, "proj_t", pt);
            collect(named, "fus", fus);
            named.push_back({"txt.emb", txt_emb});
            named.push_back({"log_tau", log_tau});
            policy::Policy pol = policy_view(params, cfg, vocab.size(), false);
            policy::BoundPolicy bp = policy::bind_policy(tape, pol, true);
            for (const auto& [name, var] : bp.params) named.push_back({name, var});

            std::vector<Var> f_s, f_t;
            std::vector<std::vector<bool>> sv, tv;
            Var slt_sum;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const Example& ex = corpus.train[order[s + b]];
                std::vector<bool> valid(ex.skeleton.frame_count(), true);
                Var z = alignment::encode_skeleton(tape.constant(ex.skeleton.frames), enc,
                                                   valid);
                f_s.push_back(alignment::embed_stream(z, ps, valid));
                sv.push_back(valid);
                std::vector<int> ids = word_ids(ex.reference, vocab);
                std::vector<bool> tvalid(ids.size(), true);
                f_t.push_back(
                    alignment::embed_stream(select_rows(txt_emb, ids), pt, tvalid));
                tv.push_back(tvalid);
                Var prefix = fusion::project_prefix(z, fus);
                std::vector<int> ref = ids;
                ref.push_back(vocab.end_id);
                Var nll = policy::sequence_nll(bp, prefix, ref);
                slt_sum = b == 0 ? nll : add(slt_sum, nll);
            }
            alignment::BatchSimilarity bs =
                alignment::batch_similarity_matrices(f_s, f_t, log_tau, sv, tv);
            Var l_con = alignment::infonce_loss(bs.z_s2t, bs.z_t2s, cfg.tau_prime,
                                                cfg.beta_dir);
            Var loss = alignment::pretrain_objective(
                l_con, [&] { return scale(slt_sum, 1.0 / cfg.batch_size); });
            tape.backward(loss);
            for (const auto& [name, var] : named) sgd.step(params.at(name), tape.grad(var));
            loss_sum += loss.value().item();
            ++steps;
        }

        RunRecord rec;
        rec.stage = "pretrain";
        rec.step = epoch;
        rec.loss = steps ? loss_sum / steps : 0.0;
        if (epoch % eval_every == 0 || epoch == epochs - 1) {
            rec.bleu4 = subset_bleu4(params, cfg, selset, vocab, false);
            if (rec.bleu4 > best) {
                best = rec.bleu4;
                best_params = params;
            }
        }
        rec.wall_ms = now_ms(t0);
        res.log.push_back(rec);
    }

    res.best_dev_bleu4 = best;
    res.checkpoint = make_checkpoint(Stage::Pretrain, std::move(best_params), cfg, false, rng);
    return res;
}

StageResult run_sft(const Config& cfg, const Corpus& corpus, const Checkpoint& pretrain,
                    const fs::path* step_ckpt_dir) {
    auto t0 = std::chrono::steady_clock::now();
    policy::Vocabulary vocab = corpus_vocabulary(corpus);
    ParamMap params = pretrain.params;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    policy::Policy base = policy_view(params, cfg, vocab.size(), false);
    policy::AdapterWeights adapters =
        policy::init_adapters(base, sft_adapter_spec(cfg), rng);
    optim::AdamW opt_llm, opt_proj;
    opt_llm.lr = cfg.lr_sft_llm;
    opt_proj.lr = cfg.lr_sft_proj;

    // encoder and cue streams are frozen; fuse once per example
    std::vector<Tensor> fused;
    fused.reserve(corpus.train.size());
    for (const Example& ex : corpus.train) fused.push_back(fused_rows(params, cfg, ex, true));
    std::vector<std::vector<int>> refs;
    for (const Example& ex : corpus.train) {
        std::vector<int> ids = word_ids(ex.reference, vocab);
        ids.push_back(vocab.end_id);
        refs.push_back(std::move(ids));
    }

    int epochs = cfg.scaled_epochs(cfg.epochs_sft);
    std::vector<int> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const Example*> selset = selection_subset(corpus.dev, 24);

    StageResult res;
    ParamMap best_params = params;
    policy::AdapterWeights best_adapters = adapters;
    double best = -1.0;
    int global_step = 0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t s = 0; s + cfg.batch_size <= order.size(); s += cfg.batch_size) {
            Tape tape(true, false);
            fusion::ProjectorVars fus = fusion::bind_projector(tape, params, "fus");
            policy::AdapterBinding ab = policy::bind_adapters(tape, adapters, true);
            policy::BoundPolicy bp = policy::bind_policy(tape, base, false, &ab);
            std::vector<policy::SftExample> batch;
            for (int b = 0; b < cfg.batch_size; ++b) {
                int i = order[s + b];
                Var prefix = fusion::project_prefix(tape.constant(fused[i]), fus);
                batch.push_back({prefix, refs[i]});
            }
            Var loss = policy::sft_loss(bp, batch);
            tape.backward(loss);
            for (const std::string& target : adapters.spec.targets) {
                auto& [a_var, b_var] = ab.ab.at(target);
                opt_llm.step("A:" + target, adapters.ab.at(target).first, tape.grad(a_var));
                opt_llm.step("B:" + target, adapters.ab.at(target).second, tape.grad(b_var));
            }
            std::vector<std::pair<std::string, Var>> named;
            collect(named, "fus", fus);
            for (const auto& [name, var] : named)
                opt_proj.step(name, params.at(name), tape.grad(var));
            loss_sum += loss.value().item();
            ++steps;
            ++global_step;
            if (cfg.checkpoint_every > 0 && step_ckpt_dir &&
                global_step % cfg.checkpoint_every == 0) {
                ParamMap snap = params;
                for (const auto& [target, abv] : adapters.ab) {
                    snap["lora.A." + target] = abv.first;
                    snap["lora.B." + target] = abv.second;
                }
                Checkpoint c = make_checkpoint(Stage::Sft, std::move(snap), cfg, false, rng);
                char name[32];
                std::snprintf(name, sizeof name, "step_%06d.rvck", global_step);
                save_checkpoint(c, *step_ckpt_dir / name);
            }
        }

        RunRecord rec;
        rec.stage = "sft";
        rec.step = epoch;
        rec.loss = steps ? loss_sum / steps : 0.0;
        rec.bleu4 = subset_bleu4(params, cfg, selset, vocab, true, &adapters);
        if (rec.bleu4 > best) {
            best = rec.bleu4;
            best_params = params;
            best_adapters = adapters;
        }
        rec.wall_ms = now_ms(t0);
        res.log.push_back(rec);
    }

    params = std::move(best_params);
    adapters = std::move(best_adapters);
    res.best_dev_bleu4 = best;
    bool merged = cfg.merge_after_sft;
    if (merged) {
        policy::Policy folded = policy::merge_adapters(base, adapters);
        for (auto& [name, t] : folded.params) params[name] = std::move(t);
    } else {
        for (const auto& [target, abv] : adapters.ab) {
            params["lora.A." + target] = abv.first;
            params["lora.B." + target] = abv.second;
        }
    }
    res.checkpoint = make_checkpoint(Stage::Sft, std::move(params), cfg, merged, rng);
    return res;
}

StageResult run_rft(const Config& cfg, const Corpus& corpus, const Checkpoint& sft,
                    const fs::path* step_ckpt_dir) {
    if (sft.stage != Stage::Sft)
        throw std::invalid_argument("rft requires an sft checkpoint");
    if (!sft.merged)
        throw std::invalid_argument("rft requires merged adapters; rerun sft with merge_after_sft");
    auto t0 = std::chrono::steady_clock::now();
    policy::Vocabulary vocab = corpus_vocabulary(corpus);
    ParamMap params = sft.params;
    policy::Policy base = policy_view(params, cfg, vocab.size(), true);

    std::vector<grpo::RftExample> dataset;
    for (const Example& ex : corpus.train) {
        grpo::RftExample r;
        r.prefix = example_prefix(params, cfg, ex, true);
        r.reference_ids = word_ids(ex.reference, vocab);
        r.reference_ids.push_back(vocab.end_id);
        r.reference_text = metrics::tokenize(ex.reference, metrics::TokenMode::LatinWord);
        dataset.push_back(std::move(r));
    }

    grpo::RewardConfig rw;
    rw.lambda = cfg.lambda;
    rw.pad_short_targets = cfg.pad_short_targets;
    grpo::GrpoConfig g;
    g.group_size = cfg.group_size;
    g.epsilon_clip = cfg.epsilon_clip;
    g.kl_coefficient = cfg.kl_coefficient;
    g.eps_std = cfg.eps_std;
    g.lr = cfg.lr_rft;
    g.epochs = cfg.scaled_epochs(cfg.epochs_rft);
    g.ratio_level =
        cfg.ratio_level == "sequence" ? grpo::RatioLevel::Sequence : grpo::RatioLevel::Token;
    g.sample_temperature = cfg.sample_temperature;
    g.max_length = std::min(cfg.max_length, 48);  // sampling cap for desk runs

    StageResult res;
    std::vector<const Example*> selset = selection_subset(corpus.dev, 24);
    policy::AdapterWeights best_adapters;
    double best = -1.0;
    bool have_best = false;

    auto eval_theta = [&](const policy::AdapterWeights& theta) {
        policy::Policy folded = policy::merge_adapters(base, theta);
        ParamMap tmp = params;
        for (auto& [name, t] : folded.params) tmp[name] = std::move(t);
        return subset_bleu4(tmp, cfg, selset, vocab, true);
    };

    grpo::RftResult rft = grpo::rft_train(
        base, dataset, vocab, metrics::TokenMode::LatinWord, rw, g, rft_adapter_spec(cfg),
        cfg.seed ^ 0xda3e39cb94b95bdbull, nullptr,
        [&](const grpo::RftLogRecord& r) {
            RunRecord rec;
            rec.stage = "rft";
            rec.step = r.step;
            rec.loss = r.loss;
            rec.reward_mean = r.reward_mean;
            rec.wall_ms = now_ms(t0);
            res.log.push_back(rec);
        },
        [&](int epoch, const policy::AdapterWeights& theta) {
            double b = eval_theta(theta);
            RunRecord rec;
            rec.stage = "rft";
            rec.step = -(epoch + 1);  // epoch marker rows carry the dev score
            rec.bleu4 = b;
            rec.wall_ms = now_ms(t0);
            res.log.push_back(rec);
            if (b > best) {
                best = b;
                best_adapters = theta;
                have_best = true;
            }
            if (step_ckpt_dir && cfg.checkpoint_every > 0) {
                policy::Policy folded = policy::merge_adapters(base, theta);
                ParamMap snap = params;
                for (auto& [name, t] : folded.params) snap[name] = std::move(t);
                std::mt19937_64 tag(cfg.seed);
                Checkpoint c = make_checkpoint(Stage::Rft, std::move(snap), cfg, true, tag);
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%04d.rvck", epoch);
                save_checkpoint(c, *step_ckpt_dir / name);
            }
        });

    if (!have_best) {
        best_adapters = rft.adapters;
        best = eval_theta(rft.adapters);
    }
    policy::Policy folded = policy::merge_adapters(base, best_adapters);
    for (auto& [name, t] : folded.params) params[name] = std::move(t);
    res.best_dev_bleu4 = best;
    std::mt19937_64 rng(cfg.seed ^ 0xda3e39cb94b95bdbull);
    res.checkpoint = make_checkpoint(Stage::Rft, std::move(params), cfg, true, rng);
    return res;
}

// ---- evaluation -------------------------------------------------------------

EvalResult evaluate(const Checkpoint& ckpt, const Config& cfg,
                    const std::vector<Example>& split, const policy::Vocabulary& vocab,
                    bool use_cues) {
    policy::Policy pol = policy_view(ckpt.params, cfg, vocab.size(), ckpt.merged);
    std::optional<policy::AdapterWeights> aw;
    if (!ckpt.merged && ckpt.stage != Stage::Pretrain)
        aw = adapters_view(ckpt.params,
                           ckpt.stage == Stage::Rft ? rft_adapter_spec(cfg)
                                                    : sft_adapter_spec(cfg));
    policy::DecodeConfig dc;
    dc.beam_width = cfg.beam_width;
    dc.max_length = cfg.max_length;

    EvalResult out;
    std::vector<std::pair<metrics::TokenSequence, metrics::TokenSequence>> pairs;
    for (const Example& ex : split) {
        Tensor prefix = example_prefix(ckpt.params, cfg, ex, use_cues);
        std::vector<int> ids = policy::beam_decode(pol, prefix, dc, aw ? &*aw : nullptr);
        std::string hyp = join_ids(ids, vocab);
        metrics::TokenSequence cand =
            grpo::ids_to_token_sequence(ids, vocab, metrics::TokenMode::LatinWord);
        metrics::TokenSequence ref =
            metrics::tokenize(ex.reference, metrics::TokenMode::LatinWord);
        double sb = metrics::bleu(cand, ref, 4, metrics::Smoothing::AddEps);
        double sr = metrics::rouge_l(cand, ref);
        out.rows.push_back({ex.id, ex.reference, hyp, sb, sr});
        pairs.push_back({std::move(cand), std::move(ref)});
    }
    out.corpus = metrics::corpus_scores(pairs);
    return out;
}

void write_eval_tsv(const EvalResult& r, const fs::path& path) {
    std::string out = "id\treference\thypothesis\tbleu4\trouge_l\n";
    char buf[64];
    for (const auto& [id, ref, hyp, sb, sr] : r.rows) {
        std::snprintf(buf, sizeof buf, "%.4f\t%.4f", sb, sr);
        out += id + "\t" + ref + "\t" + hyp + "\t" + buf + "\n";
    }
    atomic_write(path, out);
}

}  // namespace slt::harness
