#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "slt/fusion.hpp"

using namespace slt;
using namespace slt::fusion;

namespace {

CueFeatureSequence make_stream(Tensor frames, CueChannel ch) {
    CueFeatureSequence s;
    s.valid_len = frames.rows();
    s.frames = std::move(frames);
    s.channel = ch;
    s.detected.assign(s.valid_len, true);
    return s;
}

CueFeatureSequence stream_of(Tensor frames, CueChannel ch = CueChannel::Skeleton) {
    return make_stream(std::move(frames), ch);
}

}  // namespace

TEST_CASE("fuse_cues arithmetic") {
    CueFeatureSequence zs = stream_of(Tensor::row({1, 0}));
    CueFeatureSequence zf = stream_of(Tensor::row({0, 1}), CueChannel::Face);
    CueFeatureSequence zh = stream_of(Tensor::row({1, 1}), CueChannel::Hand);

    FusionConfig off{0.0, 0.0};
    Tensor a = fuse_cues(zs, zf, zh, off);
    CHECK(a.at(0, 0) == 1.0);
    CHECK(a.at(0, 1) == 0.0);

    FusionConfig on{1.0, 1.0};
    Tensor b = fuse_cues(zs, zf, zh, on);
    CHECK(b.at(0, 0) == 2.0);
    CHECK(b.at(0, 1) == 2.0);
}

TEST_CASE("fuse_cues linearity and joint permutation") {
    std::mt19937_64 rng(5);
    CueFeatureSequence zs = stream_of(Tensor::randn({4, 3}, rng));
    CueFeatureSequence zf = stream_of(Tensor::randn({4, 3}, rng), CueChannel::Face);
    CueFeatureSequence zh = stream_of(Tensor::randn({4, 3}, rng), CueChannel::Hand);
    FusionConfig cfg{0.7, 0.3};

    Tensor once = fuse_cues(zs, zf, zh, cfg);
    CueFeatureSequence zs2 = zs, zf2 = zf, zh2 = zh;
    for (CueFeatureSequence* t : {&zs2, &zf2, &zh2})
        for (double& v : t->frames.data) v *= 2;
    Tensor twice = fuse_cues(zs2, zf2, zh2, cfg);
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(twice.data[i] == doctest::Approx(2 * once.data[i]).epsilon(1e-12));

    // swap rows 0 and 2 in every stream: output rows swap identically
    auto swap_rows = [](CueFeatureSequence t) {
        for (int j = 0; j < 3; ++j) std::swap(t.frames.at(0, j), t.frames.at(2, j));
        return t;
    };
    Tensor perm = fuse_cues(swap_rows(zs), swap_rows(zf), swap_rows(zh), cfg);
    for (int j = 0; j < 3; ++j) {
        CHECK(perm.at(0, j) == doctest::Approx(once.at(2, j)).epsilon(1e-12));
        CHECK(perm.at(2, j) == doctest::Approx(once.at(0, j)).epsilon(1e-12));
    }

    CueFeatureSequence short_face = stream_of(Tensor::randn({3, 3}, rng), CueChannel::Face);
    CHECK_THROWS(fuse_cues(zs, short_face, zh, cfg));
}

TEST_CASE("project_prefix") {
    std::mt19937_64 rng(9);
    ParamMap zero = init_projector("p", 3, 2, rng);
    for (auto& [name, t] : zero) t = Tensor::zeros(t.shape);
    Tape tape;
    ProjectorVars pv = bind_projector(tape, zero, "p", false);
    Tensor z_e = Tensor::randn({4, 3}, rng);
    Tensor out = project_prefix(tape.constant(z_e), pv).value();
    CHECK(out.rows() == 4);
    for (double v : out.data) CHECK(v == 0.0);

    // identity round trip via the linear-only test hook
    ParamMap ident = init_projector("q", 3, 3, rng, 3);
    ident["q.w1"] = Tensor::zeros({3, 3});
    ident["q.w2"] = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) {
        ident["q.w1"].at(i, i) = 1.0;
        ident["q.w2"].at(i, i) = 1.0;
    }
    ident["q.b1"] = Tensor::zeros({1, 3});
    ident["q.b2"] = Tensor::zeros({1, 3});
    Tape t2;
    ProjectorVars qv = bind_projector(t2, ident, "q", false);
    qv.linear_only = true;
    Tensor same = project_prefix(t2.constant(z_e), qv).value();
    for (std::size_t i = 0; i < z_e.data.size(); ++i)
        CHECK(same.data[i] == doctest::Approx(z_e.data[i]).epsilon(1e-12));
}

TEST_CASE("project_prefix gradient matches finite differences") {
    std::mt19937_64 rng(13);
    ParamMap params = init_projector("p", 3, 2, rng);
    Tensor z_e = Tensor::randn({2, 3}, rng);
    for (const char* name : {"p.w1", "p.b1", "p.w2", "p.b2"}) {
        Tape tape;
        ProjectorVars pv = bind_projector(tape, params, "p");
        Var loss = sum(project_prefix(tape.constant(z_e), pv));
        tape.backward(loss);
        Var probe = name == std::string("p.w1")   ? pv.w1
                    : name == std::string("p.b1") ? pv.b1
                    : name == std::string("p.w2") ? pv.w2
                                                  : pv.b2;
        Tensor g_fd = finite_difference_gradient(
            [&](const Tensor& x) {
                ParamMap mod = params;
                mod[name] = x;
                Tape t(true, false);
                ProjectorVars mv = bind_projector(t, mod, "p", false);
                return sum(project_prefix(t.constant(z_e), mv)).value().item();
            },
            params.at(name), 1e-5);
        const Tensor& g_ad = tape.grad(probe);
        for (std::size_t i = 0; i < g_ad.data.size(); ++i) {
            double denom = std::max({1.0, std::abs(g_ad.data[i]), std::abs(g_fd.data[i])});
            CHECK(std::abs(g_ad.data[i] - g_fd.data[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("repair_missing_frames") {
    std::mt19937_64 rng(21);
    CueFeatureSequence s = make_stream(Tensor::randn({3, 2}, rng), CueChannel::Face);
    s.detected = {true, false, true};
    CueFeatureSequence r = repair_missing_frames(s);
    for (int j = 0; j < 2; ++j) CHECK(r.frames.at(1, j) == s.frames.at(0, j));
    CHECK(r.frames.at(2, 0) == s.frames.at(2, 0));
    CHECK(r.detected == std::vector<bool>(3, true));

    CueFeatureSequence all_ok = make_stream(Tensor::randn({3, 2}, rng), CueChannel::Hand);
    CueFeatureSequence same = repair_missing_frames(all_ok);
    CHECK(same.frames.data == all_ok.frames.data);

    CueFeatureSequence lead = make_stream(Tensor::randn({3, 2}, rng), CueChannel::Face);
    lead.detected = {false, false, true};
    CueFeatureSequence fixed = repair_missing_frames(lead);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(fixed.frames.at(i, j) == lead.frames.at(2, j));

    // idempotent
    CueFeatureSequence again = repair_missing_frames(fixed);
    CHECK(again.frames.data == fixed.frames.data);

    CueFeatureSequence none = make_stream(Tensor::randn({2, 2}, rng), CueChannel::Face);
    none.detected = {false, false};
    CHECK_THROWS(repair_missing_frames(none));
}
