#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "slt/alignment.hpp"

using namespace slt;
using namespace slt::alignment;

namespace {

Var unit_rows(Tape& tape, Tensor t) {
    return l2_normalize_rows(tape.constant(std::move(t)));
}

}  // namespace

TEST_CASE("embed_stream normalizes unmasked rows and zeroes masked ones") {
    std::mt19937_64 rng(3);
    ParamMap params = fusion::init_projector("p", 4, 3, rng);
    Tape tape;
    fusion::ProjectorVars pv = fusion::bind_projector(tape, params, "p", false);
    std::vector<bool> valid{true, true, false};
    Tensor feats = Tensor::randn({3, 4}, rng);
    Tensor out = embed_stream(tape.constant(feats), pv, valid).value();
    for (int i = 0; i < 2; ++i) {
        double norm = 0;
        for (int j = 0; j < 3; ++j) norm += out.at(i, j) * out.at(i, j);
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (int j = 0; j < 3; ++j) CHECK(out.at(2, j) == 0.0);
}

TEST_CASE("global_similarity degenerate cases") {
    Tape tape;
    Var log_tau = tape.constant(Tensor::scalar(0.0));  // tau = 1
    std::vector<bool> one{true};

    SimilarityBundle same = global_similarity(unit_rows(tape, Tensor::row({1, 0})),
                                              unit_rows(tape, Tensor::row({1, 0})),
                                              log_tau, one, one);
    CHECK(same.e.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.p.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.z_st.value().item() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.z_ts.value().item() == doctest::Approx(1.0).epsilon(1e-12));

    SimilarityBundle orth = global_similarity(unit_rows(tape, Tensor::row({1, 0})),
                                              unit_rows(tape, Tensor::row({0, 1})),
                                              log_tau, one, one);
    CHECK(orth.e.value().at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(orth.z_st.value().item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("global_similarity hand-built identity E") {
    // orthonormal rows give E = I; with tau = 1, e_row = sigma = e/(e+1)
    Tape tape;
    Var log_tau = tape.constant(Tensor::scalar(0.0));
    std::vector<bool> two{true, true};
    Tensor eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    SimilarityBundle b = global_similarity(tape.constant(eye), tape.constant(eye), log_tau,
                                           two, two);
    double sigma = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(b.z_st.value().item() == doctest::Approx(sigma).epsilon(1e-9));
    CHECK(b.z_ts.value().item() == doctest::Approx(sigma).epsilon(1e-9));
    // P rows over unmasked columns sum to 1
    for (int i = 0; i < 2; ++i) {
        double s = b.p.value().at(i, 0) + b.p.value().at(i, 1);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("batch similarity matrices") {
    Tape tape;
    Var log_tau = tape.constant(Tensor::scalar(0.0));
    std::vector<bool> one{true};
    std::vector<Var> f_s{unit_rows(tape, Tensor::row({1, 0})),
                         unit_rows(tape, Tensor::row({0, 1}))};
    std::vector<Var> f_t = f_s;
    std::vector<std::vector<bool>> masks{one, one};
    BatchSimilarity bs = batch_similarity_matrices(f_s, f_t, log_tau, masks, masks);
    CHECK(bs.z_s2t.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bs.z_s2t.value().at(1, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bs.z_s2t.value().at(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(bs.z_s2t.value().at(1, 0) == doctest::Approx(0.0).epsilon(1e-9));

    // identical pairs -> all entries equal
    std::vector<Var> same{f_s[0], f_s[0]};
    BatchSimilarity eq = batch_similarity_matrices(same, same, log_tau, masks, masks);
    CHECK(eq.z_s2t.value().at(0, 1) ==
          doctest::Approx(eq.z_s2t.value().at(0, 0)).epsilon(1e-12));

    std::vector<Var> bad{unit_rows(tape, Tensor::row({1, 0})),
                         unit_rows(tape, Tensor::row({1, 0, 0}))};
    std::vector<std::vector<bool>> bm{one, one};
    CHECK_THROWS(batch_similarity_matrices(bad, bad, log_tau, bm, bm));
}

TEST_CASE("infonce anchors") {
    Tape tape;
    Tensor eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    Var z = tape.constant(eye);
    double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(infonce_loss(z, z, 1.0, 0.5).value().item() ==
          doctest::Approx(expect).epsilon(1e-9));

    Tensor flat = Tensor::full({3, 3}, 0.4);
    Var zf = tape.constant(flat);
    CHECK(infonce_loss(zf, zf, 1.0, 0.5).value().item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-9));

    // beta_dir endpoint: only the s2t direction contributes
    Tensor other = Tensor::full({2, 2}, 0.1);
    other.at(0, 0) = other.at(1, 1) = 0.9;
    Var zo = tape.constant(other);
    double s2t_only = infonce_loss(z, zo, 1.0, 1.0).value().item();
    double s2t_ref = infonce_loss(z, z, 1.0, 1.0).value().item();
    CHECK(s2t_only == doctest::Approx(s2t_ref).epsilon(1e-12));

    Var rect = tape.constant(Tensor::full({2, 3}, 0.0));
    CHECK_THROWS(infonce_loss(rect, rect, 1.0, 0.5));
    CHECK(infonce_loss(z, z, 1.0, 0.5).value().item() >= 0.0);
}

TEST_CASE("infonce batch-permutation invariance and diagonal monotonicity") {
    std::mt19937_64 rng(29);
    Tensor z0 = Tensor::randn({3, 3}, rng, 0.5);
    Tape tape;
    double base = infonce_loss(tape.constant(z0), tape.constant(z0), 0.5, 0.5)
                      .value()
                      .item();

    // joint permutation of rows and columns
    std::vector<int> perm{2, 0, 1};
    Tensor zp({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) zp.at(i, j) = z0.at(perm[i], perm[j]);
    double permuted = infonce_loss(tape.constant(zp), tape.constant(zp), 0.5, 0.5)
                          .value()
                          .item();
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));

    Tensor zup = z0;
    zup.at(1, 1) += 0.3;
    double bigger_diag = infonce_loss(tape.constant(zup), tape.constant(zup), 0.5, 0.5)
                             .value()
                             .item();
    CHECK(bigger_diag <= base + 1e-12);
}

TEST_CASE("gradients of the contrastive stack match finite differences") {
    std::mt19937_64 rng(31);
    std::vector<bool> valid{true, true, true};
    Tensor fs0 = Tensor::randn({3, 4}, rng);
    Tensor ft0 = Tensor::randn({2, 4}, rng);
    std::vector<bool> tvalid{true, true};
    Tensor lt0 = Tensor::scalar(std::log(0.3));

    auto loss_value = [&](const Tensor& fs, const Tensor& ft, const Tensor& lt) {
        Tape t(true, false);
        Var f_s = l2_normalize_rows(t.constant(fs));
        Var f_t = l2_normalize_rows(t.constant(ft));
        SimilarityBundle b = global_similarity(f_s, f_t, t.constant(lt), valid, tvalid);
        return add(b.z_st, scale(b.z_ts, 0.5)).value().item();
    };

    Tape tape;
    Var fs = tape.leaf(fs0);
    Var ft = tape.leaf(ft0);
    Var lt = tape.leaf(lt0);
    SimilarityBundle b = global_similarity(l2_normalize_rows(fs), l2_normalize_rows(ft), lt,
                                           valid, tvalid);
    Var loss = add(b.z_st, scale(b.z_ts, 0.5));
    tape.backward(loss);

    Tensor gfs = finite_difference_gradient(
        [&](const Tensor& x) { return loss_value(x, ft0, lt0); }, fs0);
    Tensor gft = finite_difference_gradient(
        [&](const Tensor& x) { return loss_value(fs0, x, lt0); }, ft0);
    Tensor glt = finite_difference_gradient(
        [&](const Tensor& x) { return loss_value(fs0, ft0, x); }, lt0);
    auto close = [](const Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            double denom = std::max({1.0, std::abs(a.data[i]), std::abs(b.data[i])});
            if (std::abs(a.data[i] - b.data[i]) / denom >= 1e-4) return false;
        }
        return true;
    };
    CHECK(close(tape.grad(fs), gfs));
    CHECK(close(tape.grad(ft), gft));
    CHECK(close(tape.grad(lt), glt));
}

TEST_CASE("pretrain objective composes contrastive and translation terms") {
    Tape tape;
    Tensor eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    Var l_con = infonce_loss(tape.constant(eye), tape.constant(eye), 1.0, 0.5);
    Var total = pretrain_objective(l_con, [&] { return tape.constant(Tensor::scalar(0.0)); });
    CHECK(total.value().item() == doctest::Approx(l_con.value().item()).epsilon(1e-12));

    Var shifted =
        pretrain_objective(l_con, [&] { return tape.constant(Tensor::scalar(2.5)); });
    CHECK(shifted.value().item() ==
          doctest::Approx(l_con.value().item() + 2.5).epsilon(1e-12));
}
