#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "snag/encoders.hpp"
#include "snag/eval.hpp"
#include "snag/mmea.hpp"

using namespace snag;

namespace {

Tensor random_mat(int rows, int cols, Rng& rng, Scalar scale = 1.0) {
    std::vector<Scalar> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = rng.normal() * scale;
    return Tensor::from_data({rows, cols}, std::move(v));
}

std::vector<std::vector<Scalar>> as_rows(const Tensor& t) {
    int r = t.dim(0), c = t.dim(1);
    std::vector<std::vector<Scalar>> out(r, std::vector<Scalar>(c));
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[i][j] = t.at(i * c + j);
    return out;
}

// Loop-level reimplementation of the bidirectional in-batch loss.
Scalar oracle_contrastive(std::vector<std::vector<Scalar>> a,
                          std::vector<std::vector<Scalar>> b, Scalar tau,
                          bool normalize,
                          const std::vector<Scalar>* phi = nullptr) {
    auto norm_rows = [](std::vector<std::vector<Scalar>>& m) {
        for (auto& row : m) {
            Scalar acc = 0;
            for (Scalar x : row) acc += x * x;
            Scalar n = std::max(std::sqrt(acc), 1e-12);
            for (Scalar& x : row) x /= n;
        }
    };
    if (normalize) {
        norm_rows(a);
        norm_rows(b);
    }
    int bsz = static_cast<int>(a.size());
    auto gamma = [&](const std::vector<std::vector<Scalar>>& u,
                     const std::vector<std::vector<Scalar>>& w, int i, int j) {
        Scalar dot = 0;
        for (size_t k = 0; k < u[i].size(); ++k) dot += u[i][k] * w[j][k];
        return std::exp(dot / tau);
    };
    Scalar total = 0;
    for (int i = 0; i < bsz; ++i) {
        Scalar den12 = gamma(a, b, i, i), den21 = gamma(b, a, i, i);
        for (int j = 0; j < bsz; ++j) {
            if (j == i) continue;
            den12 += gamma(a, b, i, j) + gamma(a, a, i, j);
            den21 += gamma(b, a, i, j) + gamma(b, b, i, j);
        }
        Scalar p = 0.5 * (gamma(a, b, i, i) / den12 + gamma(b, a, i, i) / den21);
        if (phi) p *= (*phi)[i];
        total += -std::log(p);
    }
    return total / bsz;
}

struct TinyEaData {
    SyntheticData data;
    ModalityInputs in1, in2;
};

TinyEaData tiny_ea(uint64_t seed, double jitter = 0.0, double r_img = 1.0) {
    SynthSpec spec;
    spec.num_entities = 12;
    spec.num_relations = 2;
    spec.num_clusters = 2;
    spec.d_v = 6;
    spec.d_s = 6;
    spec.r_img = r_img;
    spec.r_sa = 0.5;
    spec.jitter = jitter;
    TinyEaData t;
    t.data = generate_synthetic(spec, seed);
    auto [r1, a1] = build_bow_features(t.data.g1, t.data.attrs1, 5, 5);
    auto [r2, a2] = build_bow_features(t.data.g2, t.data.attrs2, 5, 5);
    t.in1 = ModalityInputs{r1, a1, t.data.v1, t.data.s1};
    t.in2 = ModalityInputs{r2, a2, t.data.v2, t.data.s2};
    if (r_img < 1.0) {
        impute_missing(t.in1.v, seed + 11);
        impute_missing(t.in2.v, seed + 12);
    }
    return t;
}

MmeaConfig tiny_ea_config() {
    MmeaConfig cfg;
    cfg.d = 8;
    cfg.tau = 0.5;
    cfg.lr = 5e-3;
    cfg.batch_size = 64;
    cfg.epochs = 6;
    cfg.heads = 1;
    cfg.gat_layers = 2;
    cfg.gat_heads = 2;
    cfg.noise.mode = NoiseMode::off;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("mmea");

TEST_CASE("gmi embedding concatenates softmax-scaled blocks") {
    Rng rng(7);
    std::vector<Tensor> h = {random_mat(3, 4, rng), random_mat(3, 4, rng)};
    SUBCASE("uniform logits scale every block by 1/M") {
        Tensor logits = Tensor::zeros({2});
        Tensor g = gmi_embed(h, logits);
        REQUIRE(g.shape() == Shape{3, 8});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) {
                CHECK(g.at(i * 8 + j) == doctest::Approx(0.5 * h[0].at(i * 4 + j))
                                             .epsilon(1e-12));
                CHECK(g.at(i * 8 + 4 + j) ==
                      doctest::Approx(0.5 * h[1].at(i * 4 + j)).epsilon(1e-12));
            }
    }
    SUBCASE("logit gap of log 2 gives weights 1/3 and 2/3") {
        Tensor logits = Tensor::from_data({2}, {0.0, std::log(2.0)});
        Tensor g = gmi_embed(h, logits);
        CHECK(g.at(0) == doctest::Approx(h[0].at(0) / 3.0).epsilon(1e-12));
        CHECK(g.at(4) == doctest::Approx(h[1].at(0) * 2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("single modality passes through untouched") {
        std::vector<Tensor> one = {h[0]};
        Tensor g = gmi_embed(one, Tensor::zeros({1}));
        for (int64_t i = 0; i < g.size(); ++i) CHECK(g.at(i) == h[0].at(i));
    }
    SUBCASE("logit count must match") {
        CHECK_THROWS_AS(gmi_embed(h, Tensor::zeros({3})),
                        std::invalid_argument);
    }
    SUBCASE("gradients flow into the logits") {
        Tensor point = Tensor::from_data({2}, {0.3, -0.2});
        Scalar err = check_gradients(
            [&](const Tensor& logits) {
                return sum_all(mul(gmi_embed(h, logits),
                                   gmi_embed(h, logits)));
            },
            point, 1e-5);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("contrastive loss of a single pair is exactly zero") {
    Rng rng(3);
    Tensor a = random_mat(1, 5, rng);
    Tensor b = random_mat(1, 5, rng);
    CHECK(contrastive_loss(a, b, 0.1, true).item() == 0.0);
    CHECK(contrastive_loss(a, b, 1.0, false).item() == 0.0);
}

TEST_CASE("orthogonal pair batch reproduces the hand value") {
    // Two unit pairs on orthogonal axes at tau = 1: each row's own gamma is
    // e, both negative terms are 1, so p = e / (e + 2) in both directions.
    Tensor eye = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Scalar expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(contrastive_loss(eye, eye, 1.0, true).item() ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(contrastive_loss(eye, eye, 1.0, false).item() ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("contrastive loss is symmetric in its arguments") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_mat(4, 6, rng);
        Tensor b = random_mat(4, 6, rng);
        CHECK(contrastive_loss(a, b, 0.2, true).item() ==
              contrastive_loss(b, a, 0.2, true).item());
    }
}

TEST_CASE("contrastive loss ignores batch order") {
    Rng rng(13);
    Tensor a = random_mat(5, 4, rng);
    Tensor b = random_mat(5, 4, rng);
    std::vector<int> perm = {4, 2, 0, 3, 1};
    std::vector<Scalar> pa, pb;
    for (int i : perm)
        for (int j = 0; j < 4; ++j) {
            pa.push_back(a.at(i * 4 + j));
            pb.push_back(b.at(i * 4 + j));
        }
    Scalar base = contrastive_loss(a, b, 0.3, true).item();
    Scalar permuted = contrastive_loss(Tensor::from_data({5, 4}, pa),
                                       Tensor::from_data({5, 4}, pb), 0.3,
                                       true)
                          .item();
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("contrastive loss is nonnegative and matches the loop oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        int bsz = 2 + rng.uniform_int(5);
        int dim = 2 + rng.uniform_int(6);
        Tensor a = random_mat(bsz, dim, rng);
        Tensor b = random_mat(bsz, dim, rng);
        Scalar tau = 0.1 + 0.9 * rng.uniform();
        bool norm = rng.uniform() < 0.7;
        Scalar got = contrastive_loss(a, b, tau, norm).item();
        CHECK(got >= -1e-12);
        Scalar want = oracle_contrastive(as_rows(a), as_rows(b), tau, norm);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("contrastive loss rejects bad inputs") {
    Tensor a = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(contrastive_loss(a, a, 0.0, true), std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(a, a, -1.0, true), std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(a, Tensor::zeros({3, 3}), 1.0, true),
                    std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(a, Tensor::zeros({2, 4}), 1.0, true),
                    std::invalid_argument);
}

TEST_CASE("unit weights reduce the weighted loss to the plain one") {
    Rng rng(19);
    Tensor a = random_mat(4, 5, rng);
    Tensor b = random_mat(4, 5, rng);
    Tensor ones = Tensor::full({4}, 1.0);
    CHECK(weighted_contrastive_loss(a, b, ones, 0.25, true).item() ==
          contrastive_loss(a, b, 0.25, true).item());
}

TEST_CASE("halving one pair's weight adds log(2)/B to the loss") {
    Rng rng(23);
    int bsz = 5;
    Tensor a = random_mat(bsz, 4, rng);
    Tensor b = random_mat(bsz, 4, rng);
    Tensor w1 = Tensor::full({bsz}, 1.0);
    std::vector<Scalar> half(bsz, 1.0);
    half[2] = 0.5;
    Tensor w2 = Tensor::from_data({bsz}, half);
    Scalar l1 = weighted_contrastive_loss(a, b, w1, 0.4, true).item();
    Scalar l2 = weighted_contrastive_loss(a, b, w2, 0.4, true).item();
    CHECK(l2 - l1 == doctest::Approx(std::log(2.0) / bsz).epsilon(1e-10));
}

TEST_CASE("weighted loss validates the weight vector") {
    Tensor a = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(weighted_contrastive_loss(a, a, Tensor::zeros({4}), 1.0,
                                              true),
                    std::invalid_argument);
    CHECK_THROWS_AS(weighted_contrastive_loss(a, a, Tensor::zeros({3, 1}),
                                              1.0, true),
                    std::invalid_argument);
}

TEST_CASE("ecia reduces to the plain sum under unit confidence") {
    Rng rng(29);
    std::vector<Tensor> h1, h2;
    for (int m = 0; m < 3; ++m) {
        h1.push_back(random_mat(4, 5, rng));
        h2.push_back(random_mat(4, 5, rng));
    }
    Tensor conf = Tensor::full({4, 3}, 1.0);
    Scalar got = ecia_loss(h1, h2, conf, conf, 0.3, true).item();
    Scalar want = 0;
    for (int m = 0; m < 3; ++m)
        want += contrastive_loss(h1[m], h2[m], 0.3, true).item();
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ecia takes the entity-wise minimum confidence per modality") {
    Rng rng(31);
    std::vector<Tensor> h1 = {random_mat(3, 4, rng)};
    std::vector<Tensor> h2 = {random_mat(3, 4, rng)};
    Tensor c1 = Tensor::full({3, 1}, 0.9);
    Tensor c2 = Tensor::full({3, 1}, 0.2);
    Tensor phi = Tensor::full({3}, 0.2);
    CHECK(ecia_loss(h1, h2, c1, c2, 0.3, true).item() ==
          doctest::Approx(
              weighted_contrastive_loss(h1[0], h2[0], phi, 0.3, true).item())
              .epsilon(1e-12));
}

TEST_CASE("ecia matches a per-modality loop oracle") {
    Rng rng(37);
    int bsz = 4, mcount = 3;
    std::vector<Tensor> h1, h2;
    for (int m = 0; m < mcount; ++m) {
        h1.push_back(random_mat(bsz, 5, rng));
        h2.push_back(random_mat(bsz, 5, rng));
    }
    std::vector<Scalar> c1v, c2v;
    for (int i = 0; i < bsz * mcount; ++i) {
        c1v.push_back(0.1 + 0.9 * rng.uniform());
        c2v.push_back(0.1 + 0.9 * rng.uniform());
    }
    Tensor c1 = Tensor::from_data({bsz, mcount}, c1v);
    Tensor c2 = Tensor::from_data({bsz, mcount}, c2v);
    Scalar want = 0;
    for (int m = 0; m < mcount; ++m) {
        std::vector<Scalar> phi(bsz);
        for (int i = 0; i < bsz; ++i)
            phi[i] = std::min(c1v[i * mcount + m], c2v[i * mcount + m]);
        want += oracle_contrastive(as_rows(h1[m]), as_rows(h2[m]), 0.2, true,
                                   &phi);
    }
    CHECK(ecia_loss(h1, h2, c1, c2, 0.2, true).item() ==
          doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("iir over one modality equals the plain contrastive loss") {
    Rng rng(41);
    Tensor a = random_mat(4, 6, rng);
    Tensor b = random_mat(4, 6, rng);
    CHECK(iir_loss({a}, {b}, 0.15, true).item() ==
          contrastive_loss(a, b, 0.15, true).item());
    CHECK_THROWS_AS(iir_loss({a}, {}, 0.15, true), std::invalid_argument);
}

TEST_CASE("contrastive and ecia gradients agree with central differences") {
    Rng rng(43);
    Tensor b = random_mat(3, 4, rng);
    Tensor point = random_mat(3, 4, rng);
    Scalar err = check_gradients(
        [&](const Tensor& x) { return contrastive_loss(x, b, 0.5, true); },
        point, 1e-5);
    CHECK(err < 1e-4);

    std::vector<Tensor> h1 = {random_mat(3, 4, rng)};
    std::vector<Tensor> h2 = {random_mat(3, 4, rng)};
    Tensor c2 = Tensor::full({3, 1}, 0.7);
    std::vector<Scalar> cv = {0.3, 0.9, 0.5};
    Tensor cpoint = Tensor::from_data({3, 1}, cv);
    Scalar cerr = check_gradients(
        [&](const Tensor& c) {
            return ecia_loss(h1, h2, c, c2, 0.5, true);
        },
        cpoint, 1e-5);
    CHECK(cerr < 1e-4);
}

TEST_CASE("probation promotes after the required consecutive observations") {
    // Diagonal-dominant similarities: both pairs are mutual at every probe.
    Tensor sims = Tensor::from_data({2, 2}, {0.9, 0.1, 0.2, 0.8});
    std::vector<int> c1 = {10, 11}, c2 = {20, 21};
    ProbationCache cache;
    for (int probe = 1; probe <= 2; ++probe) {
        auto got = probe_and_promote(cache, sims, c1, c2, 3);
        CHECK(got.empty());
        CHECK(cache.counters.at({10, 20}) == probe);
        CHECK(cache.counters.at({11, 21}) == probe);
    }
    auto got = probe_and_promote(cache, sims, c1, c2, 3);
    REQUIRE(got.size() == 2);
    CHECK(got[0] == std::pair<int, int>{10, 20});
    CHECK(got[1] == std::pair<int, int>{11, 21});
    CHECK(cache.counters.empty());
}

TEST_CASE("a broken streak restarts the counter from scratch") {
    Tensor steady = Tensor::from_data({2, 2}, {0.9, 0.1, 0.2, 0.8});
    // Row 0 now prefers column 1, which still prefers row 1: pair 0 breaks.
    Tensor flipped = Tensor::from_data({2, 2}, {0.1, 0.6, 0.2, 0.8});
    std::vector<int> c1 = {0, 1}, c2 = {0, 1};
    ProbationCache cache;
    for (int probe = 0; probe < 3; ++probe)
        probe_and_promote(cache, steady, c1, c2, 5);
    CHECK(cache.counters.at({0, 0}) == 3);
    probe_and_promote(cache, flipped, c1, c2, 5);
    CHECK(cache.counters.count({0, 0}) == 0);
    CHECK(cache.counters.at({1, 1}) == 4);  // pair 1 never broke
    auto got = probe_and_promote(cache, steady, c1, c2, 5);
    REQUIRE(got.size() == 1);  // pair 1 reaches five in a row
    CHECK(got[0] == std::pair<int, int>{1, 1});
    CHECK(cache.counters.at({0, 0}) == 1);  // pair 0 restarts
    CHECK(cache.counters.count({1, 1}) == 0);
}

TEST_CASE("probation handles one-sided argmax disagreements") {
    // Row argmaxes: row 0 -> col 2, row 1 -> col 0. Column argmaxes:
    // col 0 -> row 1, col 1 -> row 1, col 2 -> row 1. Only (1, 0) is mutual.
    Tensor sims =
        Tensor::from_data({2, 3}, {0.1, 0.2, 0.7, 0.9, 0.3, 0.8});
    ProbationCache cache;
    auto got = probe_and_promote(cache, sims, {5, 6}, {7, 8, 9}, 1);
    REQUIRE(got.size() == 1);
    CHECK(got[0] == std::pair<int, int>{6, 7});
    CHECK(cache.counters.empty());
}

TEST_CASE("similarity ties resolve to the lowest index") {
    Tensor sims = Tensor::full({2, 2}, 1.0);
    ProbationCache cache;
    auto got = probe_and_promote(cache, sims, {1, 2}, {3, 4}, 1);
    REQUIRE(got.size() == 1);
    CHECK(got[0] == std::pair<int, int>{1, 3});
}

TEST_CASE("empty candidate sets leave the cache untouched") {
    ProbationCache cache;
    auto got = probe_and_promote(cache, Tensor(), {}, {}, 2);
    CHECK(got.empty());
    CHECK(cache.counters.empty());
    CHECK_THROWS_AS(probe_and_promote(cache, Tensor::zeros({2, 2}), {1, 2},
                                      {3, 4}, 0),
                    std::invalid_argument);
}

TEST_CASE("union model freezes masking stats over the combined present rows") {
    TinyEaData t = tiny_ea(101);
    MmeaConfig cfg = tiny_ea_config();
    MmeaModel m = make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 5);
    REQUIRE(m.ne1 == 12);
    REQUIRE(m.ne2 == 12);
    CHECK(m.x_v.shape() == Shape{24, 6});

    int dim = t.in1.v.dim;
    for (int j = 0; j < dim; ++j) {
        Scalar sum = 0;
        int n = 0;
        for (const ModalityFeatureStore* st : {&t.in1.v, &t.in2.v})
            for (int i = 0; i < st->rows; ++i)
                if (st->present[i]) {
                    sum += st->row(i)[j];
                    ++n;
                }
        Scalar mean = sum / n;
        Scalar var = 0;
        for (const ModalityFeatureStore* st : {&t.in1.v, &t.in2.v})
            for (int i = 0; i < st->rows; ++i)
                if (st->present[i])
                    var += (st->row(i)[j] - mean) * (st->row(i)[j] - mean);
        CHECK(m.mu_v[j] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(m.phi_v[j] ==
              doctest::Approx(std::sqrt(var / n)).epsilon(1e-12));
    }
}

TEST_CASE("model construction validates its inputs") {
    TinyEaData t = tiny_ea(103);
    MmeaConfig cfg = tiny_ea_config();
    SUBCASE("per-modality dims must match across graphs") {
        ModalityInputs bad = t.in2;
        bad.v.dim += 1;
        bad.v.matrix.resize(static_cast<size_t>(bad.v.rows) * bad.v.dim, 0.0);
        CHECK_THROWS_AS(
            make_mmea_model(t.data.g1, t.data.g2, t.in1, bad, cfg, 5),
            std::invalid_argument);
    }
    SUBCASE("absent rows must be imputed first") {
        TinyEaData sparse = tiny_ea(104, 0.0, 0.5);
        sparse.in1.v.imputed = false;
        CHECK_THROWS_AS(make_mmea_model(sparse.data.g1, sparse.data.g2,
                                        sparse.in1, sparse.in2, cfg, 5),
                        std::invalid_argument);
    }
    SUBCASE("imputed sparse stores are accepted") {
        TinyEaData sparse = tiny_ea(105, 0.0, 0.5);
        MmeaModel m = make_mmea_model(sparse.data.g1, sparse.data.g2,
                                      sparse.in1, sparse.in2, cfg, 5);
        CHECK(m.params.num_scalars() > 0);
    }
}

TEST_CASE("forward pass exposes consistent pieces") {
    TinyEaData t = tiny_ea(107);
    MmeaConfig cfg = tiny_ea_config();
    MmeaModel m = make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 9);
    NoGradGuard ng;
    MmeaForward f = mmea_forward(m, 0, false);
    int e = m.ne1 + m.ne2, d = cfg.d;
    REQUIRE(static_cast<int>(f.h_m.size()) == kMmeaModalities);
    REQUIRE(static_cast<int>(f.fused_m.size()) == kMmeaModalities);
    for (const Tensor& h : f.h_m) CHECK(h.shape() == Shape{e, d});
    for (const Tensor& u : f.fused_m) CHECK(u.shape() == Shape{e, d});
    CHECK(f.gmi.shape() == Shape{e, kMmeaModalities * d});
    CHECK(f.conf.shape() == Shape{e, kMmeaModalities});
    for (int i = 0; i < e; ++i) {
        Scalar row = 0;
        for (int mm = 0; mm < kMmeaModalities; ++mm)
            row += f.conf.at(i * kMmeaModalities + mm);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
    // gmi must be the softmax-weighted concatenation of the h_m blocks.
    Tensor again = gmi_embed(f.h_m, m.gmi_logits);
    for (int64_t i = 0; i < again.size(); ++i)
        CHECK(f.gmi.at(i) == again.at(i));
    // Evaluation passes are pure functions of the parameters.
    MmeaForward g = mmea_forward(m, 3, false);
    for (int64_t i = 0; i < g.gmi.size(); ++i)
        CHECK(g.gmi.at(i) == f.gmi.at(i));
    auto [emb1, emb2] = mmea_inference_embeddings(m);
    CHECK(emb1.shape() == Shape{m.ne1, kMmeaModalities * d});
    CHECK(emb2.shape() == Shape{m.ne2, kMmeaModalities * d});
    for (int j = 0; j < kMmeaModalities * d; ++j)
        CHECK(emb2.at(j) == f.gmi.at(m.ne1 * kMmeaModalities * d + j));
}

TEST_CASE("gmnm noise perturbs training passes but never evaluation") {
    TinyEaData t = tiny_ea(109);
    MmeaConfig cfg = tiny_ea_config();
    cfg.noise.mode = NoiseMode::gmnm;
    cfg.noise.rho = 0.6;
    cfg.noise.epsilon = 0.7;
    MmeaModel m = make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 9);
    NoGradGuard ng;
    MmeaForward train_f = mmea_forward(m, 0, true);
    MmeaForward eval_f = mmea_forward(m, 0, false);
    Scalar diff = 0;
    for (int64_t i = 0; i < train_f.gmi.size(); ++i)
        diff = std::max(diff,
                        std::abs(train_f.gmi.at(i) - eval_f.gmi.at(i)));
    CHECK(diff > 1e-6);
    // Same epoch replays the same mask pattern.
    MmeaForward again = mmea_forward(m, 0, true);
    for (int64_t i = 0; i < again.gmi.size(); ++i)
        CHECK(again.gmi.at(i) == train_f.gmi.at(i));
}

TEST_CASE("training reduces the loss and is deterministic") {
    TinyEaData t = tiny_ea(113);
    MmeaConfig cfg = tiny_ea_config();
    cfg.eval_every = 2;
    auto run = [&]() {
        MmeaModel m =
            make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 21);
        return train_mmea(m, t.data.alignment);
    };
    MmeaTrainResult r1 = run();
    REQUIRE(r1.epoch_loss.size() == 6);
    REQUIRE(r1.parts.size() == 6);
    CHECK(r1.epoch_loss.back() < r1.epoch_loss.front());
    for (size_t i = 0; i < r1.parts.size(); ++i) {
        Scalar sum = r1.parts[i][0] + r1.parts[i][1] + r1.parts[i][2];
        CHECK(sum == doctest::Approx(r1.epoch_loss[i]).epsilon(1e-9));
    }
    REQUIRE(r1.test_hits1.size() == 3);
    CHECK(r1.test_hits1[0].first == 1);
    CHECK(r1.test_hits1[2].first == 5);
    for (const auto& [ep, h] : r1.test_hits1) {
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
    }
    CHECK(r1.stopped_epoch == -1);

    MmeaTrainResult r2 = run();
    for (size_t i = 0; i < r1.epoch_loss.size(); ++i)
        CHECK(r1.epoch_loss[i] == r2.epoch_loss[i]);
}

TEST_CASE("probation promotions stay inside the held-out candidates") {
    TinyEaData t = tiny_ea(127);
    MmeaConfig cfg = tiny_ea_config();
    cfg.epochs = 8;
    cfg.iterative = true;
    cfg.probe_every = 2;
    cfg.promote_after = 2;
    MmeaModel m =
        make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 33);
    MmeaTrainResult r = train_mmea(m, t.data.alignment);
    std::set<int> test1, test2;
    for (const auto& [e1, e2] : t.data.alignment.test) {
        test1.insert(e1);
        test2.insert(e2);
    }
    std::set<int> seen1, seen2;
    for (const Promotion& p : r.promotions) {
        CHECK(p.epoch >= 3);  // first possible promotion: probes after
                              // epochs 1 and 3 with a streak of 2
        CHECK((p.epoch + 1) % cfg.probe_every == 0);
        CHECK(test1.count(p.e1) == 1);
        CHECK(test2.count(p.e2) == 1);
        CHECK(seen1.insert(p.e1).second);  // promoted entities never recur
        CHECK(seen2.insert(p.e2).second);
    }
}

TEST_CASE("early stopping halts a stalled run") {
    TinyEaData t = tiny_ea(131);
    MmeaConfig cfg = tiny_ea_config();
    cfg.lr = 0.0;  // nothing improves, the second evaluation must stop it
    cfg.epochs = 10;
    cfg.eval_every = 1;
    cfg.patience = 1;
    cfg.valid_frac = 0.34;
    MmeaModel m =
        make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 55);
    MmeaTrainResult r = train_mmea(m, t.data.alignment);
    CHECK(r.stopped_epoch == 1);
    CHECK(r.epoch_loss.size() == 2);
    REQUIRE(r.valid_hits1.size() == 2);
    CHECK(r.valid_hits1[0].second == r.valid_hits1[1].second);
}

TEST_CASE("training rejects an empty seed alignment") {
    TinyEaData t = tiny_ea(137);
    MmeaConfig cfg = tiny_ea_config();
    MmeaModel m =
        make_mmea_model(t.data.g1, t.data.g2, t.in1, t.in2, cfg, 5);
    AlignmentSet empty;
    CHECK_THROWS_AS(train_mmea(m, empty), std::invalid_argument);
}

TEST_SUITE_END();
