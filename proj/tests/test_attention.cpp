#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace simattn;
using test_util::max_rel_err;
using test_util::random_vec;

TEST_CASE("relevance weight examples") {
    Tensor fa({2}, {0.5, 0.2});
    Tensor fp({2}, {0.5, 0.6});
    Tensor fn({2}, {0.1, 0.2});
    WeightVector wv = weights(WeightKind::triplet, {fa, fp, fn});
    // w^p = (1, 0.6), w^n = (0.4, 0) -> w = (0.4, 0)
    CHECK(wv.parts[0][0] == Catch::Approx(1.0));
    CHECK(wv.parts[0][1] == Catch::Approx(0.6));
    CHECK(wv.parts[1][0] == Catch::Approx(0.4));
    CHECK(wv.parts[1][1] == Catch::Approx(0.0));
    CHECK(wv.w[0] == Catch::Approx(0.4));
    CHECK(wv.w[1] == Catch::Approx(0.0).margin(1e-15));

    WeightVector same = weights(WeightKind::siamese_same, {fa, fp});
    CHECK(same.w[0] == Catch::Approx(1.0));
    CHECK(same.w[1] == Catch::Approx(0.6));
    WeightVector diff = weights(WeightKind::siamese_diff, {fa, fn});
    CHECK(diff.w[0] == Catch::Approx(0.4));
    CHECK(diff.w[1] == Catch::Approx(0.0).margin(1e-15));

    Tensor fn2({2}, {0.9, 0.7});
    WeightVector quad = weights(WeightKind::quadruplet, {fa, fp, fn, fn2});
    CHECK(quad.w[0] == Catch::Approx(1.0 * 0.4 * 0.4));
    CHECK(quad.w[1] == Catch::Approx(0.0).margin(1e-15));

    CHECK_THROWS_AS(weights(WeightKind::triplet, {fa, fp}), std::invalid_argument);
}

TEST_CASE("weights stay in [0,1] for sigmoid-bounded embeddings") {
    Rng rng(21);
    for (int rep = 0; rep < 200; ++rep) {
        Tensor fa({4}, random_vec(rng, 4, 0.0, 1.0));
        Tensor fp({4}, random_vec(rng, 4, 0.0, 1.0));
        Tensor fn({4}, random_vec(rng, 4, 0.0, 1.0));
        Tensor fn2({4}, random_vec(rng, 4, 0.0, 1.0));
        for (auto kind :
             {WeightKind::siamese_same, WeightKind::siamese_diff, WeightKind::triplet,
              WeightKind::quadruplet}) {
            std::vector<Tensor> fs = {fa, fp};
            if (kind == WeightKind::triplet) fs = {fa, fp, fn};
            if (kind == WeightKind::quadruplet) fs = {fa, fp, fn, fn2};
            Tensor w = weights(kind, fs).w;
            for (int i = 0; i < w.size(); ++i) {
                CHECK(w[i] >= 0.0);
                CHECK(w[i] <= 1.0);
            }
        }
    }
}

TEST_CASE("sample scores are plain dot products") {
    Tensor w({3}, {1.0, 0.5, 0.0});
    Tensor f1({3}, {0.2, 0.4, 9.0});
    Tensor f2({3}, {1.0, 1.0, 1.0});
    auto s = sample_scores(w, {f1, f2});
    CHECK(s[0].item() == Catch::Approx(0.4));
    CHECK(s[1].item() == Catch::Approx(1.5));
}

TEST_CASE("attention map matches hand example") {
    // s = w^T f with f = GAP over channels of A; ds/dA_k = w_k / (m*n),
    // alpha_k = w_k / (m*n), M = ReLU(sum_k alpha_k A_k)
    RecordingGuard rec(true);
    Tensor a({2, 2, 2}, {1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0}, true);
    Tensor w({2}, {4.0, -8.0});
    Tensor f = global_avg(a);
    Tensor s = dot(w, f);
    Tensor m = attention_map(s, a, false);
    // alpha = (1, -2); pre-relu = A_0 - 2 A_1 = (3, 2, 1, 0)
    REQUIRE(m.shape() == Shape{2, 2});
    CHECK(m[0] == Catch::Approx(3.0));
    CHECK(m[1] == Catch::Approx(2.0));
    CHECK(m[2] == Catch::Approx(1.0));
    CHECK(m[3] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("attention map agrees with independent per-channel loop oracle") {
    Rng rng(31);
    EncoderConfig cfg = EncoderConfig::tiny();
    Encoder enc(cfg, 8);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor x({1, 16, 16}, random_vec(rng, 256, 0.0, 1.0));
        Tensor wfix({cfg.embedding_dim}, random_vec(rng, cfg.embedding_dim, 0.0, 1.0));

        RecordingGuard rec(true);
        Encoded e = enc.encode(x);
        Tensor s = dot(wfix, e.f);
        Tensor m = attention_map(s, e.a, false);

        // oracle: raw score gradient, scalar GAP per channel, explicit loops
        GradientMap gm = backward(s, false, {e.a});
        const auto& ga = gm.at(e.a).data();
        int c = e.a.shape()[0], hw = e.a.shape()[1] * e.a.shape()[2];
        std::vector<double> oracle(hw, 0.0);
        for (int k = 0; k < c; ++k) {
            double alpha = 0.0;
            for (int i = 0; i < hw; ++i) alpha += ga[k * hw + i];
            alpha /= hw;
            for (int i = 0; i < hw; ++i) oracle[i] += alpha * e.a[k * hw + i];
        }
        for (auto& v : oracle) v = std::max(0.0, v);
        REQUIRE(m.size() == hw);
        for (int i = 0; i < hw; ++i) CHECK(std::fabs(m[i] - oracle[i]) < 1e-10);
    }
}

TEST_CASE("attention map rejects scores outside the graph") {
    Tensor a({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor s({}, {1.0});
    CHECK_THROWS_AS(attention_map(s, a, false), std::invalid_argument);
}

TEST_CASE("soft mask examples") {
    MaskConfig cfg;  // alpha=10, beta=0.5, normalize
    Tensor x = Tensor({1, 4, 4}, std::vector<double>(16, 1.0));

    // M == 0 everywhere: keep factor = 1 - sigmoid(-5) ~= 0.99331
    Tensor m0 = Tensor::zeros({2, 2});
    Tensor xh = soft_mask(x, m0, cfg);
    double keep0 = 1.0 - 1.0 / (1.0 + std::exp(5.0));
    for (int i = 0; i < 16; ++i) CHECK(xh[i] == Catch::Approx(keep0).epsilon(1e-9));

    // a pixel exactly at beta after normalization keeps half its value
    Tensor mh({1, 1}, {0.5});
    MaskConfig nonorm = cfg;
    nonorm.normalize = false;
    Tensor xh2 = soft_mask(Tensor({1, 1, 1}, {2.0}), mh, nonorm);
    CHECK(xh2[0] == Catch::Approx(1.0));

    // normalization makes masking scale invariant
    Tensor m({2, 2}, {0.1, 0.2, 0.3, 0.4});
    Tensor ms({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor ya = soft_mask(x, m, cfg);
    Tensor yb = soft_mask(x, ms, cfg);
    CHECK(max_rel_err(ya.data(), yb.data()) < 1e-12);
}

TEST_CASE("corner-aligned upsampling reproduces corners exactly") {
    Tensor m({2, 2}, {0.0, 1.0, 2.0, 3.0});
    Tensor up = upsample_bilinear(m, 4, 4);
    REQUIRE(up.shape() == Shape{4, 4});
    CHECK(up[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(up[3] == Catch::Approx(1.0));
    CHECK(up[12] == Catch::Approx(2.0));
    CHECK(up[15] == Catch::Approx(3.0));
    // interior is a convex combination: monotone along the top row
    CHECK(up[1] > up[0]);
    CHECK(up[2] > up[1]);
    CHECK(up[3] > up[2]);
}

TEST_CASE("attention map is nonnegative and soft mask attenuates") {
    Rng rng(41);
    EncoderConfig cfg = EncoderConfig::tiny();
    Encoder enc(cfg, 12);
    MaskConfig mcfg;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x({1, 16, 16}, random_vec(rng, 256, 0.0, 1.0));
        RecordingGuard rec(true);
        Encoded e = enc.encode(x);
        Tensor w({cfg.embedding_dim}, random_vec(rng, cfg.embedding_dim, 0.0, 1.0));
        Tensor s = dot(w, e.f);
        Tensor m = attention_map(s, e.a, false);
        for (int i = 0; i < m.size(); ++i) CHECK(m[i] >= 0.0);
        Tensor xh = soft_mask(x, m, mcfg);
        for (int i = 0; i < xh.size(); ++i) {
            CHECK(xh[i] >= 0.0);
            CHECK(xh[i] <= x[i] + 1e-15);
        }
    }
}

TEST_CASE("mining loss examples") {
    Tensor fa({2}, {0.0, 0.0});
    Tensor fp({2}, {0.3, 0.0});
    Tensor fn({2}, {1.0, 0.0});
    CHECK(mining_loss(Arch::triplet, {fa, fp, fn}).item() == Catch::Approx(0.7).epsilon(1e-6));
    CHECK(mining_loss(Arch::siamese, {fa, fp}).item() == Catch::Approx(-0.3).epsilon(1e-6));
    Tensor fn2({2}, {0.0, 0.5});
    CHECK(mining_loss(Arch::quadruplet, {fa, fp, fn, fn2}).item() ==
          Catch::Approx(0.7 + 0.2).epsilon(1e-6));
    CHECK_THROWS_AS(mining_loss(Arch::triplet, {fa, fp}), std::invalid_argument);
}

TEST_CASE("total loss is additive in gamma") {
    Rng rng(51);
    for (int rep = 0; rep < 50; ++rep) {
        double lml = rng.uniform(0.0, 2.0);
        double lsm = rng.uniform(-1.0, 2.0);
        double gamma = rng.uniform(0.0, 1.0);
        Tensor a({}, {lml}), b({}, {lsm});
        CHECK(std::fabs(total_loss(a, b, gamma).item() - (lml + gamma * lsm)) < 1e-9);
    }
    CHECK_THROWS_AS(total_loss(Tensor({}, {1.0}), Tensor({}, {1.0}), -0.1),
                    std::invalid_argument);
}

TEST_CASE("full pipeline gradient matches finite differences") {
    // L = L_ml + gamma L_sm through attention, masking and re-encoding, with
    // the relevance weights inside the graph so every path contributes.
    EncoderConfig cfg = EncoderConfig::tiny();
    Encoder enc(cfg, 23);
    Rng rng(61);
    Tensor xa({1, 16, 16}, random_vec(rng, 256, 0.0, 1.0));
    Tensor xp({1, 16, 16}, random_vec(rng, 256, 0.0, 1.0));
    Tensor xn({1, 16, 16}, random_vec(rng, 256, 0.0, 1.0));
    MaskConfig mcfg;
    double gamma = 0.2;

    auto loss_of = [&](Encoder& e) {
        RecordingGuard rec(true);
        Encoded ea = e.encode(xa), ep = e.encode(xp), en = e.encode(xn);
        Tensor lml = triplet_loss(ea.f, ep.f, en.f, 0.3);
        Tensor w = weights(WeightKind::triplet, {ea.f, ep.f, en.f}).w;
        std::vector<Tensor> masked;
        std::vector<Encoded> es = {ea, ep, en};
        std::vector<Tensor> xs = {xa, xp, xn};
        for (int i = 0; i < 3; ++i) {
            Tensor s = dot(w, es[i].f);
            Tensor m = attention_map(s, es[i].a, true);
            Tensor xh = soft_mask(xs[i], m, mcfg);
            masked.push_back(e.encode(xh).f);
        }
        Tensor lsm = mining_loss(Arch::triplet, masked);
        return total_loss(lml, lsm, gamma);
    };

    GradientMap g = backward(loss_of(enc));
    Rng pick(7);
    double worst = 0.0;
    for (const char* pname : {"conv0.w", "conv1.w", "embed.w", "conv1.b", "embed.b"}) {
        Tensor& p = enc.parameters().at(pname);
        Tensor gp = g.at_or_zero(p);
        for (int rep = 0; rep < 4; ++rep) {
            int i = pick.uniform_int(p.size());
            double orig = p.data()[i], h = 1e-5;
            p.mutable_data()[i] = orig + h;
            double lp = loss_of(enc).item();
            p.mutable_data()[i] = orig - h;
            double lm = loss_of(enc).item();
            p.mutable_data()[i] = orig;
            worst = std::max(worst, test_util::rel_err(gp[i], (lp - lm) / (2 * h), 1e-4));
        }
    }
    CHECK(worst < 1e-3);
}
