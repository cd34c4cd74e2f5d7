#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mmnet/error.hpp"
#include "mmnet/gradcheck.hpp"
#include "mmnet/heads.hpp"
#include "mmnet/ops.hpp"
#include "test_util.hpp"

using namespace mmnet;
using testutil::random_tensor;

TEST(Correlation, MatchesLoopAndHasValidExtent)
{
    Rng rng(1);
    const auto z = random_tensor<double>({1, 3, 4, 5}, rng);
    const auto x = random_tensor<double>({1, 3, 9, 8}, rng);
    const auto r = cross_correlate(z, x);
    ASSERT_EQ(r.shape(), (Shape{1, 1, 6, 4}));
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int c = 0; c < 3; ++c)
                for (int u = 0; u < 4; ++u)
                    for (int v = 0; v < 5; ++v) acc += z(0, c, u, v) * x(0, c, i + u, j + v);
            EXPECT_NEAR(r(0, 0, i, j), acc, 1e-12);
        }
    EXPECT_THROW(cross_correlate(x, z), ShapeError);
}

TEST(Correlation, Gradient)
{
    Rng rng(2);
    ParamsD p;
    p.add("z", random_tensor<double>({1, 2, 3, 3}, rng));
    p.add("x", random_tensor<double>({1, 2, 7, 6}, rng));
    const auto r = random_tensor<double>({1, 1, 5, 4}, rng);
    const Objective f = [&](const ParamsD& q, ParamsD* g) {
        if (g) {
            auto cg = cross_correlate_backward(q.at("z"), q.at("x"), r);
            add_inplace(g->at("z"), cg.templ);
            add_inplace(g->at("x"), cg.search);
        }
        return dot(cross_correlate(q.at("z"), q.at("x")), r);
    };
    EXPECT_LT(grad_check(f, p, "xcorr").max_rel_error, 1e-6);
}

TEST(GaussianLabel, PeaksAtOriginWithCircularSymmetry)
{
    const auto g = gaussian_label<double>(6, 8, 1.5);
    EXPECT_DOUBLE_EQ(g(0, 0, 0, 0), 1.0);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) {
            EXPECT_LE(g(0, 0, i, j), 1.0);
            EXPECT_NEAR(g(0, 0, i, j), g(0, 0, (6 - i) % 6, (8 - j) % 8), 1e-15);
        }
    // Circular distance 1 in both directions.
    EXPECT_NEAR(g(0, 0, 0, 1), std::exp(-1.0 / (2 * 1.5 * 1.5)), 1e-15);
    EXPECT_NEAR(g(0, 0, 0, 7), g(0, 0, 0, 1), 1e-15);
}

TEST(HannWindow, StrictlyPositiveAndSymmetric)
{
    for (int n : {1, 6, 7, 17}) {
        const auto w = hann_window<double>(n);
        ASSERT_EQ(static_cast<int>(w.size()), n);
        for (int i = 0; i < n; ++i) {
            EXPECT_GT(w[i], 0.0);
            EXPECT_LE(w[i], 1.0);
            EXPECT_NEAR(w[i], w[n - 1 - i], 1e-15);
        }
    }
    EXPECT_DOUBLE_EQ(hann_window<double>(1)[0], 1.0);
}

TEST(CfBlock, RidgeZeroReproducesLabelOnRandomTemplate)
{
    // For one channel without window the filter solves the correlation
    // equation exactly, whatever the template.
    Rng rng(3);
    CFConfig cf;
    cf.lambda = 0;
    cf.window = false;
    const int n = 6;
    const auto z = random_tensor<double>({1, 1, n, n}, rng, 0.5, 1.5);
    const auto w = cf_block(z, cf);
    const auto g = gaussian_label<double>(n, n, cf.sigma_fraction * n);
    for (int sy = 0; sy < n; ++sy)
        for (int sx = 0; sx < n; ++sx) {
            double acc = 0;
            for (int u = 0; u < n; ++u)
                for (int v = 0; v < n; ++v) acc += w(0, 0, u, v) * z(0, 0, (u + sy) % n, (v + sx) % n);
            EXPECT_NEAR(acc, g(0, 0, sy, sx), 1e-8);
        }
}

TEST(CfBlock, RidgeShrinksTheFilter)
{
    Rng rng(4);
    const auto z = random_tensor<double>({1, 3, 6, 6}, rng);
    CFConfig lo, hi;
    lo.lambda = 0.01;
    hi.lambda = 10.0;
    const auto a = cf_block(z, lo), b = cf_block(z, hi);
    EXPECT_LT(dot(b, b), dot(a, a));
    CFConfig bad;
    bad.lambda = -1;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(LabelMap, DiscWeightsAndOffsets)
{
    const auto m = make_label_map(17, 2.0, 0.5);
    EXPECT_EQ(m.positives(), 13);
    EXPECT_NEAR(std::accumulate(m.weights.begin(), m.weights.end(), 0.0), 1.0, 1e-12);
    double pos = 0;
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (m.values[i] > 0) pos += m.weights[i];
    EXPECT_NEAR(pos, 0.5, 1e-12);
    EXPECT_EQ(m.values[8 * 17 + 8], 1.0);
    EXPECT_EQ(m.values[8 * 17 + 11], -1.0);

    const auto shifted = make_label_map(17, 2.0, 0.5, -1.0, 1.0);
    EXPECT_EQ(shifted.values[7 * 17 + 9], 1.0);
    EXPECT_EQ(shifted.values[7 * 17 + 12], -1.0);
    EXPECT_EQ(shifted.positives(), 13);
}

TEST(Losses, KnownValues)
{
    const auto labels = make_label_map(5, 1.0);
    const TensorD zero(1, 1, 5, 5);
    EXPECT_NEAR(logistic_loss(zero, labels).value, std::log(2.0), 1e-15);
    const TensorD logits(Shape{2, 4, 1, 1}, 0.0);
    EXPECT_NEAR(cross_entropy(logits, {0, 3}).value, std::log(4.0), 1e-15);
    EXPECT_THROW(cross_entropy(logits, {0, 4}), InputError);
}

TEST(Losses, LogisticGradient)
{
    Rng rng(6);
    ParamsD p;
    p.add("o", random_tensor<double>({1, 1, 9, 9}, rng, -3, 3));
    const auto labels = make_label_map(9, 1.5, 0.3, 0.5, -1.0);
    const Objective f = [&](const ParamsD& q, ParamsD* g) {
        const auto l = logistic_loss(q.at("o"), labels);
        if (g) add_inplace(g->at("o"), l.grad);
        return l.value;
    };
    EXPECT_LT(grad_check(f, p, "logistic").max_rel_error, 1e-6);
}

TEST(Classifier, ShapesAndInitialGain)
{
    const auto heads = build_heads<float>(24, 30, 1);
    EXPECT_EQ(heads.at(head_names::cls_weight).shape(), (Shape{30, 24, 1, 1}));
    EXPECT_FLOAT_EQ(heads.at(head_names::dis_gain)[0], 1e-3f);
    EXPECT_FLOAT_EQ(heads.at(head_names::fin_gain)[0], 1e-3f);
    Rng rng(2);
    const auto c5 = random_tensor<float>({3, 24, 6, 6}, rng);
    const auto logits = classification_forward(c5, heads.at(head_names::cls_weight), heads.at(head_names::cls_bias));
    EXPECT_EQ(logits.shape(), (Shape{3, 30, 1, 1}));
}

TEST(MultiTaskLoss, WeightedSum)
{
    EXPECT_DOUBLE_EQ(multi_task_loss(1.0, 2.0, 3.0, {1, 1, 1}), 6.0);
    EXPECT_DOUBLE_EQ(multi_task_loss(1.0, 2.0, 3.0, {0.5, 0, 2}), 6.5);
}
