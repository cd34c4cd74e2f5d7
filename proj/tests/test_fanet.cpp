#include <gtest/gtest.h>

#include <cmath>

#include "mmnet/error.hpp"
#include "mmnet/fanet.hpp"
#include "mmnet/gradcheck.hpp"
#include "mmnet/ops.hpp"
#include "test_util.hpp"

using namespace mmnet;
using testutil::random_tensor;

TEST(Fanet, ParameterShapes)
{
    const auto p = build_fanet<float>(32, 1);
    EXPECT_EQ(p.at("fanet.enc1.weight").shape(), (Shape{16, 32, 5, 5}));
    EXPECT_EQ(p.at("fanet.enc2.weight").shape(), (Shape{8, 16, 5, 5}));
    EXPECT_EQ(p.at("fanet.dec1.weight").shape(), (Shape{8, 16, 4, 4}));
    EXPECT_EQ(p.at("fanet.dec2.weight").shape(), (Shape{16, 1, 4, 4}));
    EXPECT_EQ(p.at("fanet.query.weight").shape(), (Shape{16, 32, 1, 1}));
    EXPECT_EQ(p.at("fanet.value.weight").shape(), (Shape{32, 32, 1, 1}));
    EXPECT_EQ(p.at("fanet.fuse.weight").shape(), (Shape{32, 64, 1, 1}));
    EXPECT_EQ(p.at(fanet_names::delta)[0], 0.0f);
}

TEST(Fanet, FuseStartsNearTheAverageOfBothPaths)
{
    const auto p = build_fanet<double>(8, 2);
    const auto& w = p.at("fanet.fuse.weight");
    for (int o = 0; o < 8; ++o) {
        EXPECT_NEAR(w(o, o, 0, 0), 0.5, 0.05);
        EXPECT_NEAR(w(o, 8 + o, 0, 0), 0.5, 0.05);
        EXPECT_NEAR(w(o, (o + 1) % 8, 0, 0), 0.0, 0.05);
    }
}

TEST(Fanet, RejectsChannelsNotDivisibleByFour)
{
    EXPECT_THROW(build_fanet<float>(6, 1), ConfigError);
}

TEST(Fanet, OutputKeepsShapeOnBothTapSizes)
{
    const auto p = build_fanet<float>(32, 3);
    Rng rng(1);
    for (int s : {10, 26}) {
        const auto x = random_tensor<float>({1, 32, s, s}, rng);
        EXPECT_EQ(fanet_forward(x, p).shape(), x.shape()) << s;
        EXPECT_EQ(holistic_correlation(x, p).shape(), x.shape()) << s;
    }
}

TEST(Fanet, AttentionIsRowStochastic)
{
    auto p = build_fanet<double>(8, 4);
    Rng rng(5);
    const auto x = random_tensor<double>({2, 8, 5, 6}, rng, -3, 3);
    const auto a = pixel_correlation_map(x, p);
    ASSERT_EQ(a.shape(), (Shape{2, 1, 30, 30}));
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 30; ++i) {
            double s = 0;
            for (int j = 0; j < 30; ++j) {
                EXPECT_GE(a(n, 0, i, j), 0.0);
                s += a(n, 0, i, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(Fanet, ZeroDeltaPixelPathIsIdentity)
{
    const auto p = build_fanet<float>(16, 6);
    Rng rng(2);
    const auto x = random_tensor<float>({1, 16, 7, 7}, rng);
    EXPECT_EQ(pixel_correlation(x, p), x);
}

TEST(Fanet, HolisticGateScalesEveryChannelAlike)
{
    const auto p = build_fanet<double>(8, 7);
    Rng rng(3);
    const auto x = random_tensor<double>({1, 8, 6, 6}, rng, 0.5, 1.0);
    const auto h = holistic_correlation(x, p);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            const double g = h(0, 0, i, j) / x(0, 0, i, j);
            EXPECT_GT(g, 0.0);
            EXPECT_LT(g, 1.0);
            for (int c = 1; c < 8; ++c) EXPECT_NEAR(h(0, c, i, j) / x(0, c, i, j), g, 1e-12);
        }
}

TEST(Fanet, GradientWithNonzeroDelta)
{
    auto p = build_fanet<double>(8, 9);
    p.at(fanet_names::delta)[0] = 0.4;
    Rng rng(11);
    p.add("x", random_tensor<double>({2, 8, 6, 6}, rng));
    const auto r = random_tensor<double>({2, 8, 6, 6}, rng);
    const Objective f = [&](const ParamsD& q, ParamsD* g) {
        FanetTape<double> tape;
        const auto y = fanet_forward(q.at("x"), q, g ? &tape : nullptr);
        if (g) add_inplace(g->at("x"), fanet_backward(q, tape, r, *g));
        return dot(y, r);
    };
    EXPECT_LT(grad_check(f, p, "fanet").max_rel_error, 1e-4);
}
