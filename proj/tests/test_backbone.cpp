#include <gtest/gtest.h>

#include <cmath>

#include "mmnet/backbone.hpp"
#include "mmnet/error.hpp"
#include "mmnet/gradcheck.hpp"
#include "test_util.hpp"

using namespace mmnet;

TEST(Backbone, SpatialChainOfDefaultInputs)
{
    for (const auto& cfg : {BackboneConfig::desk(), BackboneConfig::full()}) {
        EXPECT_EQ(cfg.conv3_size(127), 10) << cfg.preset;
        EXPECT_EQ(cfg.conv5_size(127), 6) << cfg.preset;
        EXPECT_EQ(cfg.conv3_size(255), 26) << cfg.preset;
        EXPECT_EQ(cfg.conv5_size(255), 22) << cfg.preset;
        EXPECT_EQ(cfg.total_stride(), 8);
    }
}

TEST(Backbone, PresetChannels)
{
    const auto full = BackboneConfig::full();
    EXPECT_EQ(full.conv3_channels(), 384);
    EXPECT_EQ(full.conv5_channels(), 256);
    const auto desk = BackboneConfig::desk();
    EXPECT_EQ(desk.conv3_channels(), 32);
    EXPECT_EQ(desk.conv5_channels(), 24);
    EXPECT_THROW(BackboneConfig::from_preset("huge"), ConfigError);
}

TEST(Backbone, TooSmallInputNamesTheLayer)
{
    try {
        BackboneConfig::desk().spatial_chain(40);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos) << e.what();
    }
}

TEST(Backbone, ForwardShapesOnBatch)
{
    const auto cfg = BackboneConfig::desk();
    const auto params = build_backbone<float>(cfg, 3);
    Rng rng(1);
    const auto x = testutil::random_tensor<float>({2, 1, 127, 127}, rng, 0, 1);
    const auto f = backbone_forward(params, cfg, x);
    EXPECT_EQ(f.conv3.shape(), (Shape{2, 32, 10, 10}));
    EXPECT_EQ(f.conv5.shape(), (Shape{2, 24, 6, 6}));
}

TEST(Backbone, FanInScaledInit)
{
    const auto cfg = BackboneConfig::desk();
    const auto params = build_backbone<double>(cfg, 5);
    const auto& w = params.at(conv_weight_name(2));
    double sq = 0;
    for (double v : w.values()) sq += v * v;
    const double fan_in = w.c() * w.h() * w.w();
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(w.size())), std::sqrt(2.0 / fan_in), 0.1 * std::sqrt(2.0 / fan_in));
    for (double b : params.at(conv_bias_name(2)).values()) EXPECT_EQ(b, 0.0);
}

TEST(Backbone, SeedDeterminesWeights)
{
    const auto cfg = BackboneConfig::desk();
    EXPECT_EQ(build_backbone<float>(cfg, 9), build_backbone<float>(cfg, 9));
    EXPECT_NE(build_backbone<float>(cfg, 9), build_backbone<float>(cfg, 10));
}

TEST(Backbone, GradientOfBothTaps)
{
    // Small custom topology keeps the check fast.
    BackboneConfig cfg = BackboneConfig::desk();
    cfg.layers = {ConvLayerSpec{4, 3, 1, true}, ConvLayerSpec{4, 3, 1, false}, ConvLayerSpec{4, 3, 1, false},
                  ConvLayerSpec{4, 3, 1, false}, ConvLayerSpec{3, 3, 1, false}};
    const auto weights = build_backbone<double>(cfg, 2);
    Rng rng(4);
    const auto x = testutil::random_tensor<double>({1, 1, 25, 25}, rng, 0, 1);
    const auto probe = backbone_forward(weights, cfg, x);
    const auto r3 = testutil::random_tensor<double>(probe.conv3.shape(), rng);
    const auto r5 = testutil::random_tensor<double>(probe.conv5.shape(), rng);
    const Objective fw = [&](const ParamsD& q, ParamsD* g) {
        BackboneTape<double> tape;
        const auto out = backbone_forward(q, cfg, x, g ? &tape : nullptr);
        if (g) backbone_backward(q, cfg, tape, r3, r5, *g);
        return dot(out.conv3, r3) + dot(out.conv5, r5);
    };
    EXPECT_LT(grad_check(fw, weights, "backbone").max_rel_error, 1e-4);
}

TEST(Freeze, PoliciesSelectTheRightTensors)
{
    Params p;
    for (const char* n : {"backbone.conv1.weight", "backbone.conv3.bias", "backbone.conv4.weight", "fanet.enc1.weight",
                          "heads.fin.gain", "heads.dis.gain", "heads.cls.weight"})
        p.add(n, Tensor(1, 1, 1, 1));
    const auto first3 = freeze_mask(p, FreezePolicy::first3);
    EXPECT_EQ(first3, (std::vector<bool>{true, true, false, false, false, false, false}));
    const auto cls = freeze_mask(p, FreezePolicy::classifier_only);
    EXPECT_EQ(cls, (std::vector<bool>{false, false, false, false, false, false, true}));
    const auto both = freeze_mask(p, {FreezePolicy::first3, FreezePolicy::fine_grained_branch});
    EXPECT_EQ(both, (std::vector<bool>{true, true, false, true, true, false, false}));
    EXPECT_EQ(freeze_mask(p, FreezePolicy::none), std::vector<bool>(7, false));
    EXPECT_EQ(parse_freeze_policy(to_string(FreezePolicy::fine_grained_branch)), FreezePolicy::fine_grained_branch);
    EXPECT_THROW(parse_freeze_policy("everything"), ConfigError);
}
