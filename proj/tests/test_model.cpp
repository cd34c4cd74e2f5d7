#include <gtest/gtest.h>

#include <cmath>

#include "mmnet/error.hpp"
#include "mmnet/model.hpp"
#include "mmnet/ops.hpp"
#include "test_util.hpp"

using namespace mmnet;
using testutil::random_tensor;

namespace {

PairSample<float> random_sample(const ModelConfig& cfg, std::uint64_t seed)
{
    Rng rng(seed);
    PairSample<float> s;
    s.exemplar = random_tensor<float>({1, 1, 127, 127}, rng, 0, 1);
    s.search = random_tensor<float>({1, 1, 255, 255}, rng, 0, 1);
    s.labels = make_label_map(cfg.response_size(), cfg.label_radius);
    s.class_id = 2;
    return s;
}

double max_abs(const Tensor& a, const Tensor& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

} // namespace

TEST(Model, ResponseSizeAndValidation)
{
    ModelConfig cfg;
    EXPECT_EQ(cfg.response_size(), 17);
    cfg.num_classes = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Model, ParameterGroups)
{
    const auto p = build_model<float>(ModelConfig{}, 1);
    int backbone = 0, fanet = 0, heads = 0;
    for (const auto& e : p) {
        backbone += e.name.rfind("backbone.", 0) == 0;
        fanet += e.name.rfind("fanet.", 0) == 0;
        heads += e.name.rfind("heads.", 0) == 0;
    }
    EXPECT_EQ(backbone, 10);
    EXPECT_EQ(fanet, 17);
    EXPECT_EQ(heads, 6);
    EXPECT_EQ(backbone + fanet + heads, static_cast<int>(p.size()));
}

TEST(Model, ForwardOutputsAndLossComposition)
{
    ModelConfig cfg;
    const auto params = build_model<float>(cfg, 2);
    const auto s = random_sample(cfg, 3);
    const auto out = pair_forward_backward<float>(params, cfg, s, LossWeights{0.5, 2.0, 1.5}, nullptr);
    EXPECT_EQ(out.response_dis.shape(), (Shape{1, 1, 17, 17}));
    EXPECT_EQ(out.response_fin.shape(), (Shape{1, 1, 17, 17}));
    EXPECT_EQ(out.logits.shape(), (Shape{1, 30, 1, 1}));
    EXPECT_NEAR(out.total, 0.5 * out.l_dis + 2.0 * out.l_cls + 1.5 * out.l_fin, 1e-5);
    // Small initial gain: both logistic losses start near log 2.
    EXPECT_NEAR(out.l_dis, std::log(2.0), 0.05);
    EXPECT_NEAR(out.l_fin, std::log(2.0), 0.05);
}

TEST(Model, TrackingPathMatchesTrainingPath)
{
    ModelConfig cfg;
    auto params = build_model<float>(cfg, 4);
    params.at(head_names::dis_gain)[0] = 0.7f;
    params.at(head_names::fin_gain)[0] = 1.3f;
    params.at(fanet_names::delta)[0] = 0.2f;
    const auto s = random_sample(cfg, 5);
    const auto out = pair_forward_backward<float>(params, cfg, s, LossWeights{}, nullptr);
    const auto filters = template_filters(template_features(params, cfg, s.exemplar), cfg);
    const auto r = search_responses(params, cfg, filters, s.search);
    EXPECT_LT(max_abs(r.dis, out.response_dis), 1e-4);
    EXPECT_LT(max_abs(r.fin, out.response_fin), 1e-4);
    EXPECT_LT(max_abs(discriminative_similarity(params, cfg, s.exemplar, s.search), out.response_dis), 1e-4);
    EXPECT_LT(max_abs(fine_grained_similarity(params, cfg, s.exemplar, s.search), out.response_fin), 1e-4);
}

TEST(Model, MaskedBranchLeavesNoGradient)
{
    ModelConfig cfg;
    const auto params = build_model<float>(cfg, 6);
    const auto s = random_sample(cfg, 7);
    auto grads = params.zeros_like();
    BranchMask mask;
    mask.fin = false;
    mask.cls = false;
    const auto out = pair_forward_backward<float>(params, cfg, s, LossWeights{}, &grads, mask);
    EXPECT_GT(out.l_fin, 0.0f);
    EXPECT_GT(out.l_cls, 0.0f);
    for (const auto& e : grads) {
        const bool silent = e.name.rfind("fanet.", 0) == 0 || e.name.rfind("heads.fin.", 0) == 0 ||
                            e.name.rfind("heads.cls.", 0) == 0;
        double norm = 0;
        for (float v : e.value.values()) norm += std::abs(v);
        if (silent) EXPECT_EQ(norm, 0.0) << e.name;
    }
    EXPECT_NE(grads.at(head_names::dis_gain)[0], 0.0f);
}

TEST(Model, ZeroWeightEqualsMaskedBranch)
{
    ModelConfig cfg;
    const auto params = build_model<float>(cfg, 8);
    const auto s = random_sample(cfg, 9);
    auto a = params.zeros_like(), b = params.zeros_like();
    pair_forward_backward<float>(params, cfg, s, LossWeights{1, 0, 1}, &a);
    BranchMask mask;
    mask.cls = false;
    pair_forward_backward<float>(params, cfg, s, LossWeights{1, 1, 1}, &b, mask);
    EXPECT_EQ(a, b);
}

TEST(Fusion, ConvexCombination)
{
    const Tensor d(Shape{1, 1, 1, 2}, std::vector<float>{2, 4});
    const Tensor f(Shape{1, 1, 1, 2}, std::vector<float>{0, 8});
    EXPECT_EQ(fuse_responses(d, f, 1.0), d);
    EXPECT_EQ(fuse_responses(d, f, 0.0), f);
    const auto half = fuse_responses(d, f, 0.5);
    EXPECT_FLOAT_EQ(half[0], 1.0f);
    EXPECT_FLOAT_EQ(half[1], 6.0f);
    EXPECT_THROW(fuse_responses(d, Tensor(1, 1, 2, 2), 0.5), ShapeError);
}
