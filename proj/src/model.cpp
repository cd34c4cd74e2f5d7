#include "mmnet/model.hpp"

#include "mmnet/ops.hpp"

namespace mmnet {

int ModelConfig::response_size() const
{
    return backbone.conv5_size(backbone.search_size) - backbone.conv5_size(backbone.exemplar_size) + 1;
}

void ModelConfig::validate() const
{
    backbone.validate();
    cf.validate();
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    const int m3 = backbone.conv3_size(backbone.search_size) - backbone.conv3_size(backbone.exemplar_size) + 1;
    if (m3 != response_size())
        throw ConfigError("conv3 and conv5 response maps differ in size (" + std::to_string(m3) + " vs " +
                          std::to_string(response_size()) + ")");
}

template <typename T>
ParamSet<T> build_model(const ModelConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    ParamSet<T> params = build_backbone<T>(cfg.backbone, seed);
    for (auto& e : build_fanet<T>(cfg.backbone.conv3_channels(), seed + 1)) params.add(e.name, std::move(e.value));
    for (auto& e : build_heads<T>(cfg.backbone.conv5_channels(), cfg.num_classes, seed + 2, cfg.gain_init))
        params.add(e.name, std::move(e.value));
    return params;
}

namespace {

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& raw, T gain, T bias)
{
    BasicTensor<T> out(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = gain * raw[i] + bias;
    return out;
}

template <typename T>
void require_finite_term(T v, const char* term)
{
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " loss");
}

} // namespace

template <typename T>
PairOutput<T> pair_forward_backward(const ParamSet<T>& params, const ModelConfig& cfg, const PairSample<T>& sample,
                                    const LossWeights& weights, ParamSet<T>* grads, BranchMask mask)
{
    using namespace head_names;
    BackboneTape<T> tape_z, tape_y;
    const bool train = grads != nullptr;
    auto fz = backbone_forward(params, cfg.backbone, sample.exemplar, train ? &tape_z : nullptr);
    auto fy = backbone_forward(params, cfg.backbone, sample.search, train ? &tape_y : nullptr);

    PairOutput<T> out;
    const T gain_d = params.at(dis_gain)[0], bias_d = params.at(dis_bias)[0];
    const T gain_f = params.at(fin_gain)[0], bias_f = params.at(fin_bias)[0];

    // Discriminative branch.
    auto filt_d = cf_block(fz.conv5, cfg.cf);
    auto raw_d = cross_correlate(filt_d, fy.conv5);
    out.response_dis = affine(raw_d, gain_d, bias_d);
    auto loss_d = logistic_loss(out.response_dis, sample.labels);

    // Fine-grained branch.
    FanetTape<T> tape_a, tape_b;
    auto fa = fanet_forward(fz.conv3, params, train ? &tape_a : nullptr);
    auto fb = fanet_forward(fy.conv3, params, train ? &tape_b : nullptr);
    auto filt_f = cf_block(fa, cfg.cf);
    auto raw_f = cross_correlate(filt_f, fb);
    out.response_fin = affine(raw_f, gain_f, bias_f);
    auto loss_f = logistic_loss(out.response_fin, sample.labels);

    // Classification branch on the exemplar stream.
    out.logits = classification_forward(fz.conv5, params.at(cls_weight), params.at(cls_bias));
    auto loss_c = cross_entropy(out.logits, std::vector<int>{sample.class_id});

    out.l_dis = loss_d.value;
    out.l_cls = loss_c.value;
    out.l_fin = loss_f.value;
    require_finite_term(out.l_dis, "discriminative");
    require_finite_term(out.l_cls, "classification");
    require_finite_term(out.l_fin, "fine-grained");
    out.total = static_cast<T>(multi_task_loss(out.l_dis, out.l_cls, out.l_fin, weights));
    if (!train) return out;

    BasicTensor<T> g_z3, g_z5(fz.conv5.shape()), g_y3, g_y5;

    if (mask.dis) {
        auto g_o = scaled(loss_d.grad, static_cast<T>(weights.dis));
        grads->at(dis_gain)[0] += dot(g_o, raw_d);
        T gb = 0;
        for (auto v : g_o.values()) gb += v;
        grads->at(dis_bias)[0] += gb;
        auto cg = cross_correlate_backward(filt_d, fy.conv5, scaled(g_o, gain_d));
        add_inplace(g_z5, cf_block_backward(fz.conv5, cfg.cf, cg.templ));
        g_y5 = std::move(cg.search);
    }
    if (mask.fin) {
        auto g_o = scaled(loss_f.grad, static_cast<T>(weights.fin));
        grads->at(fin_gain)[0] += dot(g_o, raw_f);
        T gb = 0;
        for (auto v : g_o.values()) gb += v;
        grads->at(fin_bias)[0] += gb;
        auto cg = cross_correlate_backward(filt_f, fb, scaled(g_o, gain_f));
        auto g_a = cf_block_backward(fa, cfg.cf, cg.templ);
        g_z3 = fanet_backward(params, tape_a, g_a, *grads);
        g_y3 = fanet_backward(params, tape_b, cg.search, *grads);
    }
    if (mask.cls) {
        auto g_logits = scaled(loss_c.grad, static_cast<T>(weights.cls));
        auto cg = classification_backward(fz.conv5, params.at(cls_weight), g_logits);
        add_inplace(grads->at(cls_weight), cg.weight);
        add_inplace(grads->at(cls_bias), cg.bias);
        add_inplace(g_z5, cg.conv5);
    }
    if (mask.dis || mask.cls || mask.fin) {
        backbone_backward(params, cfg.backbone, tape_z, g_z3, g_z5, *grads);
        if (mask.dis || mask.fin) backbone_backward(params, cfg.backbone, tape_y, g_y3, g_y5, *grads);
    }
    return out;
}

template <typename T>
TemplateFeatures<T> template_features(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& exemplar)
{
    auto f = backbone_forward(params, cfg.backbone, exemplar);
    return {std::move(f.conv5), fanet_forward(f.conv3, params)};
}

template <typename T>
TemplateFeatures<T> template_filters(const TemplateFeatures<T>& features, const ModelConfig& cfg)
{
    return {cf_block(features.dis, cfg.cf), cf_block(features.fin, cfg.cf)};
}

template <typename T>
BranchResponses<T> search_responses(const ParamSet<T>& params, const ModelConfig& cfg,
                                    const TemplateFeatures<T>& filters, const BasicTensor<T>& search)
{
    using namespace head_names;
    auto f = backbone_forward(params, cfg.backbone, search);
    auto fb = fanet_forward(f.conv3, params);
    return {affine(cross_correlate(filters.dis, f.conv5), params.at(dis_gain)[0], params.at(dis_bias)[0]),
            affine(cross_correlate(filters.fin, fb), params.at(fin_gain)[0], params.at(fin_bias)[0])};
}

template <typename T>
BasicTensor<T> discriminative_similarity(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& z_img,
                                         const BasicTensor<T>& y_img)
{
    using namespace head_names;
    auto fz = backbone_forward(params, cfg.backbone, z_img);
    auto fy = backbone_forward(params, cfg.backbone, y_img);
    return affine(cross_correlate(cf_block(fz.conv5, cfg.cf), fy.conv5), params.at(dis_gain)[0],
                  params.at(dis_bias)[0]);
}

template <typename T>
BasicTensor<T> fine_grained_similarity(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& z_img,
                                       const BasicTensor<T>& y_img)
{
    using namespace head_names;
    auto fz = backbone_forward(params, cfg.backbone, z_img);
    auto fy = backbone_forward(params, cfg.backbone, y_img);
    auto a = fanet_forward(fz.conv3, params);
    auto b = fanet_forward(fy.conv3, params);
    return affine(cross_correlate(cf_block(a, cfg.cf), b), params.at(fin_gain)[0], params.at(fin_bias)[0]);
}

template <typename T>
BasicTensor<T> fuse_responses(const BasicTensor<T>& dis, const BasicTensor<T>& fin, double beta)
{
    if (!(dis.shape() == fin.shape()))
        throw ShapeError("branch responses differ in shape: " + dis.shape().str() + " vs " + fin.shape().str());
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("branch mix beta must lie in [0, 1]");
    BasicTensor<T> out(dis.shape());
    const T b = static_cast<T>(beta);
    const T c = static_cast<T>(1.0 - beta);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b * dis[i] + c * fin[i];
    return out;
}

#define MMNET_INSTANTIATE_MODEL(T)                                                                                \
    template ParamSet<T> build_model<T>(const ModelConfig&, std::uint64_t);                                      \
    template PairOutput<T> pair_forward_backward(const ParamSet<T>&, const ModelConfig&, const PairSample<T>&,   \
                                                 const LossWeights&, ParamSet<T>*, BranchMask);                  \
    template TemplateFeatures<T> template_features(const ParamSet<T>&, const ModelConfig&, const BasicTensor<T>&); \
    template TemplateFeatures<T> template_filters(const TemplateFeatures<T>&, const ModelConfig&);               \
    template BranchResponses<T> search_responses(const ParamSet<T>&, const ModelConfig&,                         \
                                                 const TemplateFeatures<T>&, const BasicTensor<T>&);             \
    template BasicTensor<T> discriminative_similarity(const ParamSet<T>&, const ModelConfig&,                    \
                                                      const BasicTensor<T>&, const BasicTensor<T>&);             \
    template BasicTensor<T> fine_grained_similarity(const ParamSet<T>&, const ModelConfig&,                      \
                                                    const BasicTensor<T>&, const BasicTensor<T>&);               \
    template BasicTensor<T> fuse_responses(const BasicTensor<T>&, const BasicTensor<T>&, double);

MMNET_INSTANTIATE_MODEL(float)
MMNET_INSTANTIATE_MODEL(double)

} // namespace mmnet
