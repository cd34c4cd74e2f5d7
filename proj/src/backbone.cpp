#include "mmnet/backbone.hpp"

#include <cmath>

#include "mmnet/rng.hpp"

namespace mmnet {

namespace {

BackboneConfig make_config(std::string preset, const std::array<int, 5>& channels)
{
    BackboneConfig cfg;
    cfg.preset = std::move(preset);
    cfg.layers = {{
        {channels[0], 11, 2, true},
        {channels[1], 5, 1, true},
        {channels[2], 3, 1, false},
        {channels[3], 3, 1, false},
        {channels[4], 3, 1, false},
    }};
    return cfg;
}

std::string layer_label(int i) { return "conv" + std::to_string(i + 1); }

} // namespace

BackboneConfig BackboneConfig::full() { return make_config("full", {96, 256, 384, 384, 256}); }
BackboneConfig BackboneConfig::desk() { return make_config("desk", {16, 32, 32, 32, 24}); }

BackboneConfig BackboneConfig::from_preset(const std::string& name)
{
    if (name == "full") return full();
    if (name == "desk") return desk();
    throw ConfigError("unknown backbone preset '" + name + "' (expected full or desk)");
}

int BackboneConfig::total_stride() const
{
    int s = 1;
    for (const auto& l : layers) {
        s *= l.stride;
        if (l.pool_after) s *= pool_stride;
    }
    return s;
}

std::vector<int> BackboneConfig::spatial_chain(int size) const
{
    std::vector<int> chain{size};
    for (int i = 0; i < 5; ++i) {
        const auto& l = layers[i];
        const std::string name = layer_label(i);
        if (l.kernel > size)
            throw ShapeError("spatial size underflow at " + name + ": input " + std::to_string(size) +
                             " smaller than kernel " + std::to_string(l.kernel));
        size = (size - l.kernel) / l.stride + 1;
        chain.push_back(size);
        if (l.pool_after) {
            if (pool_kernel > size)
                throw ShapeError("spatial size underflow at pool after " + name + ": " + std::to_string(size));
            size = (size - pool_kernel) / pool_stride + 1;
            chain.push_back(size);
        }
    }
    return chain;
}

int BackboneConfig::conv3_size(int input) const
{
    const auto chain = spatial_chain(input);
    // input, conv1, pool1, conv2, pool2, conv3, conv4, conv5
    int idx = 0;
    for (int i = 0; i < 3; ++i) idx += layers[i].pool_after ? 2 : 1;
    return chain[idx];
}

int BackboneConfig::conv5_size(int input) const { return spatial_chain(input).back(); }

void BackboneConfig::validate() const
{
    for (const auto& l : layers)
        if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1)
            throw ConfigError("backbone layer with non-positive channels/kernel/stride");
    for (int size : {exemplar_size, search_size}) {
        try {
            if (conv5_size(size) < 1) throw ShapeError("empty conv5");
        } catch (const ShapeError& e) {
            throw ConfigError("backbone '" + preset + "' invalid for input " + std::to_string(size) + ": " +
                              e.what());
        }
    }
    if (conv5_size(exemplar_size) > conv5_size(search_size))
        throw ConfigError("exemplar features larger than search features");
}

std::string conv_weight_name(int layer) { return "backbone." + layer_label(layer) + ".weight"; }
std::string conv_bias_name(int layer) { return "backbone." + layer_label(layer) + ".bias"; }

template <typename T>
ParamSet<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    Rng rng(seed);
    ParamSet<T> params;
    int cin = cfg.in_channels;
    for (int i = 0; i < 5; ++i) {
        const auto& l = cfg.layers[i];
        BasicTensor<T> w(l.out_channels, cin, l.kernel, l.kernel);
        const double stddev = std::sqrt(2.0 / static_cast<double>(cin * l.kernel * l.kernel));
        for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
        params.add(conv_weight_name(i), std::move(w));
        params.add(conv_bias_name(i), BasicTensor<T>(l.out_channels, 1, 1, 1));
        cin = l.out_channels;
    }
    return params;
}

template <typename T>
FeaturePair<T> backbone_forward(const ParamSet<T>& params, const BackboneConfig& cfg, const BasicTensor<T>& images,
                                BackboneTape<T>* tape)
{
    if (images.c() != cfg.in_channels)
        throw ShapeError("backbone input has " + std::to_string(images.c()) + " channels, expected " +
                         std::to_string(cfg.in_channels));
    FeaturePair<T> out;
    BasicTensor<T> x = images;
    for (int i = 0; i < 5; ++i) {
        const auto& l = cfg.layers[i];
        const auto& w = params.at(conv_weight_name(i));
        const auto& b = params.at(conv_bias_name(i));
        BasicTensor<T> y;
        try {
            y = conv2d<T>(x, w, b.values(), l.stride, 0);
        } catch (const ShapeError& e) {
            throw ShapeError(layer_label(i) + ": " + e.what());
        }
        if (tape) tape->conv_inputs[i] = std::move(x);
        if (i < 4) {
            y = activation(y, Activation::relu);
            if (tape) tape->relu_outputs[i] = y;
        }
        if (i == 2) out.conv3 = y;
        if (l.pool_after) {
            PoolResult<T> p;
            try {
                p = max_pool2d(y, cfg.pool_kernel, cfg.pool_stride);
            } catch (const ShapeError& e) {
                throw ShapeError("pool after " + layer_label(i) + ": " + e.what());
            }
            if (tape) {
                tape->pool_argmax[i] = std::move(p.argmax);
                tape->pool_input_shapes[i] = y.shape();
            }
            y = std::move(p.output);
        }
        x = std::move(y);
    }
    out.conv5 = std::move(x);
    return out;
}

template <typename T>
void backbone_backward(const ParamSet<T>& params, const BackboneConfig& cfg, const BackboneTape<T>& tape,
                       const BasicTensor<T>& grad_conv3, const BasicTensor<T>& grad_conv5, ParamSet<T>& grads)
{
    const auto in5 = tape.conv_inputs[4].shape();
    const auto& l5 = cfg.layers[4];
    BasicTensor<T> g = grad_conv5.empty()
                           ? BasicTensor<T>(Shape{in5.n, l5.out_channels, (in5.h - l5.kernel) / l5.stride + 1,
                                                  (in5.w - l5.kernel) / l5.stride + 1})
                           : grad_conv5;
    for (int i = 4; i >= 0; --i) {
        const auto& l = cfg.layers[i];
        if (l.pool_after) g = max_pool2d_backward(tape.pool_input_shapes[i], tape.pool_argmax[i], g);
        if (i == 2 && !grad_conv3.empty()) add_inplace(g, grad_conv3);
        if (i < 4) g = activation_backward(tape.relu_outputs[i], Activation::relu, g);
        auto cg = conv2d_backward(tape.conv_inputs[i], params.at(conv_weight_name(i)), l.stride, 0, g, i > 0);
        add_inplace(grads.at(conv_weight_name(i)), cg.kernel);
        auto& gb = grads.at(conv_bias_name(i));
        for (std::size_t k = 0; k < cg.bias.size(); ++k) gb[k] += cg.bias[k];
        if (i > 0) g = std::move(cg.input);
    }
}

FreezePolicy parse_freeze_policy(const std::string& name)
{
    if (name == "none") return FreezePolicy::none;
    if (name == "first3") return FreezePolicy::first3;
    if (name == "classifier-only") return FreezePolicy::classifier_only;
    if (name == "fine-grained-branch") return FreezePolicy::fine_grained_branch;
    throw ConfigError("unknown freeze policy '" + name + "'");
}

std::string to_string(FreezePolicy p)
{
    switch (p) {
    case FreezePolicy::none: return "none";
    case FreezePolicy::first3: return "first3";
    case FreezePolicy::classifier_only: return "classifier-only";
    case FreezePolicy::fine_grained_branch: return "fine-grained-branch";
    }
    return "none";
}

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

bool frozen_by(const std::string& name, FreezePolicy policy)
{
    switch (policy) {
    case FreezePolicy::none: return false;
    case FreezePolicy::first3:
        return starts_with(name, "backbone.conv1.") || starts_with(name, "backbone.conv2.") ||
               starts_with(name, "backbone.conv3.");
    case FreezePolicy::classifier_only: return starts_with(name, "heads.cls.");
    case FreezePolicy::fine_grained_branch: return starts_with(name, "fanet.") || starts_with(name, "heads.fin.");
    }
    return false;
}

} // namespace

template <typename T>
std::vector<bool> freeze_mask(const ParamSet<T>& params, FreezePolicy policy)
{
    return freeze_mask(params, std::vector<FreezePolicy>{policy});
}

template <typename T>
std::vector<bool> freeze_mask(const ParamSet<T>& params, const std::vector<FreezePolicy>& policies)
{
    std::vector<bool> mask;
    mask.reserve(params.size());
    for (const auto& e : params) {
        bool frozen = false;
        for (auto p : policies) frozen = frozen || frozen_by(e.name, p);
        mask.push_back(frozen);
    }
    return mask;
}

template ParamSet<float> build_backbone<float>(const BackboneConfig&, std::uint64_t);
template ParamSet<double> build_backbone<double>(const BackboneConfig&, std::uint64_t);
template FeaturePair<float> backbone_forward(const ParamSet<float>&, const BackboneConfig&, const BasicTensor<float>&,
                                             BackboneTape<float>*);
template FeaturePair<double> backbone_forward(const ParamSet<double>&, const BackboneConfig&,
                                              const BasicTensor<double>&, BackboneTape<double>*);
template void backbone_backward(const ParamSet<float>&, const BackboneConfig&, const BackboneTape<float>&,
                                const BasicTensor<float>&, const BasicTensor<float>&, ParamSet<float>&);
template void backbone_backward(const ParamSet<double>&, const BackboneConfig&, const BackboneTape<double>&,
                                const BasicTensor<double>&, const BasicTensor<double>&, ParamSet<double>&);
template std::vector<bool> freeze_mask(const ParamSet<float>&, FreezePolicy);
template std::vector<bool> freeze_mask(const ParamSet<double>&, FreezePolicy);
template std::vector<bool> freeze_mask(const ParamSet<float>&, const std::vector<FreezePolicy>&);
template std::vector<bool> freeze_mask(const ParamSet<double>&, const std::vector<FreezePolicy>&);

} // namespace mmnet
