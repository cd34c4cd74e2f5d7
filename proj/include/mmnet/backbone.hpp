#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmnet/ops.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet {

struct ConvLayerSpec {
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    bool pool_after = false;
};

/// Padding-free AlexNet topology: five convs, 3x3/2 max-pool after conv1 and
/// conv2, relu after conv1..conv4, conv5 linear.
struct BackboneConfig {
    std::string preset = "desk";
    std::array<ConvLayerSpec, 5> layers{};
    int in_channels = 1;
    int pool_kernel = 3;
    int pool_stride = 2;
    int exemplar_size = 127;
    int search_size = 255;

    static BackboneConfig full();
    static BackboneConfig desk();
    /// "full" or "desk"; anything else is a ConfigError.
    static BackboneConfig from_preset(const std::string& name);

    int conv3_channels() const { return layers[2].out_channels; }
    int conv5_channels() const { return layers[4].out_channels; }
    int total_stride() const;

    /// Spatial size after every stage for an input of `size`; throws
    /// ShapeError naming the layer that underflows.
    std::vector<int> spatial_chain(int size) const;
    int conv3_size(int input) const;
    int conv5_size(int input) const;
    /// Throws ConfigError when the default exemplar/search inputs underflow.
    void validate() const;
};

std::string conv_weight_name(int layer);
std::string conv_bias_name(int layer);

/// Fan-in scaled Gaussian weights (std = sqrt(2 / fan_in)), zero biases.
template <typename T>
ParamSet<T> build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

template <typename T>
struct FeaturePair {
    BasicTensor<T> conv3;
    BasicTensor<T> conv5;
};

/// Intermediate activations kept for the backward pass.
template <typename T>
struct BackboneTape {
    std::array<BasicTensor<T>, 5> conv_inputs;
    std::array<BasicTensor<T>, 4> relu_outputs;
    std::array<std::vector<std::uint32_t>, 5> pool_argmax;
    std::array<Shape, 5> pool_input_shapes{};
};

template <typename T>
FeaturePair<T> backbone_forward(const ParamSet<T>& params, const BackboneConfig& cfg, const BasicTensor<T>& images,
                                BackboneTape<T>* tape = nullptr);

/// Accumulates backbone parameter gradients into `grads` given gradients on
/// the two taps (either may be empty, meaning zero).
template <typename T>
void backbone_backward(const ParamSet<T>& params, const BackboneConfig& cfg, const BackboneTape<T>& tape,
                       const BasicTensor<T>& grad_conv3, const BasicTensor<T>& grad_conv5, ParamSet<T>& grads);

enum class FreezePolicy { none, first3, classifier_only, fine_grained_branch };

FreezePolicy parse_freeze_policy(const std::string& name);
std::string to_string(FreezePolicy p);

/// True for every parameter the policy freezes. Unknown names in `params`
/// are simply not frozen.
template <typename T>
std::vector<bool> freeze_mask(const ParamSet<T>& params, FreezePolicy policy);

/// Union of several policies.
template <typename T>
std::vector<bool> freeze_mask(const ParamSet<T>& params, const std::vector<FreezePolicy>& policies);

} // namespace mmnet
