#pragma once

#include <cstdint>

#include "mmnet/backbone.hpp"
#include "mmnet/fanet.hpp"
#include "mmnet/heads.hpp"

namespace mmnet {

/// Everything needed to interpret a model ParamSet.
struct ModelConfig {
    BackboneConfig backbone = BackboneConfig::desk();
    CFConfig cf;
    int num_classes = 30;
    double gain_init = 1e-3;
    double label_radius = 2.0;
    double pos_weight_share = 0.5;

    /// Side of the response map (17 for the default 127/255 inputs).
    int response_size() const;
    void validate() const;
};

/// Backbone + FANet + heads in one set ("backbone.*", "fanet.*", "heads.*").
template <typename T>
ParamSet<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// One training example: exemplar/search patches, label map, class.
template <typename T>
struct PairSample {
    BasicTensor<T> exemplar;
    BasicTensor<T> search;
    LabelMap labels;
    int class_id = 0;
};

template <typename T>
struct PairOutput {
    T l_dis = 0, l_cls = 0, l_fin = 0, total = 0;
    BasicTensor<T> response_dis;  ///< after gain/bias
    BasicTensor<T> response_fin;
    BasicTensor<T> logits;
};

/// Which branch losses propagate gradient. A frozen branch still reports its
/// loss but contributes no update anywhere (including the shared backbone).
struct BranchMask {
    bool dis = true;
    bool cls = true;
    bool fin = true;
};

/// Forward pass of all three tasks; when `grads` is non-null, accumulates the
/// gradient of the weighted total into it.
template <typename T>
PairOutput<T> pair_forward_backward(const ParamSet<T>& params, const ModelConfig& cfg, const PairSample<T>& sample,
                                    const LossWeights& weights, ParamSet<T>* grads, BranchMask mask = {});

/// Template-side features before the CF block: conv5 tap and FANet(conv3).
template <typename T>
struct TemplateFeatures {
    BasicTensor<T> dis;
    BasicTensor<T> fin;
};

template <typename T>
TemplateFeatures<T> template_features(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& exemplar);

/// CF-block filters for both branches.
template <typename T>
TemplateFeatures<T> template_filters(const TemplateFeatures<T>& features, const ModelConfig& cfg);

template <typename T>
struct BranchResponses {
    BasicTensor<T> dis;
    BasicTensor<T> fin;
};

/// Both branch responses of a search patch against precomputed filters.
template <typename T>
BranchResponses<T> search_responses(const ParamSet<T>& params, const ModelConfig& cfg,
                                    const TemplateFeatures<T>& filters, const BasicTensor<T>& search);

/// g(sigma(conv5(Z)), conv5(Y)) with the branch gain/bias.
template <typename T>
BasicTensor<T> discriminative_similarity(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& z_img,
                                         const BasicTensor<T>& y_img);

/// g(sigma(fanet(conv3(Z))), fanet(conv3(Y))) with the branch gain/bias.
template <typename T>
BasicTensor<T> fine_grained_similarity(const ParamSet<T>& params, const ModelConfig& cfg, const BasicTensor<T>& z_img,
                                       const BasicTensor<T>& y_img);

/// beta * dis + (1 - beta) * fin. At beta = 0.5 this is half the plain sum.
template <typename T>
BasicTensor<T> fuse_responses(const BasicTensor<T>& dis, const BasicTensor<T>& fin, double beta);

} // namespace mmnet
