#pragma once

#include <cstdint>
#include <vector>

#include "mmnet/tensor.hpp"

namespace mmnet {

/// Correlation-filter layer settings.
struct CFConfig {
    double lambda = 0.01;          ///< ridge coefficient, >= 0
    double sigma_fraction = 0.1;   ///< Gaussian label bandwidth as a fraction of min(h, w)
    bool window = true;            ///< cosine (Hann) window on the template

    void validate() const;
};

/// Response-map targets: +1 inside the positive disc, -1 elsewhere, with
/// per-cell weights summing to one.
struct LabelMap {
    int size = 0;
    std::vector<double> values;
    std::vector<double> weights;

    int positives() const;
};

template <typename T>
struct LossResult {
    T value = 0;
    BasicTensor<T> grad;
};

/// Sliding inner product of template over search across all channels.
/// template (1,C,hz,wz), search (1,C,hy,wy) -> (1,1,hy-hz+1,wy-wz+1).
template <typename T>
BasicTensor<T> cross_correlate(const BasicTensor<T>& templ, const BasicTensor<T>& search);

template <typename T>
struct CorrelationGrads {
    BasicTensor<T> templ;
    BasicTensor<T> search;
};

template <typename T>
CorrelationGrads<T> cross_correlate_backward(const BasicTensor<T>& templ, const BasicTensor<T>& search,
                                             const BasicTensor<T>& grad_out);

/// Gaussian regression target of a correlation filter. The peak sits at the
/// DFT origin (0,0) with circular distances, so a filter trained on it is
/// spatially aligned with the template it was trained on.
template <typename T>
BasicTensor<T> gaussian_label(int h, int w, double sigma);

/// 0.5 * (1 - cos(2*pi*(i+1)/(n+1))): strictly positive Hann window.
template <typename T>
std::vector<T> hann_window(int n);

/// Per-channel discriminative correlation filter of the template:
///   W_c = Re F^-1( conj(G) Z_c / (sum_c |Z_c|^2 + lambda) )
/// where Z_c is the (optionally windowed) template spectrum and G the label
/// spectrum. Circularly correlating W with its own template reproduces the
/// label when lambda = 0.
template <typename T>
BasicTensor<T> cf_block(const BasicTensor<T>& templ, const CFConfig& cfg);

template <typename T>
BasicTensor<T> cf_block_backward(const BasicTensor<T>& templ, const CFConfig& cfg, const BasicTensor<T>& grad_out);

/// Label map of side `m`: positive where the Euclidean distance to
/// (center + offset) is <= radius_cells; center is (m-1)/2.
LabelMap make_label_map(int m, double radius_cells, double pos_weight_share = 0.5, double offset_y = 0.0,
                        double offset_x = 0.0);

/// Weighted mean of softplus(-y * o).
template <typename T>
LossResult<T> logistic_loss(const BasicTensor<T>& response, const LabelMap& labels);

/// GAP then 1x1 conv. conv5 (n,c5,h,w), weight (K,c5,1,1) -> logits (n,K,1,1).
template <typename T>
BasicTensor<T> classification_forward(const BasicTensor<T>& conv5, const BasicTensor<T>& weight,
                                      const BasicTensor<T>& bias);

template <typename T>
struct ClassifierGrads {
    BasicTensor<T> conv5;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
};

template <typename T>
ClassifierGrads<T> classification_backward(const BasicTensor<T>& conv5, const BasicTensor<T>& weight,
                                           const BasicTensor<T>& grad_logits);

/// Mean over the batch of -log softmax(logits)[class].
template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& classes);

struct LossWeights {
    double dis = 1.0;
    double cls = 1.0;
    double fin = 1.0;
};

inline double multi_task_loss(double l_dis, double l_cls, double l_fin, const LossWeights& w)
{
    return w.dis * l_dis + w.cls * l_cls + w.fin * l_fin;
}

namespace head_names {
inline constexpr const char* dis_gain = "heads.dis.gain";
inline constexpr const char* dis_bias = "heads.dis.bias";
inline constexpr const char* fin_gain = "heads.fin.gain";
inline constexpr const char* fin_bias = "heads.fin.bias";
inline constexpr const char* cls_weight = "heads.cls.weight";
inline constexpr const char* cls_bias = "heads.cls.bias";
} // namespace head_names

/// Response gains/biases for both branches and the classifier (c5 -> classes).
template <typename T>
ParamSet<T> build_heads(int conv5_channels, int num_classes, std::uint64_t seed, double gain_init = 1e-3);

} // namespace mmnet
