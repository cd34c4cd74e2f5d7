#pragma once

#include <cstdint>

#include "mmnet/tensor.hpp"

namespace mmnet {

// Fine-grained aware network applied to conv3 features:
//   out = fuse(concat(holistic(X), pixel(X)))
// holistic(X) = X * sigmoid(dec2(dec1(enc2(enc1(X)))))   single-channel gate
// pixel(X)    = X + delta * S_p,  S_p[i] = sum_j softmax_j(<q_i, k_j>) v_j
// Parameters live in a ParamSet under the "fanet." prefix:
//   enc1 (C/2,C,5,5) enc2 (C/4,C/2,5,5)      stride 2, pad 2
//   dec1 (C/4,C/2,4,4) dec2 (C/2,1,4,4)      transposed, stride 2, pad 1
//   query/key (C/2,C,1,1) value (C,C,1,1) fuse (C,2C,1,1) delta (scalar)

namespace fanet_names {
inline constexpr const char* enc1 = "fanet.enc1";
inline constexpr const char* enc2 = "fanet.enc2";
inline constexpr const char* dec1 = "fanet.dec1";
inline constexpr const char* dec2 = "fanet.dec2";
inline constexpr const char* query = "fanet.query";
inline constexpr const char* key = "fanet.key";
inline constexpr const char* value = "fanet.value";
inline constexpr const char* fuse = "fanet.fuse";
inline constexpr const char* delta = "fanet.delta";
} // namespace fanet_names

/// Initialized FANet parameters for `channels` input channels (multiple of 4).
/// delta starts at 0; fuse starts as the average of both halves plus small noise.
template <typename T>
ParamSet<T> build_fanet(int channels, std::uint64_t seed);

template <typename T>
struct FanetTape {
    BasicTensor<T> input;
    BasicTensor<T> enc1, enc2, dec1;
    BasicTensor<T> gate;       ///< (n,1,H,W) sigmoid output
    BasicTensor<T> holistic;
    BasicTensor<T> query, key, value;  ///< 1x1 projections, (n,C',H,W)
    BasicTensor<T> attention;  ///< (n,1,N,N) row-stochastic
    BasicTensor<T> aggregated; ///< S_p, (n,C,H,W)
    BasicTensor<T> pixel;
    BasicTensor<T> concat;
};

template <typename T>
BasicTensor<T> holistic_correlation(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape = nullptr);

/// Row-wise softmax of <W_q x_i, W_k x_j>, shape (n, 1, N, N) with N = H*W.
template <typename T>
BasicTensor<T> pixel_correlation_map(const BasicTensor<T>& x, const ParamSet<T>& p);

template <typename T>
BasicTensor<T> pixel_correlation(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape = nullptr);

template <typename T>
BasicTensor<T> fanet_forward(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape = nullptr);

/// Accumulates "fanet.*" gradients into `grads` and returns dL/dX.
template <typename T>
BasicTensor<T> fanet_backward(const ParamSet<T>& p, const FanetTape<T>& tape, const BasicTensor<T>& grad_out,
                              ParamSet<T>& grads);

} // namespace mmnet
