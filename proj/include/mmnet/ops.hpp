#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mmnet/tensor.hpp"

namespace mmnet {

// Layer kernels. No autodiff graph: every forward op has a hand-written
// backward taking the forward inputs (or outputs) and the upstream gradient.

template <typename T>
struct ConvGrads {
    BasicTensor<T> input;   ///< empty when not requested
    BasicTensor<T> kernel;
    std::vector<T> bias;
};

/// Output extent of a convolution along one axis; throws ShapeError naming
/// `axis` when the kernel does not fit.
int conv_out_size(int in, int k, int stride, int pad, const char* axis);

/// Cross-correlation (deep-learning "convolution").
/// x: (n, cin, h, w); kernel: (cout, cin, kh, kw); bias: cout values or empty.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::span<const T> bias, int stride,
                      int pad);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int pad,
                             const BasicTensor<T>& grad_out, bool need_input_grad = true);

/// Adjoint of conv2d with the same kernel/stride/pad, producing exactly
/// target_h x target_w. kernel: (cin, cout, kh, kw), i.e. the kernel of the
/// forward conv that maps cout -> cin channels.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::span<const T> bias,
                                int stride, int pad, int target_h, int target_w);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int pad,
                                       const BasicTensor<T>& grad_out);

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    std::vector<std::uint32_t> argmax;  ///< flat input offset per output element
};

/// Window max; ties resolve to the first index in row-major order.
template <typename T>
PoolResult<T> max_pool2d(const BasicTensor<T>& x, int k, int stride);

template <typename T>
BasicTensor<T> max_pool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                   const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out);

enum class Activation { relu, sigmoid };

template <typename T>
T sigmoid(T v)
{
    if (v >= T(0)) {
        const T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

/// log(1 + exp(v)) without overflow.
template <typename T>
T softplus(T v)
{
    return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind);

/// `input` is the forward input for relu and the forward output for sigmoid.
template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& input_or_output, Activation kind,
                                   const BasicTensor<T>& grad_out);

/// Softmax along the last axis (w); every other axis indexes rows.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out);

// Elementwise helpers.
template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& v);
template <typename T>
void axpy_inplace(BasicTensor<T>& acc, T a, const BasicTensor<T>& v);
template <typename T>
BasicTensor<T> scaled(const BasicTensor<T>& v, T a);
template <typename T>
T dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenate along channels; both inputs share n, h, w.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Channels [c0, c0 + count).
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int c0, int count);

} // namespace mmnet
