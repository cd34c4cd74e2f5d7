#include "mmnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <string>

namespace mmnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct Geometry {
    int channels;
    int in_h, in_w;
    int kh, kw;
    int stride, pad;
    int out_h, out_w;

    int rows() const { return channels * kh * kw; }
    int cols() const { return out_h * out_w; }
};

// Patch matrix of one (c, h, w) image: row (c*kh + i)*kw + j, column
// oy*out_w + ox holds input(c, oy*stride - pad + i, ox*stride - pad + j), or 0
// outside the image.
template <typename T>
void im2col(const T* img, const Geometry& g, T* cols)
{
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        const T* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                T* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + i;
                    T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + j;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add the patch matrix back onto the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* img)
{
    const int ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        T* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                const T* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.in_h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + j;
                        if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Plain left-to-right sum. Eigen's vectorized reductions split the work by
// pointer alignment, which would make results depend on heap addresses.
template <typename T>
T serial_sum(const T* p, std::size_t n)
{
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += p[i];
    return acc;
}

void require(bool ok, const std::string& what)
{
    if (!ok) throw ShapeError(what);
}

} // namespace

int conv_out_size(int in, int k, int stride, int pad, const char* axis)
{
    if (stride < 1) throw ShapeError(std::string("stride must be >= 1 on axis ") + axis);
    if (pad < 0) throw ShapeError(std::string("negative padding on axis ") + axis);
    if (k > in + 2 * pad)
        throw ShapeError(std::string("kernel extent ") + std::to_string(k) + " exceeds padded input " +
                         std::to_string(in + 2 * pad) + " on axis " + axis);
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::span<const T> bias, int stride,
                      int pad)
{
    require(kernel.c() == x.c(), "conv2d: input channels " + std::to_string(x.c()) + " != kernel channels " +
                                     std::to_string(kernel.c()) + " (axis c)");
    require(bias.empty() || static_cast<int>(bias.size()) == kernel.n(),
            "conv2d: bias length " + std::to_string(bias.size()) + " != output channels (axis cout)");
    const Geometry g{x.c(),     x.h(),  x.w(), kernel.h(), kernel.w(),
                     stride,    pad,    conv_out_size(x.h(), kernel.h(), stride, pad, "h"),
                     conv_out_size(x.w(), kernel.w(), stride, pad, "w")};
    const int cout = kernel.n();
    BasicTensor<T> out(x.n(), cout, g.out_h, g.out_w);
    std::vector<T> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    ConstMapMat<T> K(kernel.data(), cout, g.rows());
    for (int b = 0; b < x.n(); ++b) {
        im2col(x.plane(b, 0), g, cols.data());
        MapMat<T> Y(out.plane(b, 0), cout, g.cols());
        Y.noalias() = K * ConstMapMat<T>(cols.data(), g.rows(), g.cols());
        if (!bias.empty())
            for (int o = 0; o < cout; ++o) Y.row(o).array() += bias[o];
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int pad,
                             const BasicTensor<T>& grad_out, bool need_input_grad)
{
    const int cout = kernel.n();
    const Geometry g{x.c(), x.h(), x.w(), kernel.h(), kernel.w(), stride, pad, grad_out.h(), grad_out.w()};
    require(grad_out.n() == x.n() && grad_out.c() == cout, "conv2d_backward: grad_out dims " +
                                                               grad_out.shape().str() + " mismatch (axis n/c)");
    ConvGrads<T> grads;
    grads.kernel = BasicTensor<T>(kernel.shape());
    grads.bias.assign(cout, T(0));
    if (need_input_grad) grads.input = BasicTensor<T>(x.shape());
    std::vector<T> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    MapMat<T> gK(grads.kernel.data(), cout, g.rows());
    ConstMapMat<T> K(kernel.data(), cout, g.rows());
    for (int b = 0; b < x.n(); ++b) {
        ConstMapMat<T> gY(grad_out.plane(b, 0), cout, g.cols());
        im2col(x.plane(b, 0), g, cols.data());
        gK.noalias() += gY * ConstMapMat<T>(cols.data(), g.rows(), g.cols()).transpose();
        for (int o = 0; o < cout; ++o) grads.bias[o] += serial_sum(grad_out.plane(b, o), static_cast<std::size_t>(g.cols()));
        if (need_input_grad) {
            MapMat<T>(cols.data(), g.rows(), g.cols()).noalias() = K.transpose() * gY;
            col2im(cols.data(), g, grads.input.plane(b, 0));
        }
    }
    return grads;
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::span<const T> bias,
                                int stride, int pad, int target_h, int target_w)
{
    require(kernel.n() == x.c(), "conv_transpose2d: input channels " + std::to_string(x.c()) +
                                     " != kernel axis 0 (" + std::to_string(kernel.n()) + ") (axis c)");
    const int cout = kernel.c();
    require(bias.empty() || static_cast<int>(bias.size()) == cout,
            "conv_transpose2d: bias length mismatch (axis cout)");
    require(stride >= 1 && pad >= 0, "conv_transpose2d: invalid stride/pad");
    // The natural output extent is (in-1)*s - 2p + k; any target within the
    // stride-1 band around it is reachable by cropping or zero placement.
    const auto check_axis = [&](int in, int k, int target, const char* axis) {
        const int natural = (in - 1) * stride - 2 * pad + k;
        if (target < 1 || target < natural - (stride - 1) || target > natural + (stride - 1))
            throw ShapeError(std::string("conv_transpose2d: target extent ") + std::to_string(target) +
                             " unreachable from input " + std::to_string(in) + " on axis " + axis +
                             " (natural " + std::to_string(natural) + ")");
    };
    check_axis(x.h(), kernel.h(), target_h, "h");
    check_axis(x.w(), kernel.w(), target_w, "w");

    const Geometry g{cout, target_h, target_w, kernel.h(), kernel.w(), stride, pad, x.h(), x.w()};
    BasicTensor<T> out(x.n(), cout, target_h, target_w);
    std::vector<T> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    ConstMapMat<T> K(kernel.data(), x.c(), g.rows());
    for (int b = 0; b < x.n(); ++b) {
        MapMat<T>(cols.data(), g.rows(), g.cols()).noalias() =
            K.transpose() * ConstMapMat<T>(x.plane(b, 0), x.c(), g.cols());
        col2im(cols.data(), g, out.plane(b, 0));
        if (!bias.empty()) {
            MapMat<T> Y(out.plane(b, 0), cout, target_h * target_w);
            for (int o = 0; o < cout; ++o) Y.row(o).array() += bias[o];
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int pad,
                                       const BasicTensor<T>& grad_out)
{
    const int cout = kernel.c();
    require(grad_out.n() == x.n() && grad_out.c() == cout,
            "conv_transpose2d_backward: grad_out dims mismatch (axis n/c)");
    const Geometry g{cout, grad_out.h(), grad_out.w(), kernel.h(), kernel.w(), stride, pad, x.h(), x.w()};
    ConvGrads<T> grads;
    grads.kernel = BasicTensor<T>(kernel.shape());
    grads.bias.assign(cout, T(0));
    grads.input = BasicTensor<T>(x.shape());
    std::vector<T> cols(static_cast<std::size_t>(g.rows()) * g.cols());
    ConstMapMat<T> K(kernel.data(), x.c(), g.rows());
    MapMat<T> gK(grads.kernel.data(), x.c(), g.rows());
    for (int b = 0; b < x.n(); ++b) {
        im2col(grad_out.plane(b, 0), g, cols.data());
        ConstMapMat<T> C(cols.data(), g.rows(), g.cols());
        ConstMapMat<T> X(x.plane(b, 0), x.c(), g.cols());
        MapMat<T>(grads.input.plane(b, 0), x.c(), g.cols()).noalias() = K * C;
        gK.noalias() += X * C.transpose();
        const std::size_t plane = grad_out.shape().plane();
        for (int o = 0; o < cout; ++o) grads.bias[o] += serial_sum(grad_out.plane(b, o), plane);
    }
    return grads;
}

template <typename T>
PoolResult<T> max_pool2d(const BasicTensor<T>& x, int k, int stride)
{
    if (k > x.h() || k > x.w())
        throw ShapeError("max_pool2d: window " + std::to_string(k) + " exceeds spatial size " +
                         std::to_string(x.h()) + "x" + std::to_string(x.w()));
    const int oh = conv_out_size(x.h(), k, stride, 0, "h");
    const int ow = conv_out_size(x.w(), k, stride, 0, "w");
    PoolResult<T> r{BasicTensor<T>(x.n(), x.c(), oh, ow), {}};
    r.argmax.resize(r.output.size());
    std::size_t o = 0;
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c) {
            const std::size_t base = x.offset(b, c, 0, 0);
            const T* plane = x.data() + base;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    std::size_t best = static_cast<std::size_t>(oy * stride) * x.w() + ox * stride;
                    T best_v = plane[best];
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j) {
                            const std::size_t idx = static_cast<std::size_t>(oy * stride + i) * x.w() + ox * stride + j;
                            if (plane[idx] > best_v) {
                                best_v = plane[idx];
                                best = idx;
                            }
                        }
                    r.output[o] = best_v;
                    r.argmax[o] = static_cast<std::uint32_t>(base + best);
                }
        }
    return r;
}

template <typename T>
BasicTensor<T> max_pool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                   const BasicTensor<T>& grad_out)
{
    require(argmax.size() == grad_out.size(), "max_pool2d_backward: argmax/grad size mismatch");
    BasicTensor<T> g(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
    return g;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x)
{
    if (x.h() * x.w() < 1) throw ShapeError("global_avg_pool: empty spatial extent");
    BasicTensor<T> out(x.n(), x.c(), 1, 1);
    const std::size_t hw = x.shape().plane();
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c) {
            const T* p = x.plane(b, c);
            T s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            out(b, c, 0, 0) = s / static_cast<T>(hw);
        }
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& grad_out)
{
    BasicTensor<T> g(input_shape);
    const std::size_t hw = input_shape.plane();
    const T inv = T(1) / static_cast<T>(hw);
    for (int b = 0; b < input_shape.n; ++b)
        for (int c = 0; c < input_shape.c; ++c) {
            T* p = g.plane(b, c);
            const T v = grad_out(b, c, 0, 0) * inv;
            std::fill(p, p + hw, v);
        }
    return g;
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind)
{
    BasicTensor<T> y(x.shape());
    if (kind == Activation::relu)
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    else
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
    return y;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& input_or_output, Activation kind,
                                   const BasicTensor<T>& grad_out)
{
    BasicTensor<T> g(grad_out.shape());
    if (kind == Activation::relu)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = input_or_output[i] > T(0) ? grad_out[i] : T(0);
    else
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = input_or_output[i];
            g[i] = grad_out[i] * s * (T(1) - s);
        }
    return g;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x)
{
    BasicTensor<T> y(x.shape());
    const std::size_t cols = static_cast<std::size_t>(x.w());
    if (cols == 0) return y;
    for (std::size_t r = 0; r < x.size() / cols; ++r) {
        const T* in = x.data() + r * cols;
        T* out = y.data() + r * cols;
        const T m = *std::max_element(in, in + cols);
        T s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += (out[j] = std::exp(in[j] - m));
        for (std::size_t j = 0; j < cols; ++j) out[j] /= s;
    }
    return y;
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out)
{
    BasicTensor<T> g(y.shape());
    const std::size_t cols = static_cast<std::size_t>(y.w());
    if (cols == 0) return g;
    for (std::size_t r = 0; r < y.size() / cols; ++r) {
        const T* yr = y.data() + r * cols;
        const T* gr = grad_out.data() + r * cols;
        T inner = 0;
        for (std::size_t j = 0; j < cols; ++j) inner += yr[j] * gr[j];
        T* out = g.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] = yr[j] * (gr[j] - inner);
    }
    return g;
}

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& v)
{
    require(acc.shape() == v.shape(), "add: shape mismatch " + acc.shape().str() + " vs " + v.shape().str());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

template <typename T>
void axpy_inplace(BasicTensor<T>& acc, T a, const BasicTensor<T>& v)
{
    require(acc.shape() == v.shape(), "axpy: shape mismatch " + acc.shape().str() + " vs " + v.shape().str());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a * v[i];
}

template <typename T>
BasicTensor<T> scaled(const BasicTensor<T>& v, T a)
{
    BasicTensor<T> out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = a * v[i];
    return out;
}

template <typename T>
T dot(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require(a.size() == b.size(), "dot: size mismatch");
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
            "concat_channels: mismatched n/h/w " + a.shape().str() + " vs " + b.shape().str());
    BasicTensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t hw = a.shape().plane();
    for (int n = 0; n < a.n(); ++n) {
        std::copy(a.plane(n, 0), a.plane(n, 0) + a.c() * hw, out.plane(n, 0));
        std::copy(b.plane(n, 0), b.plane(n, 0) + b.c() * hw, out.plane(n, a.c()));
    }
    return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int c0, int count)
{
    require(c0 >= 0 && count >= 0 && c0 + count <= x.c(), "slice_channels: range out of bounds (axis c)");
    BasicTensor<T> out(x.n(), count, x.h(), x.w());
    const std::size_t hw = x.shape().plane();
    for (int n = 0; n < x.n(); ++n) std::copy(x.plane(n, c0), x.plane(n, c0) + count * hw, out.plane(n, 0));
    return out;
}

#define MMNET_INSTANTIATE_OPS(T)                                                                                  \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>, int, int);  \
    template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, int, int,                \
                                          const BasicTensor<T>&, bool);                                          \
    template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,   \
                                             int, int, int, int);                                                \
    template ConvGrads<T> conv_transpose2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, int, int,      \
                                                    const BasicTensor<T>&);                                      \
    template PoolResult<T> max_pool2d(const BasicTensor<T>&, int, int);                                          \
    template BasicTensor<T> max_pool2d_backward(const Shape&, const std::vector<std::uint32_t>&,                 \
                                                const BasicTensor<T>&);                                          \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                              \
    template BasicTensor<T> global_avg_pool_backward(const Shape&, const BasicTensor<T>&);                       \
    template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                                       \
    template BasicTensor<T> activation_backward(const BasicTensor<T>&, Activation, const BasicTensor<T>&);       \
    template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> softmax_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                                           \
    template void axpy_inplace(BasicTensor<T>&, T, const BasicTensor<T>&);                                       \
    template BasicTensor<T> scaled(const BasicTensor<T>&, T);                                                    \
    template T dot(const BasicTensor<T>&, const BasicTensor<T>&);                                                \
    template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);

MMNET_INSTANTIATE_OPS(float)
MMNET_INSTANTIATE_OPS(double)

} // namespace mmnet
