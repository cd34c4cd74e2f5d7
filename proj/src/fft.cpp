#include "mmnet/fft.hpp"

#include <numbers>
#include <vector>

namespace mmnet {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

template <typename T>
void radix2(std::span<std::complex<T>> a, bool inverse)
{
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        // Twiddles in double then narrowed, so float transforms stay accurate.
        const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        for (std::size_t k = 0; k < len / 2; ++k) {
            const std::complex<T> wk(static_cast<T>(std::cos(ang * k)), static_cast<T>(std::sin(ang * k)));
            for (std::size_t i = 0; i < n; i += len) {
                const std::complex<T> u = a[i + k];
                const std::complex<T> v = a[i + k + len / 2] * wk;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

template <typename T>
void bluestein(std::span<std::complex<T>> a, bool inverse)
{
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<std::complex<T>> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small.
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = {static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang))};
    }
    std::vector<std::complex<T>> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    radix2<T>(x, false);
    radix2<T>(y, false);
    for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
    radix2<T>(x, true);
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

} // namespace

template <typename T>
void fft1d_inplace(std::span<std::complex<T>> data, bool inverse)
{
    const std::size_t n = data.size();
    if (n <= 1) return;
    if (is_pow2(n))
        radix2(data, inverse);
    else
        bluestein(data, inverse);
    if (inverse) {
        const T s = T(1) / static_cast<T>(n);
        for (auto& v : data) v *= s;
    }
}

template <typename T>
void fft2d_inplace(std::span<std::complex<T>> plane, int h, int w, bool inverse)
{
    for (int r = 0; r < h; ++r) fft1d_inplace(plane.subspan(static_cast<std::size_t>(r) * w, w), inverse);
    std::vector<std::complex<T>> col(h);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) col[r] = plane[static_cast<std::size_t>(r) * w + c];
        fft1d_inplace<T>(col, inverse);
        for (int r = 0; r < h; ++r) plane[static_cast<std::size_t>(r) * w + c] = col[r];
    }
}

template <typename T>
BasicComplexTensor<T> fft2d(const BasicTensor<T>& x)
{
    BasicComplexTensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x[i];
    const std::size_t hw = x.shape().plane();
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c)
            fft2d_inplace(std::span<std::complex<T>>(out.plane(b, c), hw), x.h(), x.w(), false);
    return out;
}

template <typename T>
BasicTensor<T> ifft2d(const BasicComplexTensor<T>& spectrum)
{
    BasicComplexTensor<T> tmp = spectrum;
    const Shape& s = spectrum.shape;
    const std::size_t hw = s.plane();
    for (int b = 0; b < s.n; ++b)
        for (int c = 0; c < s.c; ++c) fft2d_inplace(std::span<std::complex<T>>(tmp.plane(b, c), hw), s.h, s.w, true);
    BasicTensor<T> out(s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tmp.data[i].real();
    return out;
}

template void fft1d_inplace(std::span<std::complex<float>>, bool);
template void fft1d_inplace(std::span<std::complex<double>>, bool);
template void fft2d_inplace(std::span<std::complex<float>>, int, int, bool);
template void fft2d_inplace(std::span<std::complex<double>>, int, int, bool);
template BasicComplexTensor<float> fft2d(const BasicTensor<float>&);
template BasicComplexTensor<double> fft2d(const BasicTensor<double>&);
template BasicTensor<float> ifft2d(const BasicComplexTensor<float>&);
template BasicTensor<double> ifft2d(const BasicComplexTensor<double>&);

} // namespace mmnet
