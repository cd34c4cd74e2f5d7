#pragma once

#include <complex>
#include <span>

#include "mmnet/tensor.hpp"

namespace mmnet {

// Discrete Fourier transforms of exact length: radix-2 for powers of two,
// Bluestein's chirp-z otherwise (which internally zero-pads to a power of two
// but still yields the length-n DFT). Forward is unnormalized; inverse scales
// by 1/n.

template <typename T>
void fft1d_inplace(std::span<std::complex<T>> data, bool inverse);

/// 2-D transform of one h x w plane stored row-major.
template <typename T>
void fft2d_inplace(std::span<std::complex<T>> plane, int h, int w, bool inverse);

/// Per-(n, c) plane spectrum of a real tensor.
template <typename T>
BasicComplexTensor<T> fft2d(const BasicTensor<T>& x);

/// Real part of the per-plane inverse transform.
template <typename T>
BasicTensor<T> ifft2d(const BasicComplexTensor<T>& spectrum);

} // namespace mmnet
