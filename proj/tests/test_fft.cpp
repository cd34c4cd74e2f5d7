#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mmnet/fft.hpp"
#include "test_util.hpp"

using namespace mmnet;

namespace {

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x)
{
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j)
            out[k] += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * j % n) / static_cast<double>(n));
    return out;
}

} // namespace

class FftLength : public ::testing::TestWithParam<int> {};

TEST_P(FftLength, MatchesDirectDft)
{
    const int n = GetParam();
    Rng rng(static_cast<std::uint64_t>(n));
    std::vector<std::complex<double>> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto y = x;
    fft1d_inplace<double>(y, false);
    const auto ref = dft(x);
    for (int k = 0; k < n; ++k) EXPECT_LT(std::abs(y[k] - ref[k]), 1e-10) << "n=" << n << " k=" << k;
    fft1d_inplace<double>(y, true);
    for (int k = 0; k < n; ++k) EXPECT_LT(std::abs(y[k] - x[k]), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Lengths, FftLength, ::testing::Values(1, 2, 3, 5, 6, 8, 10, 17, 22, 31, 64, 100));

TEST(Fft, ParsevalHolds)
{
    Rng rng(3);
    const auto x = testutil::random_tensor<double>({1, 1, 6, 10}, rng);
    const auto spec = fft2d(x);
    double time = 0, freq = 0;
    for (double v : x.values()) time += v * v;
    for (const auto& c : spec.data) freq += std::norm(c);
    EXPECT_NEAR(time, freq / 60.0, 1e-10);
}

TEST(Fft, ImpulseHasFlatSpectrum)
{
    TensorD x(1, 1, 5, 7);
    x(0, 0, 0, 0) = 1.0;
    const auto spec = fft2d(x);
    for (const auto& c : spec.data) EXPECT_LT(std::abs(c - std::complex<double>(1.0, 0.0)), 1e-14);
}

TEST(Fft, TwoDimensionalRoundTripPerPlane)
{
    Rng rng(12);
    const auto x = testutil::random_tensor<double>({2, 3, 17, 17}, rng);
    const auto back = ifft2d(fft2d(x));
    ASSERT_EQ(back.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
}

TEST(Fft, FloatPrecisionIsUsable)
{
    Rng rng(1);
    const auto x = testutil::random_tensor<float>({1, 1, 6, 6}, rng);
    const auto back = ifft2d(fft2d(x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-5);
}
