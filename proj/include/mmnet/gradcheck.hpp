#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mmnet/tensor.hpp"

namespace mmnet {

/// Scalar objective over a parameter set. When `grads` is non-null the
/// objective also writes its analytic gradient there (same names/shapes).
using Objective = std::function<double(const ParamsD& params, ParamsD* grads)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// Coordinates whose analytic and numeric derivative both fall below this
    /// are compared in absolute terms (relative error is meaningless at 0).
    double abs_floor = 1e-6;
    /// The floor is also raised to this multiple of the finite-difference
    /// roundoff, eps_mach * |f| / eps, so a gradient that is exactly zero
    /// (e.g. a softmax shift invariance) is not judged on pure noise.
    double roundoff_factor = 1e5;
    /// Above this many scalars, check a seeded sample per tensor instead.
    std::size_t sample_threshold = 10000;
    std::size_t samples_per_tensor = 6;
    std::uint64_t seed = 1234;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

/// Central-difference check of `f` at `params`: (f(p+eps) - f(p-eps)) / 2eps
/// against the analytic gradient, worst relative error over the checked
/// coordinates. Throws NumericError mentioning `op_name` on non-finite values.
GradCheckResult grad_check(const Objective& f, const ParamsD& params, const std::string& op_name,
                           const GradCheckOptions& opt = {});

} // namespace mmnet
