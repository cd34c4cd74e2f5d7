#include "mmnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmnet/rng.hpp"

namespace mmnet {

GradCheckResult grad_check(const Objective& f, const ParamsD& params, const std::string& op_name,
                           const GradCheckOptions& opt)
{
    ParamsD grads = params.zeros_like();
    const double base = f(params, &grads);
    if (!std::isfinite(base)) throw NumericError("grad_check(" + op_name + "): non-finite objective");
    for (const auto& g : grads)
        if (!g.value.all_finite())
            throw NumericError("grad_check(" + op_name + "): non-finite analytic gradient for '" + g.name + "'");

    const bool sample = params.scalar_count() > opt.sample_threshold;
    Rng rng(opt.seed);
    ParamsD probe = params;
    GradCheckResult result;

    for (std::size_t t = 0; t < probe.size(); ++t) {
        auto& tensor = probe[t].value;
        std::vector<std::size_t> coords(tensor.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (sample && coords.size() > opt.samples_per_tensor) {
            // Partial Fisher-Yates for a seeded sample without replacement.
            for (std::size_t i = 0; i < opt.samples_per_tensor; ++i) {
                const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                        static_cast<std::int64_t>(coords.size() - 1)));
                std::swap(coords[i], coords[j]);
            }
            coords.resize(opt.samples_per_tensor);
        }
        for (std::size_t idx : coords) {
            const double orig = tensor[idx];
            tensor[idx] = orig + opt.eps;
            const double up = f(probe, nullptr);
            tensor[idx] = orig - opt.eps;
            const double down = f(probe, nullptr);
            tensor[idx] = orig;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check(" + op_name + "): non-finite objective while probing '" +
                                   probe[t].name + "'");
            const double numeric = (up - down) / (2.0 * opt.eps);
            const double analytic = grads[t].value[idx];
            // Cancellation in up - down leaves about eps_mach * |f| / eps of
            // noise in `numeric`; below that scale only absolute agreement means anything.
            const double roundoff = std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) / opt.eps;
            const double denom =
                std::max({std::abs(numeric), std::abs(analytic), opt.abs_floor, opt.roundoff_factor * roundoff});
            const double rel = std::abs(numeric - analytic) / denom;
            ++result.coordinates_checked;
            if (rel >= result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = probe[t].name;
                result.worst_index = idx;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace mmnet
