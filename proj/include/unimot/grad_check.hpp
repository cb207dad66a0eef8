#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace unimot {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

using LossFn = std::function<double(std::span<const double>)>;

// Central-difference check of `analytic` against `loss` at `params`.
// Relative error per coordinate is |g - g_fd| / max(|g|, |g_fd|, 1e-8).
// `coords` restricts the check to a subset; all coordinates otherwise.
// Throws Error{non_finite} naming the coordinate if a probe is not finite.
GradCheckReport grad_check(const LossFn& loss, std::span<const double> analytic, std::span<const double> params,
                           double step, std::optional<std::span<const std::size_t>> coords = std::nullopt);

}  // namespace unimot
