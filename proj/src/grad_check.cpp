#include "unimot/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unimot/error.hpp"

namespace unimot {

GradCheckReport grad_check(const LossFn& loss, std::span<const double> analytic, std::span<const double> params,
                           double step, std::optional<std::span<const std::size_t>> coords) {
    require(analytic.size() == params.size(), ErrorCode::shape_mismatch,
            "grad_check: gradient has " + std::to_string(analytic.size()) + " entries, params " +
                std::to_string(params.size()));
    require(step > 0.0, ErrorCode::invalid_argument, "grad_check: step must be positive");

    std::vector<double> p(params.begin(), params.end());
    GradCheckReport report;

    auto probe = [&](std::size_t i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double up = loss(p);
        p[i] = orig - step;
        const double down = loss(p);
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            fail(ErrorCode::non_finite, "grad_check: non-finite loss probing coordinate " + std::to_string(i));
        }
        const double numeric = (up - down) / (2.0 * step);
        const double g = analytic[i];
        const double denom = std::max({std::abs(g), std::abs(numeric), 1e-8});
        const double rel = std::abs(g - numeric) / denom;
        if (rel > report.max_rel_error || report.checked == 0) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = g;
            report.worst_numeric = numeric;
        }
        ++report.checked;
    };

    if (coords) {
        for (std::size_t i : *coords) {
            require(i < p.size(), ErrorCode::invalid_argument, "grad_check: coordinate out of range");
            probe(i);
        }
    } else {
        for (std::size_t i = 0; i < p.size(); ++i) probe(i);
    }
    return report;
}

}  // namespace unimot
