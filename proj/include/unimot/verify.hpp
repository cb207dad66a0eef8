#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unimot/autograd.hpp"
#include "unimot/grad_check.hpp"
#include "unimot/layout.hpp"
#include "unimot/mot.hpp"
#include "unimot/random.hpp"
#include "unimot/train.hpp"

namespace unimot {

// Deliberate corruptions used to confirm that the suite catches real faults.
struct FaultSet {
    bool rope_theta = false;  // queries rotated with a different temporal base than keys
    bool noise_leak = false;  // one clean row of the mask admits a noise column

    bool any() const noexcept { return rope_theta || noise_leak; }
};

// Comma-separated fault names: "rope-theta", "noise-leak".
FaultSet parse_faults(std::string_view names);
std::vector<std::string> fault_names();

struct CheckResult {
    std::string module;
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;

    friend bool operator==(const CheckResult&, const CheckResult&) = default;
};

// One JSON object per line:
//   {"module":..,"name":..,"passed":..,"measured":..,"tolerance":..,"detail":..}
// Non-finite measurements are written as null and read back as NaN.
std::string format_check(const CheckResult& r);
CheckResult parse_check(std::string_view line);

std::vector<std::string> suite_modules();

using CheckSink = std::function<void(const CheckResult&)>;

// Runs every invariant of `filter` (all modules when empty). Throws
// Error{invalid_argument} for an unknown module name.
std::vector<CheckResult> run_invariant_suite(std::string_view filter = {}, const FaultSet& faults = {},
                                             const CheckSink& sink = {});

// Random layout of at most `max_tokens` tokens mixing text runs and image grids.
// With `with_noise`, noise blocks (sometimes paired with a clean follower) appear.
SegmentLayout random_layout(RandomStream& rng, std::size_t max_tokens, bool with_noise);

struct TapeGradCheck {
    GradCheckReport report;
    std::string worst_param;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// Central-difference check of a tape-built scalar against its backward pass.
// `per_tensor` = 0 checks every coordinate; otherwise that many distinct random
// coordinates of each tensor.
TapeGradCheck tape_grad_check(const NamedParams& params, const std::function<ad::Var(ad::Tape&)>& build,
                              double step, std::size_t per_tensor, RandomStream rng);
// Same, with probes evaluated by `value` (the built loss up to an additive constant).
TapeGradCheck tape_grad_check(const NamedParams& params, const std::function<ad::Var(ad::Tape&)>& build,
                              const std::function<double()>& value, double step, std::size_t per_tensor,
                              RandomStream rng);

// Central-difference check of L_total for one training example through the full
// model, probing `per_tensor` random coordinates of every parameter tensor.
TapeGradCheck model_grad_check(ModelParams& params, const TrainingExample& ex, double ce_weight, double mse_weight,
                               double step, std::size_t per_tensor, RandomStream rng);

}  // namespace unimot
