#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "iadccn/tensor.hpp"

namespace iadccn {

/// Maps inputs to a scalar tensor built from recorded ops.
using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// 0 checks every coordinate; otherwise a seeded sample of this many per input.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares backward() against central differences, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. Inputs must be f64; they are cloned, never modified.
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace iadccn
