#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iadccn/grad_check.hpp"

namespace iadccn::cli {

struct GradCheckEntry {
    std::string name;
    GradCheckResult result;
    double tolerance = 0.0;
    bool passed() const { return result.max_rel_err <= tolerance; }
};

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

/// Finite-difference checks of every differentiable op and both losses, f64.
std::vector<GradCheckEntry> run_op_gradchecks(std::uint64_t seed = 7);

/// Full L = L_d + 0.1 L_s on the tiny config at 32x32, every parameter.
GradCheckEntry run_model_gradcheck(std::uint64_t seed = 7);

}  // namespace iadccn::cli
