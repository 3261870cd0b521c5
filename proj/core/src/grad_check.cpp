#include "iadccn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iadccn/error.hpp"
#include "iadccn/rng.hpp"

namespace iadccn {

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
    for (const auto& in : inputs) {
        if (in.dtype() != DType::f64) {
            throw ContractError("grad_check requires f64 tensors");
        }
    }
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) {
        Tensor leaf = in.clone();
        leaf.set_requires_grad(true);
        leaves.push_back(leaf);
    }
    {
        const Tensor loss = f(leaves);
        loss.backward();
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        analytic.push_back(leaf.grad_vector());
    }

    GradCheckResult result;
    Rng rng(options.seed);
    NoGradGuard no_grad;
    auto evaluate = [&] { return f(leaves).item(); };
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        Tensor& leaf = leaves[k];
        std::vector<std::size_t> coords(leaf.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
            // Partial Fisher-Yates for a seeded subset.
            for (std::size_t i = 0; i < options.max_coords_per_input; ++i) {
                const auto j = static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(i),
                                    static_cast<std::int64_t>(coords.size() - 1)));
                std::swap(coords[i], coords[j]);
            }
            coords.resize(options.max_coords_per_input);
        }
        auto values = leaf.mutable_data<double>();
        for (const std::size_t c : coords) {
            const double original = values[c];
            values[c] = original + options.eps;
            const double plus = evaluate();
            values[c] = original - options.eps;
            const double minus = evaluate();
            values[c] = original;
            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double a = analytic[k][c];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++result.coords_checked;
            if (rel >= result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_input = k;
                result.worst_coord = c;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace iadccn
