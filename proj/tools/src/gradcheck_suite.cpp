#include "iadccn_cli/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "iadccn/density.hpp"
#include "iadccn/model.hpp"
#include "iadccn/ops.hpp"
#include "iadccn/rng.hpp"
#include "iadccn/training.hpp"

namespace iadccn::cli {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::from_vector(shape, v);
}

/// Values bounded away from zero, for relu.
Tensor off_zero_tensor(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        const double m = rng.uniform(0.1, 1.0);
        x = rng.bernoulli(0.5) ? m : -m;
    }
    return Tensor::from_vector(shape, v);
}

/// Shuffled, evenly spaced values, so maxima are unique by a wide margin.
Tensor distinct_tensor(const Shape& shape, Rng& rng) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    }
    for (std::size_t i = n; i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }
    return Tensor::from_vector(shape, v);
}

/// Projects a tensor onto a scalar with fixed random weights.
ScalarFunction project(std::function<Tensor(std::span<const Tensor>)> op, const Shape& out_shape,
                       Rng& rng) {
    const Tensor weights = random_tensor(out_shape, rng);
    return [op = std::move(op), weights](std::span<const Tensor> in) {
        return ops::reduce_sum(ops::mul(op(in), weights));
    };
}

}  // namespace

std::vector<GradCheckEntry> run_op_gradchecks(std::uint64_t seed) {
    DTypeScope f64(DType::f64);
    Rng rng(seed);
    std::vector<GradCheckEntry> out;
    auto check = [&](std::string name, const ScalarFunction& f, std::vector<Tensor> inputs) {
        GradCheckOptions opts;
        opts.seed = seed;
        out.push_back({std::move(name), grad_check(f, inputs, opts), kOpTolerance});
    };

    {
        const Tensor x = random_tensor({2, 3, 6, 5}, rng);
        const Tensor w = random_tensor({4, 3, 3, 3}, rng);
        const Tensor b = random_tensor({4}, rng);
        check("conv2d 3x3 pad1",
              project([](auto in) { return ops::conv2d(in[0], in[1], in[2], 1, 1); }, {2, 4, 6, 5}, rng),
              {x, w, b});
        const Tensor x7 = random_tensor({1, 3, 7, 5}, rng);
        check("conv2d 3x3 stride2",
              project([](auto in) { return ops::conv2d(in[0], in[1], in[2], 2, 0); }, {1, 4, 3, 2}, rng),
              {x7, w, b});
        const Tensor w1 = random_tensor({2, 3, 1, 1}, rng);
        const Tensor b1 = random_tensor({2}, rng);
        check("conv2d 1x1",
              project([](auto in) { return ops::conv2d(in[0], in[1], in[2]); }, {2, 2, 6, 5}, rng),
              {x, w1, b1});
    }
    check("relu", project([](auto in) { return ops::relu(in[0]); }, {2, 3, 4, 4}, rng),
          {off_zero_tensor({2, 3, 4, 4}, rng)});
    check("sigmoid", project([](auto in) { return ops::sigmoid(in[0]); }, {1, 2, 3, 4}, rng),
          {random_tensor({1, 2, 3, 4}, rng, -4.0, 4.0)});
    check("maxpool2d", project([](auto in) { return ops::maxpool2d(in[0]); }, {1, 2, 3, 2}, rng),
          {distinct_tensor({1, 2, 6, 4}, rng)});
    check("upsample_bilinear x4",
          project([](auto in) { return ops::upsample_bilinear(in[0], 4); }, {1, 2, 12, 8}, rng),
          {random_tensor({1, 2, 3, 2}, rng)});
    check("upsample_bilinear x2",
          project([](auto in) { return ops::upsample_bilinear(in[0], 2); }, {2, 1, 6, 6}, rng),
          {random_tensor({2, 1, 3, 3}, rng)});
    {
        const Tensor a = random_tensor({2, 3, 4, 3}, rng);
        const Tensor b = random_tensor({2, 3, 4, 3}, rng);
        const Tensor m = random_tensor({2, 1, 4, 3}, rng);
        check("add", project([](auto in) { return ops::add(in[0], in[1]); }, {2, 3, 4, 3}, rng), {a, b});
        check("sub", project([](auto in) { return ops::sub(in[0], in[1]); }, {2, 3, 4, 3}, rng), {a, b});
        check("mul", project([](auto in) { return ops::mul(in[0], in[1]); }, {2, 3, 4, 3}, rng), {a, b});
        check("mul broadcast", project([](auto in) { return ops::mul(in[0], in[1]); }, {2, 3, 4, 3}, rng),
              {a, m});
        check("sub broadcast", project([](auto in) { return ops::sub(in[0], in[1]); }, {2, 3, 4, 3}, rng),
              {a, m});
        check("scale", project([](auto in) { return ops::scale(in[0], -1.7); }, {2, 3, 4, 3}, rng), {a});
    }
    check("reduce_sum", [](auto in) { return ops::reduce_sum(in[0]); },
          {random_tensor({2, 2, 3, 3}, rng)});
    check("reduce_mean", [](auto in) { return ops::reduce_mean(in[0]); },
          {random_tensor({2, 2, 3, 3}, rng)});
    check("pad_bottom_right",
          project([](auto in) { return ops::pad_bottom_right(in[0], 2, 3); }, {1, 2, 5, 7}, rng),
          {random_tensor({1, 2, 3, 4}, rng)});
    check("crop_top_left",
          project([](auto in) { return ops::crop_top_left(in[0], 2, 3); }, {1, 2, 2, 3}, rng),
          {random_tensor({1, 2, 4, 5}, rng)});
    check("density_loss", [](auto in) { return train::density_loss(in[0], in[1]); },
          {random_tensor({3, 1, 4, 4}, rng), random_tensor({3, 1, 4, 4}, rng)});
    check("density_loss squared", [](auto in) { return train::density_loss(in[0], in[1], true); },
          {random_tensor({3, 1, 4, 4}, rng), random_tensor({3, 1, 4, 4}, rng)});
    check("seg_loss", [](auto in) { return train::seg_loss(in[0], in[1]); },
          {random_tensor({2, 1, 3, 4}, rng, 0.05, 0.95), random_tensor({2, 1, 3, 4}, rng, 0.0, 1.0)});
    return out;
}

GradCheckEntry run_model_gradcheck(std::uint64_t seed) {
    DTypeScope f64(DType::f64);
    model::ModelConfig config = model::ModelConfig::tiny();
    config.iab_enabled = true;
    config.seg_head_enabled = true;
    Rng rng(seed);
    // Default init puts most pre-activations within eps of the relu kink, so
    // weights get He scale and biases a spread of offsets.
    model::ModelParams params = model::init_params(config, rng);
    for (auto& [name, t] : params.entries()) {
        const bool bias = name.ends_with(".bias");
        const double fan_in = bias ? 1.0 : static_cast<double>(t.numel() / t.dim(0));
        const double sd = bias ? 0.1 : std::sqrt(2.0 / fan_in);
        auto v = t.mutable_data<double>();
        for (auto& x : v) {
            x = rng.normal(0.0, sd);
        }
    }

    constexpr std::size_t kSize = 32;
    const Tensor x = random_tensor({1, config.in_channels, kSize, kSize}, rng, 0.0, 1.0);
    std::vector<data::Point> points;
    for (int i = 0; i < 5; ++i) {
        points.push_back({rng.uniform(0.0, kSize - 1.0), rng.uniform(0.0, kSize - 1.0)});
    }
    const auto truth = data::make_ground_truth(points, kSize, kSize, {}, config.output_stride());
    const Shape target_shape{1, 1, truth.density.height, truth.density.width};
    const Tensor density_gt = Tensor::from_vector(target_shape, truth.density.values);
    std::vector<double> inverse(truth.inverse.values.begin(), truth.inverse.values.end());
    const Tensor inverse_gt = Tensor::from_vector(target_shape, inverse);

    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : params.entries()) {
        names.push_back(name);
        inputs.push_back(t.detach());
    }
    const ScalarFunction f = [&](std::span<const Tensor> in) {
        model::ModelParams p;
        for (std::size_t i = 0; i < in.size(); ++i) {
            p.insert(names[i], in[i]);
        }
        const auto out = model::forward(p, config, x);
        const Tensor ld = train::density_loss(out.density, density_gt);
        const Tensor ls = ops::add(train::seg_loss(*out.inverse_attention, inverse_gt),
                                   train::seg_loss(ops::sigmoid(*out.seg_logits), inverse_gt));
        return train::total_loss(ld, ls, 0.1);
    };
    GradCheckOptions opts;
    opts.seed = seed;
    return {"model L = L_d + 0.1 L_s (tiny, 32x32)", grad_check(f, inputs, opts), kModelTolerance};
}

}  // namespace iadccn::cli
