#include "iadccn/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "iadccn/error.hpp"
#include "iadccn/evaluation.hpp"
#include "iadccn/ops.hpp"

namespace iadccn::train {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) {
        throw ConfigError("lr must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps_adam > 0.0)) {
        throw ConfigError("Adam needs 0 <= beta < 1 and eps > 0");
    }
    if (!(lambda_s >= 0.0)) {
        throw ConfigError("lambda_s must be non-negative");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (hsm_interval == 0 || hsm_bins == 0) {
        throw ConfigError("hsm_interval and hsm_bins must be at least 1");
    }
    if (!(hsm_min_fraction > 0.0 && hsm_min_fraction <= 1.0)) {
        throw ConfigError("hsm_min_fraction must lie in (0, 1]");
    }
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must lie in [0, 1)");
    }
    if (patches_per_image == 0 || patch_size == 0 || patch_size % 16 != 0) {
        throw ConfigError("patch_size must be a positive multiple of 16");
    }
    if (!(noise_amp >= 0.0)) {
        throw ConfigError("noise_amp must be non-negative");
    }
    density.validate();
}

// ---------------------------------------------------------------------------
// Losses

Tensor density_loss(const Tensor& pred, const Tensor& gt, bool squared) {
    if (pred.shape() != gt.shape() || pred.ndim() != 4) {
        throw DimensionError("density_loss: prediction " + shape_string(pred.shape()) +
                             " and target " + shape_string(gt.shape()) + " differ");
    }
    if (pred.dtype() != gt.dtype()) {
        throw DimensionError("density_loss: mixed dtypes");
    }
    const std::size_t n = pred.dim(0);
    const std::size_t per_sample = pred.numel() / n;
    auto norms = std::make_shared<std::vector<double>>(n, 0.0);
    double loss = 0.0;
    dispatch(pred.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto p = pred.data<T>();
        auto g = gt.data<T>();
        for (std::size_t i = 0; i < n; ++i) {
            double ss = 0.0;
            for (std::size_t k = i * per_sample; k < (i + 1) * per_sample; ++k) {
                const double d = static_cast<double>(p[k]) - static_cast<double>(g[k]);
                ss += d * d;
            }
            (*norms)[i] = std::sqrt(ss);
            loss += squared ? ss : (*norms)[i];
        }
    });
    loss /= static_cast<double>(n);
    Storage value(pred.dtype(), 1, loss);
    return make_result(
        {1}, std::move(value), {pred, gt},
        [pred, gt, norms, n, per_sample, squared](const Storage& grad_out,
                                                  std::span<Storage* const> grads) {
            dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                const double upstream = static_cast<double>(grad_out.view<T>()[0]);
                auto p = pred.data<T>();
                auto g = gt.data<T>();
                for (std::size_t i = 0; i < n; ++i) {
                    const double norm = (*norms)[i];
                    double coef = 0.0;
                    if (squared) {
                        coef = 2.0 * upstream / static_cast<double>(n);
                    } else if (norm > 0.0) {
                        coef = upstream / (static_cast<double>(n) * norm);
                    }
                    for (std::size_t k = i * per_sample; k < (i + 1) * per_sample; ++k) {
                        const double d = static_cast<double>(p[k]) - static_cast<double>(g[k]);
                        if (grads[0]) {
                            grads[0]->view<T>()[k] += static_cast<T>(coef * d);
                        }
                        if (grads[1]) {
                            grads[1]->view<T>()[k] -= static_cast<T>(coef * d);
                        }
                    }
                }
            });
        });
}

namespace {

constexpr double kLogClamp = 1e-12;

}  // namespace

Tensor seg_loss(const Tensor& prob, const Tensor& target) {
    if (prob.shape() != target.shape()) {
        throw DimensionError("seg_loss: prediction " + shape_string(prob.shape()) + " and target " +
                             shape_string(target.shape()) + " differ");
    }
    if (prob.dtype() != target.dtype()) {
        throw DimensionError("seg_loss: mixed dtypes");
    }
    const double count = static_cast<double>(prob.numel());
    double loss = 0.0;
    dispatch(prob.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto p = prob.data<T>();
        auto t = target.data<T>();
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double pk = static_cast<double>(p[k]);
            const double tk = static_cast<double>(t[k]);
            loss -= tk * std::log(std::max(pk, kLogClamp)) +
                    (1.0 - tk) * std::log(std::max(1.0 - pk, kLogClamp));
        }
    });
    loss /= count;
    Storage value(prob.dtype(), 1, loss);
    return make_result(
        {1}, std::move(value), {prob, target},
        [prob, target, count](const Storage& grad_out, std::span<Storage* const> grads) {
            dispatch(grad_out.dtype(), [&]<typename T>(std::type_identity<T>) {
                const double upstream = static_cast<double>(grad_out.view<T>()[0]) / count;
                auto p = prob.data<T>();
                auto t = target.data<T>();
                for (std::size_t k = 0; k < p.size(); ++k) {
                    const double pk = static_cast<double>(p[k]);
                    const double tk = static_cast<double>(t[k]);
                    if (grads[0]) {
                        // Zero slope where a log argument sits on its clamp.
                        double d = 0.0;
                        if (pk > kLogClamp) {
                            d -= tk / pk;
                        }
                        if (1.0 - pk > kLogClamp) {
                            d += (1.0 - tk) / (1.0 - pk);
                        }
                        grads[0]->view<T>()[k] += static_cast<T>(upstream * d);
                    }
                    if (grads[1]) {
                        const double d = std::log(std::max(1.0 - pk, kLogClamp)) -
                                         std::log(std::max(pk, kLogClamp));
                        grads[1]->view<T>()[k] += static_cast<T>(upstream * d);
                    }
                }
            });
        });
}

Tensor total_loss(const Tensor& density_term, const std::optional<Tensor>& seg_term,
                  double lambda_s) {
    if (!seg_term) {
        return density_term;
    }
    return ops::add(density_term, ops::scale(*seg_term, lambda_s));
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(model::ModelParams& params, AdamState& state, const TrainConfig& config) {
    auto& entries = params.entries();
    if (state.first_moment.size() != entries.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (const auto& [name, t] : entries) {
            state.first_moment.emplace_back(t.dtype(), t.numel(), 0.0);
            state.second_moment.emplace_back(t.dtype(), t.numel(), 0.0);
        }
    }
    for (const auto& [name, t] : entries) {
        if (!t.has_grad()) {
            throw ContractError("adam_step: parameter " + name + " has no gradient");
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        Tensor& param = entries[k].second;
        dispatch(param.dtype(), [&]<typename T>(std::type_identity<T>) {
            auto p = param.mutable_data<T>();
            auto g = param.grad_storage().view<T>();
            auto m = state.first_moment[k].view<T>();
            auto v = state.second_moment[k].view<T>();
            const auto b1 = static_cast<T>(config.beta1);
            const auto b2 = static_cast<T>(config.beta2);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const double m_hat = static_cast<double>(m[i]) / correction1;
                const double v_hat = static_cast<double>(v[i]) / correction2;
                p[i] -= static_cast<T>(config.lr * m_hat / (std::sqrt(v_hat) + config.eps_adam));
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Hard sample mining

HardSampleSelection hard_sample_mine(std::span<const double> errors, std::size_t bins,
                                     double min_fraction) {
    if (errors.empty()) {
        throw ContractError("hard_sample_mine: no errors given");
    }
    if (bins == 0) {
        throw ConfigError("hard_sample_mine: bins must be positive");
    }
    double lo = errors[0], hi = errors[0];
    for (const double e : errors) {
        if (!(e >= 0.0) || !std::isfinite(e)) {
            throw ContractError("hard_sample_mine: errors must be finite and non-negative");
        }
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    HardSampleSelection out;
    if (lo == hi) {
        out.threshold = hi;
    } else {
        const double width = hi / static_cast<double>(bins);
        std::vector<std::size_t> counts(bins, 0);
        for (const double e : errors) {
            const auto b = std::min(bins - 1, static_cast<std::size_t>(e / width));
            ++counts[b];
        }
        const auto mode = static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        out.threshold = static_cast<double>(mode + 1) * width;
    }
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i] > out.threshold) {
            out.indices.push_back(i);
        }
    }
    if (static_cast<double>(out.indices.size()) < min_fraction * static_cast<double>(errors.size())) {
        out.fallback = true;
        out.indices.resize(errors.size());
        std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data preparation

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

DatasetSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "split"));
    shuffle(order, rng);
    std::size_t n_val = 0;
    if (val_fraction > 0.0 && n > 0) {
        n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction)));
    }
    if (n < n_val + 2) {
        throw DataError("dataset of " + std::to_string(n) + " images leaves fewer than 2 for training");
    }
    DatasetSplit split;
    split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

std::vector<TrainingSample> build_training_set(const std::vector<data::AnnotatedImage>& images,
                                               std::span<const std::size_t> indices,
                                               const TrainConfig& config,
                                               std::size_t output_stride) {
    std::vector<TrainingSample> samples;
    samples.reserve(indices.size() * config.patches_per_image);
    for (const std::size_t idx : indices) {
        const auto& img = images.at(idx);
        Rng rng(derive_seed(config.seed, "patches/" + std::to_string(idx) + "/" + img.id));
        for (auto& patch :
             data::sample_patches(img, config.patches_per_image, config.patch_size, rng)) {
            data::Patch aug = data::augment(std::move(patch), rng, config.noise_amp);
            TrainingSample s;
            s.truth = data::make_ground_truth(aug.points, aug.image.height, aug.image.width,
                                              config.density, output_stride);
            s.image = std::move(aug.image);
            s.points = std::move(aug.points);
            s.source_id = aug.source_id;
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

namespace {

struct Batch {
    Tensor input;
    Tensor density;
    Tensor inverse;
};

Batch make_batch(const std::vector<TrainingSample>& samples, std::span<const std::size_t> members) {
    std::vector<const data::Image*> imgs;
    imgs.reserve(members.size());
    for (const auto i : members) {
        imgs.push_back(&samples[i].image);
    }
    const auto& first = samples[members[0]].truth.density;
    const Shape target_shape{members.size(), 1, first.height, first.width};
    Storage density(default_dtype(), shape_numel(target_shape));
    Storage inverse(default_dtype(), shape_numel(target_shape));
    const std::size_t plane = first.height * first.width;
    for (std::size_t b = 0; b < members.size(); ++b) {
        const auto& truth = samples[members[b]].truth;
        for (std::size_t k = 0; k < plane; ++k) {
            density.set(b * plane + k, truth.density.values[k]);
            inverse.set(b * plane + k, truth.inverse.values[k]);
        }
    }
    return {data::images_to_tensor(imgs), Tensor::from_storage(target_shape, std::move(density)),
            Tensor::from_storage(target_shape, std::move(inverse))};
}

/// Clamped per-sample counts of a [N,1,h,w] density.
std::vector<double> batch_counts(const Tensor& density) {
    const std::size_t n = density.dim(0);
    const std::size_t plane = density.numel() / n;
    std::vector<double> counts(n, 0.0);
    const auto values = density.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < plane; ++k) {
            counts[i] += std::max(0.0, values[i * plane + k]);
        }
    }
    return counts;
}

constexpr std::size_t kInferenceBatch = 16;

}  // namespace

std::vector<double> sample_count_errors(const model::Model& model,
                                        const std::vector<TrainingSample>& samples) {
    NoGradGuard no_grad;
    std::vector<double> errors(samples.size(), 0.0);
    std::vector<std::size_t> members;
    for (std::size_t start = 0; start < samples.size(); start += kInferenceBatch) {
        members.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + kInferenceBatch); ++i) {
            members.push_back(i);
        }
        std::vector<const data::Image*> imgs;
        for (const auto i : members) {
            imgs.push_back(&samples[i].image);
        }
        const auto out = model::forward(model.params, model.config, data::images_to_tensor(imgs));
        const auto counts = batch_counts(out.density);
        for (std::size_t b = 0; b < members.size(); ++b) {
            errors[members[b]] = std::abs(samples[members[b]].truth.count - counts[b]);
        }
    }
    return errors;
}

TrainResult train(model::Model& model, const std::vector<data::AnnotatedImage>& dataset,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
    config.validate();
    model.config.validate();
    model.params.check_inventory(model.config);
    if (dataset.empty()) {
        throw DataError("training dataset is empty");
    }
    TrainResult result;
    result.split = split_dataset(dataset.size(), config.val_fraction, config.seed);
    result.samples =
        build_training_set(dataset, result.split.train, config, model.config.output_stride());
    const auto& samples = result.samples;

    TrainState& state = result.state;
    state.seed = config.seed;
    state.rng = Rng(derive_seed(config.seed, "epochs"));
    state.active_indices.resize(samples.size());
    std::iota(state.active_indices.begin(), state.active_indices.end(), std::size_t{0});

    for (auto& [name, t] : model.params.entries()) {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    std::vector<data::AnnotatedImage> validation;
    for (const auto i : result.split.validation) {
        validation.push_back(dataset[i]);
    }

    std::optional<model::ModelParams> best;
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        state.epoch = epoch;
        std::vector<std::size_t> order = state.active_indices;
        shuffle(order, state.rng);

        double abs_err = 0.0, ld_sum = 0.0, ls_sum = 0.0;
        std::size_t seen = 0, steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::span<const std::size_t> members(
                order.data() + start, std::min(config.batch_size, order.size() - start));
            const Batch batch = make_batch(samples, members);
            const auto out = model::forward(model.params, model.config, batch.input);

            const Tensor ld = density_loss(out.density, batch.density, config.squared_l2);
            std::optional<Tensor> ls;
            if (out.inverse_attention) {
                ls = seg_loss(*out.inverse_attention, batch.inverse);
            }
            if (out.seg_logits) {
                const Tensor head = seg_loss(ops::sigmoid(*out.seg_logits), batch.inverse);
                ls = ls ? ops::add(*ls, head) : head;
            }
            const Tensor loss = total_loss(ld, ls, config.lambda_s);
            loss.backward();
            adam_step(model.params, state.adam, config);
            model.params.zero_grad();

            const auto counts = batch_counts(out.density);
            for (std::size_t b = 0; b < members.size(); ++b) {
                abs_err += std::abs(samples[members[b]].truth.count - counts[b]);
            }
            seen += members.size();
            ld_sum += ld.item();
            ls_sum += ls ? ls->item() : 0.0;
            ++steps;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_mae = abs_err / static_cast<double>(seen);
        m.density_loss = ld_sum / static_cast<double>(steps);
        m.seg_loss = ls_sum / static_cast<double>(steps);
        m.active_set_size = state.active_indices.size();
        m.val_mae = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : eval::evaluate(model, validation).mae;
        if (!validation.empty() && m.val_mae < best_val) {
            best_val = m.val_mae;
            result.best_epoch = epoch;
            if (config.restore_best) {
                best = model.params.clone();
            }
        }

        if (config.hsm_enabled && epoch % config.hsm_interval == 0) {
            const auto errors = sample_count_errors(model, samples);
            state.active_indices =
                hard_sample_mine(errors, config.hsm_bins, config.hsm_min_fraction).indices;
        }
        result.history.push_back(m);
        if (callbacks.on_epoch) {
            callbacks.on_epoch(m);
        }
    }
    if (best) {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            auto src = best->entries()[i].second.storage();
            model.params.entries()[i].second.mutable_storage() = std::move(src);
        }
    }
    for (auto& [name, t] : model.params.entries()) {
        t.zero_grad();
    }
    return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "epoch,train_mae,val_mae,L_d,L_s,active_set_size\n";
    char buf[256];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%zu\n", m.epoch, m.train_mae,
                      m.val_mae, m.density_loss, m.seg_loss, m.active_set_size);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Config files

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty() || v[0] == '-') {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::array<std::size_t, 5> parse_five(const std::string& key, const std::string& v) {
    std::array<std::size_t, 5> out{};
    std::stringstream ss(v);
    std::string item;
    std::size_t n = 0;
    while (std::getline(ss, item, ',')) {
        if (n == 5) {
            throw ConfigError(key + ": expected 5 comma-separated values");
        }
        out[n++] = static_cast<std::size_t>(parse_uint(key, trim(item)));
    }
    if (n != 5) {
        throw ConfigError(key + ": expected 5 comma-separated values");
    }
    return out;
}

std::string join_five(const std::array<std::size_t, 5>& a) {
    std::string s;
    for (std::size_t i = 0; i < 5; ++i) {
        s += (i ? "," : "") + std::to_string(a[i]);
    }
    return s;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    auto& t = config.train;
    auto& m = config.model;
    auto sz = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
    if (key == "preset") {
        if (value == "vgg16") {
            m = model::ModelConfig::vgg16();
        } else if (value == "desk") {
            m = model::ModelConfig::desk();
        } else if (value == "tiny") {
            m = model::ModelConfig::tiny();
        } else {
            throw ConfigError("preset: expected vgg16, desk or tiny, got '" + value + "'");
        }
    } else if (key == "lr") {
        t.lr = parse_double(key, value);
    } else if (key == "beta1") {
        t.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
        t.beta2 = parse_double(key, value);
    } else if (key == "eps_adam") {
        t.eps_adam = parse_double(key, value);
    } else if (key == "lambda_s") {
        t.lambda_s = parse_double(key, value);
    } else if (key == "epochs") {
        t.epochs = sz();
    } else if (key == "batch_size") {
        t.batch_size = sz();
    } else if (key == "hsm_enabled") {
        t.hsm_enabled = parse_bool(key, value);
    } else if (key == "hsm_interval") {
        t.hsm_interval = sz();
    } else if (key == "hsm_bins") {
        t.hsm_bins = sz();
    } else if (key == "hsm_min_fraction") {
        t.hsm_min_fraction = parse_double(key, value);
    } else if (key == "val_fraction") {
        t.val_fraction = parse_double(key, value);
    } else if (key == "seed") {
        t.seed = parse_uint(key, value);
    } else if (key == "squared_l2") {
        t.squared_l2 = parse_bool(key, value);
    } else if (key == "restore_best") {
        t.restore_best = parse_bool(key, value);
    } else if (key == "patches_per_image") {
        t.patches_per_image = sz();
    } else if (key == "patch_size") {
        t.patch_size = sz();
    } else if (key == "noise_amp") {
        t.noise_amp = parse_double(key, value);
    } else if (key == "sigma") {
        t.density.sigma = parse_double(key, value);
    } else if (key == "mask_threshold") {
        t.density.mask_threshold = parse_double(key, value);
    } else if (key == "in_channels") {
        m.in_channels = sz();
    } else if (key == "block_channels") {
        m.block_channels = parse_five(key, value);
    } else if (key == "block_depths") {
        m.block_depths = parse_five(key, value);
    } else if (key == "dru_channels") {
        m.dru_channels = sz();
    } else if (key == "iab_enabled") {
        m.iab_enabled = parse_bool(key, value);
    } else if (key == "iab_hidden") {
        m.iab_hidden = sz();
    } else if (key == "seg_head_enabled") {
        m.seg_head_enabled = parse_bool(key, value);
    } else if (key == "upsample_factor") {
        m.upsample_factor = sz();
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

RunConfig parse_run_config(std::istream& in, RunConfig base) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        try {
            apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    return parse_run_config(in, std::move(base));
}

std::string to_key_values(const RunConfig& config) {
    const auto& t = config.train;
    const auto& m = config.model;
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "in_channels=" << m.in_channels << '\n'
       << "block_channels=" << join_five(m.block_channels) << '\n'
       << "block_depths=" << join_five(m.block_depths) << '\n'
       << "dru_channels=" << m.dru_channels << '\n'
       << "iab_enabled=" << b(m.iab_enabled) << '\n'
       << "iab_hidden=" << m.iab_hidden << '\n'
       << "seg_head_enabled=" << b(m.seg_head_enabled) << '\n'
       << "upsample_factor=" << m.upsample_factor << '\n'
       << "lr=" << fmt_double(t.lr) << '\n'
       << "beta1=" << fmt_double(t.beta1) << '\n'
       << "beta2=" << fmt_double(t.beta2) << '\n'
       << "eps_adam=" << fmt_double(t.eps_adam) << '\n'
       << "lambda_s=" << fmt_double(t.lambda_s) << '\n'
       << "epochs=" << t.epochs << '\n'
       << "batch_size=" << t.batch_size << '\n'
       << "hsm_enabled=" << b(t.hsm_enabled) << '\n'
       << "hsm_interval=" << t.hsm_interval << '\n'
       << "hsm_bins=" << t.hsm_bins << '\n'
       << "hsm_min_fraction=" << fmt_double(t.hsm_min_fraction) << '\n'
       << "val_fraction=" << fmt_double(t.val_fraction) << '\n'
       << "seed=" << t.seed << '\n'
       << "squared_l2=" << b(t.squared_l2) << '\n'
       << "restore_best=" << b(t.restore_best) << '\n'
       << "patches_per_image=" << t.patches_per_image << '\n'
       << "patch_size=" << t.patch_size << '\n'
       << "noise_amp=" << fmt_double(t.noise_amp) << '\n'
       << "sigma=" << fmt_double(t.density.sigma) << '\n'
       << "mask_threshold=" << fmt_double(t.density.mask_threshold) << '\n';
    return os.str();
}

}  // namespace iadccn::train
