#include "iadccn/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "iadccn/error.hpp"

namespace iadccn::eval {

double count_from_density(const data::DensityMap& density) {
    double total = 0.0;
    for (const double v : density.values) {
        total += std::max(0.0, v);
    }
    return total;
}

double count_from_density(const Tensor& density) {
    double total = 0.0;
    dispatch(density.dtype(), [&]<typename T>(std::type_identity<T>) {
        for (const T v : density.data<T>()) {
            total += std::max(0.0, static_cast<double>(v));
        }
    });
    return total;
}

namespace {

void check_pair(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) {
        throw ContractError("metric inputs differ in length: " + std::to_string(y.size()) +
                            " vs " + std::to_string(y_hat.size()));
    }
    if (y.empty()) {
        throw ContractError("metric inputs are empty");
    }
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += std::abs(y[i] - y_hat[i]);
    }
    return s / static_cast<double>(y.size());
}

double mse(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - y_hat[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(y.size()));
}

EvalReport evaluate(const std::vector<data::AnnotatedImage>& dataset,
                    const DensityPredictor& predictor) {
    using Clock = std::chrono::steady_clock;
    EvalReport report;
    std::vector<double> y, y_hat;
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, double>> by_res;
    double total_ms = 0.0;
    for (const auto& img : dataset) {
        const auto start = Clock::now();
        const Tensor density = predictor(img);
        const double ms =
            std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        SampleResult r;
        r.id = img.id;
        r.y = static_cast<double>(img.points.size());
        r.y_hat = count_from_density(density);
        r.abs_err = std::abs(r.y - r.y_hat);
        r.height = img.image.height;
        r.width = img.image.width;
        r.ms = ms;
        y.push_back(r.y);
        y_hat.push_back(r.y_hat);
        auto& slot = by_res[{r.height, r.width}];
        ++slot.first;
        slot.second += ms;
        total_ms += ms;
        report.samples.push_back(std::move(r));
    }
    if (!dataset.empty()) {
        report.mae = mae(y, y_hat);
        report.mse = mse(y, y_hat);
        report.ms_per_image = total_ms / static_cast<double>(dataset.size());
    }
    for (const auto& [hw, slot] : by_res) {
        report.timings.push_back(
            {hw.first, hw.second, slot.first, slot.second / static_cast<double>(slot.first)});
    }
    return report;
}

EvalReport evaluate(const model::Model& model, const std::vector<data::AnnotatedImage>& dataset) {
    return evaluate(dataset, [&model](const data::AnnotatedImage& img) {
        return model::predict_density(model, img.image);
    });
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "id,y,y_hat,abs_err\n";
    char buf[128];
    for (const auto& s : report.samples) {
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g\n", s.y, s.y_hat, s.abs_err);
        out << s.id << buf;
    }
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
    nlohmann::ordered_json j;
    j["mae"] = report.mae;
    j["mse"] = report.mse;
    j["n"] = report.samples.size();
    j["ms_per_image"] = report.ms_per_image;
    auto& res = j["resolutions"] = nlohmann::ordered_json::array();
    for (const auto& t : report.timings) {
        res.push_back({{"height", t.height},
                       {"width", t.width},
                       {"images", t.images},
                       {"ms_per_image", t.ms_per_image}});
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

std::string_view ablation_key(Ablation a) {
    switch (a) {
        case Ablation::base: return "base";
        case Ablation::s: return "s";
        case Ablation::iab: return "iab";
        case Ablation::iab_hsm: return "iab_hsm";
    }
    return "";
}

std::string_view ablation_label(Ablation a) {
    switch (a) {
        case Ablation::base: return "Base";
        case Ablation::s: return "Base+S";
        case Ablation::iab: return "Base+IAB";
        case Ablation::iab_hsm: return "Base+IAB+HSM";
    }
    return "";
}

std::optional<Ablation> parse_ablation(std::string_view key) {
    for (const Ablation a : kAblations) {
        if (ablation_key(a) == key) {
            return a;
        }
    }
    return std::nullopt;
}

void apply_ablation(train::RunConfig& config, Ablation a) {
    config.model.seg_head_enabled = a == Ablation::s;
    config.model.iab_enabled = a == Ablation::iab || a == Ablation::iab_hsm;
    config.train.hsm_enabled = a == Ablation::iab_hsm;
}

AblationResult run_ablation(const std::vector<data::AnnotatedImage>& dataset,
                            const train::RunConfig& base, std::uint64_t seed,
                            const AblationOptions& options) {
    const auto split =
        train::split_dataset(dataset.size(), options.test_fraction, derive_seed(seed, "ablation"));
    AblationResult result;
    result.train_indices = split.train;
    result.test_indices = split.validation;
    std::vector<data::AnnotatedImage> train_set, test_set;
    for (const auto i : split.train) {
        train_set.push_back(dataset[i]);
    }
    for (const auto i : split.validation) {
        test_set.push_back(dataset[i]);
    }

    for (const Ablation a : kAblations) {
        train::RunConfig cfg = base;
        cfg.train.seed = seed;
        apply_ablation(cfg, a);
        Rng init_rng(derive_seed(seed, "init"));
        model::Model model{cfg.model, model::init_params(cfg.model, init_rng)};
        train::TrainCallbacks callbacks;
        if (options.on_epoch) {
            callbacks.on_epoch = [&](const train::EpochMetrics& m) { options.on_epoch(a, m); };
        }
        auto trained = train::train(model, train_set, cfg.train, callbacks);

        AblationRow row{a, evaluate(model, test_set), std::nullopt, std::nullopt,
                        std::move(trained.history)};
        if (!result.rows.empty()) {
            const auto& prev = result.rows.back().report;
            if (prev.mae > 0.0) {
                row.mae_improvement = (prev.mae - row.report.mae) / prev.mae * 100.0;
            }
            if (prev.mse > 0.0) {
                row.mse_improvement = (prev.mse - row.report.mse) / prev.mse * 100.0;
            }
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "config,mae,mse,mae_improvement_pct,mse_improvement_pct\n";
    auto opt = [](const std::optional<double>& v) {
        if (!v) {
            return std::string();
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", *v);
        return std::string(buf);
    };
    char buf[96];
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,", row.report.mae, row.report.mse);
        out << ablation_label(row.config) << buf << opt(row.mae_improvement) << ','
            << opt(row.mse_improvement) << '\n';
    }
}

}  // namespace iadccn::eval
