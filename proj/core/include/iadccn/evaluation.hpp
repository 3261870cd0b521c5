#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iadccn/density.hpp"
#include "iadccn/image.hpp"
#include "iadccn/model.hpp"
#include "iadccn/tensor.hpp"
#include "iadccn/training.hpp"

namespace iadccn::eval {

/// Sum of max(0, v) over every pixel.
double count_from_density(const data::DensityMap& density);
double count_from_density(const Tensor& density);

/// Mean absolute error. Throws ContractError on empty or mismatched input.
double mae(std::span<const double> y, std::span<const double> y_hat);
/// Root of the mean squared error.
double mse(std::span<const double> y, std::span<const double> y_hat);

struct SampleResult {
    std::string id;
    double y = 0.0;
    double y_hat = 0.0;
    double abs_err = 0.0;
    std::size_t height = 0;
    std::size_t width = 0;
    double ms = 0.0;
};

struct ResolutionTiming {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t images = 0;
    double ms_per_image = 0.0;
};

struct EvalReport {
    std::vector<SampleResult> samples;
    double mae = 0.0;
    double mse = 0.0;
    double ms_per_image = 0.0;
    std::vector<ResolutionTiming> timings;  ///< sorted by (height, width)
};

/// Maps an image to a density tensor of any shape.
using DensityPredictor = std::function<Tensor(const data::AnnotatedImage&)>;

EvalReport evaluate(const std::vector<data::AnnotatedImage>& dataset,
                    const DensityPredictor& predictor);
/// Whole-image inference with predict_density.
EvalReport evaluate(const model::Model& model, const std::vector<data::AnnotatedImage>& dataset);

/// id,y,y_hat,abs_err
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
/// {mae, mse, n, ms_per_image, resolutions}
void write_report_json(const std::filesystem::path& path, const EvalReport& report);

enum class Ablation { base, s, iab, iab_hsm };

inline constexpr Ablation kAblations[] = {Ablation::base, Ablation::s, Ablation::iab,
                                          Ablation::iab_hsm};

/// "base", "s", "iab", "iab_hsm"
std::string_view ablation_key(Ablation a);
/// "Base", "Base+S", "Base+IAB", "Base+IAB+HSM"
std::string_view ablation_label(Ablation a);
std::optional<Ablation> parse_ablation(std::string_view key);

/// Sets seg_head_enabled, iab_enabled and hsm_enabled; nothing else.
void apply_ablation(train::RunConfig& config, Ablation a);

struct AblationRow {
    Ablation config;
    EvalReport report;
    /// (prev - cur) / prev * 100 on MAE and MSE; absent for the first row.
    std::optional<double> mae_improvement;
    std::optional<double> mse_improvement;
    std::vector<train::EpochMetrics> history;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

struct AblationOptions {
    double test_fraction = 0.25;
    std::function<void(Ablation, const train::EpochMetrics&)> on_epoch;
};

/// Trains the four configurations from identical seeds on one split and
/// evaluates each on the same held-out images.
AblationResult run_ablation(const std::vector<data::AnnotatedImage>& dataset,
                            const train::RunConfig& base, std::uint64_t seed,
                            const AblationOptions& options = {});

/// config,mae,mse,mae_improvement_pct,mse_improvement_pct
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);

}  // namespace iadccn::eval
