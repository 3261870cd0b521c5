#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iadccn/density.hpp"
#include "iadccn/model.hpp"
#include "iadccn/patches.hpp"
#include "iadccn/rng.hpp"
#include "iadccn/tensor.hpp"

namespace iadccn::train {

struct TrainConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    double lambda_s = 0.1;
    std::size_t epochs = 10;
    std::size_t batch_size = 1;
    bool hsm_enabled = false;
    std::size_t hsm_interval = 5;
    std::size_t hsm_bins = 50;
    double hsm_min_fraction = 0.1;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    /// Sum of squared errors instead of the Euclidean norm in the density loss.
    bool squared_l2 = false;
    /// Finish with the parameters of the epoch with the lowest validation MAE.
    bool restore_best = true;

    std::size_t patches_per_image = 9;
    std::size_t patch_size = 224;
    double noise_amp = 0.01;
    data::DensityConfig density;

    void validate() const;
};

/// L_d = (1/N) sum_i ||pred_i - gt_i||_2 over [N,1,h,w] maps. The norm's
/// gradient at a zero residual is taken as 0. With `squared` the per-sample
/// term is ||.||^2.
Tensor density_loss(const Tensor& pred, const Tensor& gt, bool squared = false);

/// Mean pixel-wise binary cross-entropy of probabilities against a target in
/// [0, 1]; log arguments are clamped at 1e-12.
Tensor seg_loss(const Tensor& prob, const Tensor& target);

/// L = L_d + lambda_s * L_s, or L_d when there is no segmentation term.
Tensor total_loss(const Tensor& density_term, const std::optional<Tensor>& seg_term,
                  double lambda_s);

struct AdamState {
    std::vector<Storage> first_moment;
    std::vector<Storage> second_moment;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam over every parameter. A parameter without a gradient
/// is a ContractError.
void adam_step(model::ModelParams& params, AdamState& state, const TrainConfig& config);

struct HardSampleSelection {
    std::vector<std::size_t> indices;
    double threshold = 0.0;  ///< T, upper edge of the modal histogram bin
    bool fallback = false;   ///< selection was too small; all indices returned
};

/// Histogram the errors over [0, max] in `bins` equal-width bins, take T as
/// the upper edge of the fullest bin (lowest on ties; the common value when
/// all errors are equal) and keep {i : e_i > T}, so the whole modal bin is
/// treated as easy. Falls back to every index when
/// fewer than min_fraction * n survive.
HardSampleSelection hard_sample_mine(std::span<const double> errors, std::size_t bins = 50,
                                     double min_fraction = 0.1);

/// One training example: a cropped, augmented patch and its targets on the
/// network output grid.
struct TrainingSample {
    data::Image image;
    std::vector<data::Point> points;
    data::GroundTruth truth;
    std::string source_id;
};

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Seeded split by image. Validation gets round(n * fraction) images, at
/// least one when fraction > 0. Fails when fewer than 2 images remain.
DatasetSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed);

std::vector<TrainingSample> build_training_set(const std::vector<data::AnnotatedImage>& images,
                                               std::span<const std::size_t> indices,
                                               const TrainConfig& config,
                                               std::size_t output_stride);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_mae = 0.0;  ///< over samples seen this epoch, before each update
    double val_mae = 0.0;    ///< NaN without a validation split
    double density_loss = 0.0;
    double seg_loss = 0.0;
    std::size_t active_set_size = 0;
};

struct TrainState {
    AdamState adam;
    std::size_t epoch = 0;
    std::vector<std::size_t> active_indices;
    std::uint64_t seed = 0;
    Rng rng;
};

struct TrainCallbacks {
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    TrainState state;
    std::size_t best_epoch = 0;  ///< 0 when no validation split
    std::vector<EpochMetrics> history;
    DatasetSplit split;
    std::vector<TrainingSample> samples;
};

/// Per-sample |y - y'| on training samples, no graph recorded.
std::vector<double> sample_count_errors(const model::Model& model,
                                        const std::vector<TrainingSample>& samples);

TrainResult train(model::Model& model, const std::vector<data::AnnotatedImage>& dataset,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

/// epoch,train_mae,val_mae,L_d,L_s,active_set_size
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);

// ---------------------------------------------------------------------------
// Config files: flat `key = value` lines, `#` starts a comment.

struct RunConfig {
    model::ModelConfig model;
    TrainConfig train;
};

/// Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_run_config(std::istream& in, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Canonical `key=value` lines; parse_run_config reads them back.
std::string to_key_values(const RunConfig& config);

}  // namespace iadccn::train
