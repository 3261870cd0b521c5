#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "iadccn/image.hpp"

namespace iadccn::data {

/// Density maps are accumulated on a fixed-point grid of this quantum, so
/// that every partial sum of a generated map is exact in double precision
/// and counts are conserved bit-for-bit through sum-pooling.
inline constexpr double kDensityQuantum = 0x1.0p-32;

struct DensityConfig {
    double sigma = 4.0;
    double mask_threshold = 1e-3;

    /// ceil(3 * sigma)
    std::size_t truncation_radius() const;
    void validate() const;
};

/// People per pixel. `scale` is 1 at input resolution and the pooling
/// factor for maps on the network output grid.
struct DensityMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint32_t scale = 1;
    std::vector<double> values;

    DensityMap() = default;
    DensityMap(std::size_t h, std::size_t w, std::uint32_t s = 1)
        : height(h), width(w), scale(s), values(h * w, 0.0) {}

    double& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
    double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
    double sum() const;
};

struct BinaryMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint32_t scale = 1;
    std::vector<std::uint8_t> values;

    std::uint8_t at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
    std::size_t count() const;
};

/// 1 marks head (foreground) pixels.
struct SegMask : BinaryMap {};

/// 1 marks background; the supervision target of the inverse attention map.
struct InverseAttentionTarget : BinaryMap {};

/// Sum of one truncated Gaussian per point. Each window spans ceil(3 sigma)
/// around the nearest pixel, is clipped to the image and then renormalized,
/// so every point contributes exactly 1.
DensityMap generate_density_map(const std::vector<Point>& points, std::size_t height,
                                std::size_t width, const DensityConfig& config);

/// Non-overlapping factor x factor block sums.
DensityMap downsample_density(const DensityMap& density, std::size_t factor = 4);

/// values > threshold
SegMask generate_seg_mask(const DensityMap& density, double threshold);

InverseAttentionTarget invert(const SegMask& mask);

/// A block is foreground if any of its pixels is.
SegMask downsample_mask(const SegMask& mask, std::size_t factor = 4);

/// Targets on the network output grid for one training sample.
struct GroundTruth {
    DensityMap density;
    SegMask mask;
    InverseAttentionTarget inverse;
    double count = 0.0;
};

GroundTruth make_ground_truth(const std::vector<Point>& points, std::size_t height,
                              std::size_t width, const DensityConfig& config,
                              std::size_t output_stride);

// Files: "IADM", u32 version, u32 H, u32 W, u32 scale, H*W little-endian f32.
inline constexpr std::uint32_t kDensityFormatVersion = 1;

void save_density(const std::filesystem::path& path, const DensityMap& density);
DensityMap load_density(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const BinaryMap& mask);
void export_density_csv(const std::filesystem::path& path, const DensityMap& density);

/// 8-bit grayscale rendering, max value mapped to 255; an all-nonpositive
/// map renders black.
Image render_heatmap(const DensityMap& density);

}  // namespace iadccn::data
