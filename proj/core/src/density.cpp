#include "iadccn/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "binary_io.hpp"
#include "iadccn/error.hpp"

namespace iadccn::data {

std::size_t DensityConfig::truncation_radius() const {
    return static_cast<std::size_t>(std::ceil(3.0 * sigma));
}

void DensityConfig::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ConfigError("density sigma must be positive");
    }
    if (!(mask_threshold >= 0.0)) {
        throw ConfigError("mask threshold must be non-negative");
    }
}

double DensityMap::sum() const {
    double total = 0.0;
    for (const double v : values) {
        total += v;
    }
    return total;
}

std::size_t BinaryMap::count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

DensityMap generate_density_map(const std::vector<Point>& points, std::size_t height,
                                std::size_t width, const DensityConfig& config) {
    config.validate();
    if (height == 0 || width == 0) {
        throw ConfigError("density map extents must be positive");
    }
    validate_points(points, height, width);
    DensityMap density(height, width, 1);
    const auto radius = static_cast<std::ptrdiff_t>(config.truncation_radius());
    const double inv_two_var = 1.0 / (2.0 * config.sigma * config.sigma);
    constexpr std::int64_t kUnit = std::int64_t{1} << 32;  // 1 / kDensityQuantum

    std::vector<double> weights;
    std::vector<std::int64_t> quanta;
    for (const Point& p : points) {
        const auto cx = std::min(static_cast<std::ptrdiff_t>(width) - 1,
                                 static_cast<std::ptrdiff_t>(std::floor(p.x + 0.5)));
        const auto cy = std::min(static_cast<std::ptrdiff_t>(height) - 1,
                                 static_cast<std::ptrdiff_t>(std::floor(p.y + 0.5)));
        const std::ptrdiff_t r0 = std::max<std::ptrdiff_t>(0, cy - radius);
        const std::ptrdiff_t r1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1, cy + radius);
        const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(0, cx - radius);
        const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(width) - 1, cx + radius);
        const auto cols = static_cast<std::size_t>(c1 - c0 + 1);

        weights.clear();
        double total = 0.0;
        for (std::ptrdiff_t r = r0; r <= r1; ++r) {
            for (std::ptrdiff_t c = c0; c <= c1; ++c) {
                const double dx = static_cast<double>(c) - p.x;
                const double dy = static_cast<double>(r) - p.y;
                const double w = std::exp(-(dx * dx + dy * dy) * inv_two_var);
                weights.push_back(w);
                total += w;
            }
        }
        // Renormalize on the fixed-point grid; the rounding residue goes to
        // the heaviest pixel so the window sums to exactly one.
        quanta.resize(weights.size());
        std::int64_t assigned = 0;
        std::size_t heaviest = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            quanta[i] = std::llround(weights[i] / total * static_cast<double>(kUnit));
            assigned += quanta[i];
            if (quanta[i] > quanta[heaviest]) {
                heaviest = i;
            }
        }
        quanta[heaviest] += kUnit - assigned;
        for (std::size_t i = 0; i < quanta.size(); ++i) {
            const auto r = static_cast<std::size_t>(r0) + i / cols;
            const auto c = static_cast<std::size_t>(c0) + i % cols;
            density.at(r, c) += static_cast<double>(quanta[i]) * kDensityQuantum;
        }
    }
    return density;
}

DensityMap downsample_density(const DensityMap& density, std::size_t factor) {
    if (factor == 0 || density.height % factor != 0 || density.width % factor != 0) {
        throw ConfigError("downsample_density: " + std::to_string(density.height) + "x" +
                          std::to_string(density.width) + " is not divisible by " +
                          std::to_string(factor));
    }
    DensityMap out(density.height / factor, density.width / factor,
                   density.scale * static_cast<std::uint32_t>(factor));
    for (std::size_t r = 0; r < density.height; ++r) {
        for (std::size_t c = 0; c < density.width; ++c) {
            out.at(r / factor, c / factor) += density.at(r, c);
        }
    }
    return out;
}

SegMask generate_seg_mask(const DensityMap& density, double threshold) {
    SegMask mask;
    mask.height = density.height;
    mask.width = density.width;
    mask.scale = density.scale;
    mask.values.resize(density.values.size());
    for (std::size_t i = 0; i < density.values.size(); ++i) {
        mask.values[i] = density.values[i] > threshold ? 1 : 0;
    }
    return mask;
}

InverseAttentionTarget invert(const SegMask& mask) {
    InverseAttentionTarget target;
    target.height = mask.height;
    target.width = mask.width;
    target.scale = mask.scale;
    target.values.resize(mask.values.size());
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        target.values[i] = static_cast<std::uint8_t>(1 - mask.values[i]);
    }
    return target;
}

SegMask downsample_mask(const SegMask& mask, std::size_t factor) {
    if (factor == 0 || mask.height % factor != 0 || mask.width % factor != 0) {
        throw ConfigError("downsample_mask: extents not divisible by " + std::to_string(factor));
    }
    SegMask out;
    out.height = mask.height / factor;
    out.width = mask.width / factor;
    out.scale = mask.scale * static_cast<std::uint32_t>(factor);
    out.values.assign(out.height * out.width, 0);
    for (std::size_t r = 0; r < mask.height; ++r) {
        for (std::size_t c = 0; c < mask.width; ++c) {
            auto& cell = out.values[(r / factor) * out.width + c / factor];
            cell = std::max(cell, mask.at(r, c));
        }
    }
    return out;
}

GroundTruth make_ground_truth(const std::vector<Point>& points, std::size_t height,
                              std::size_t width, const DensityConfig& config,
                              std::size_t output_stride) {
    const DensityMap full = generate_density_map(points, height, width, config);
    GroundTruth gt;
    gt.density = downsample_density(full, output_stride);
    gt.mask = downsample_mask(generate_seg_mask(full, config.mask_threshold), output_stride);
    gt.inverse = invert(gt.mask);
    gt.count = static_cast<double>(points.size());
    return gt;
}

namespace {

void write_map(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::uint32_t scale, auto&& value_at) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write("IADM", 4);
    detail::write_le<std::uint32_t>(out, kDensityFormatVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(h));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    detail::write_le<std::uint32_t>(out, scale);
    for (std::size_t i = 0; i < h * w; ++i) {
        detail::write_f32(out, static_cast<float>(value_at(i)));
    }
}

}  // namespace

void save_density(const std::filesystem::path& path, const DensityMap& density) {
    write_map(path, density.height, density.width, density.scale,
              [&](std::size_t i) { return density.values[i]; });
}

void save_mask(const std::filesystem::path& path, const BinaryMap& mask) {
    write_map(path, mask.height, mask.width, mask.scale,
              [&](std::size_t i) { return static_cast<double>(mask.values[i]); });
}

DensityMap load_density(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    detail::LeReader reader(in, path.string());
    char magic[4];
    reader.read_bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "IADM") {
        reader.fail("bad magic, expected IADM", 0);
    }
    const auto version = reader.read<std::uint32_t>("version");
    if (version != kDensityFormatVersion) {
        reader.fail("unsupported version " + std::to_string(version), 4);
    }
    const auto h = reader.read<std::uint32_t>("height");
    const auto w = reader.read<std::uint32_t>("width");
    const auto scale = reader.read<std::uint32_t>("scale");
    if (h == 0 || w == 0 || scale == 0) {
        reader.fail("extents and scale must be positive", 8);
    }
    DensityMap density(h, w, scale);
    for (auto& v : density.values) {
        v = reader.read_f32("values");
    }
    reader.expect_end();
    return density;
}

void export_density_csv(const std::filesystem::path& path, const DensityMap& density) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    char buf[32];
    for (std::size_t r = 0; r < density.height; ++r) {
        for (std::size_t c = 0; c < density.width; ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", density.at(r, c));
            out << (c ? "," : "") << buf;
        }
        out << '\n';
    }
}

Image render_heatmap(const DensityMap& density) {
    Image image(density.height, density.width, 1);
    double peak = 0.0;
    for (const double v : density.values) {
        peak = std::max(peak, v);
    }
    if (peak <= 0.0) {
        return image;
    }
    for (std::size_t i = 0; i < density.values.size(); ++i) {
        const double v = std::max(0.0, density.values[i]) / peak;
        // Quantize here so write_pnm reproduces exactly these levels.
        image.pixels[i] = static_cast<float>(std::round(v * 255.0) / 255.0);
    }
    return image;
}

}  // namespace iadccn::data
