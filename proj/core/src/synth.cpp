#include "iadccn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "iadccn/error.hpp"

namespace iadccn::data {

void SynthConfig::validate() const {
    if (height == 0 || width == 0) {
        throw ConfigError("synthetic scene extents must be positive");
    }
    if (channels != 1 && channels != 3) {
        throw ConfigError("synthetic scenes have 1 or 3 channels");
    }
    if (count_min > count_max) {
        throw ConfigError("count range is reversed");
    }
    if (!(radius_min > 0.0) || radius_max < radius_min) {
        throw ConfigError("head radius range is invalid");
    }
    if (!(clutter_level >= 0.0)) {
        throw ConfigError("clutter level must be non-negative");
    }
}

namespace {

struct Color {
    float v[3];
};

/// Alpha-blends `color` into the image with the given coverage in [0, 1].
void blend(Image& img, std::size_t r, std::size_t c, const Color& color, double coverage) {
    if (coverage <= 0.0) {
        return;
    }
    const auto a = static_cast<float>(std::min(coverage, 1.0));
    for (std::size_t ch = 0; ch < img.channels; ++ch) {
        float& px = img.at(r, c, ch);
        px = px + a * (color.v[ch] - px);
    }
}

Color dark_color(Rng& rng) {
    const double base = rng.uniform(0.08, 0.22);
    Color col{};
    for (float& v : col.v) {
        v = static_cast<float>(std::clamp(base + rng.uniform(-0.03, 0.03), 0.0, 1.0));
    }
    return col;
}

void draw_disc(Image& img, double cx, double cy, double radius, const Color& color) {
    const auto r0 = static_cast<std::ptrdiff_t>(std::floor(cy - radius - 1));
    const auto r1 = static_cast<std::ptrdiff_t>(std::ceil(cy + radius + 1));
    const auto c0 = static_cast<std::ptrdiff_t>(std::floor(cx - radius - 1));
    const auto c1 = static_cast<std::ptrdiff_t>(std::ceil(cx + radius + 1));
    for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(0, r0);
         r <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.height) - 1, r1); ++r) {
        for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(0, c0);
             c <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.width) - 1, c1); ++c) {
            const double d = std::hypot(static_cast<double>(c) - cx, static_cast<double>(r) - cy);
            blend(img, static_cast<std::size_t>(r), static_cast<std::size_t>(c), color,
                  radius + 0.5 - d);
        }
    }
}

void draw_bar(Image& img, double cx, double cy, double half_w, double half_h, const Color& color) {
    const auto r0 = static_cast<std::ptrdiff_t>(std::floor(cy - half_h - 1));
    const auto r1 = static_cast<std::ptrdiff_t>(std::ceil(cy + half_h + 1));
    const auto c0 = static_cast<std::ptrdiff_t>(std::floor(cx - half_w - 1));
    const auto c1 = static_cast<std::ptrdiff_t>(std::ceil(cx + half_w + 1));
    for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(0, r0);
         r <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.height) - 1, r1); ++r) {
        for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(0, c0);
             c <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(img.width) - 1, c1); ++c) {
            const double dx = half_w + 0.5 - std::abs(static_cast<double>(c) - cx);
            const double dy = half_h + 0.5 - std::abs(static_cast<double>(r) - cy);
            blend(img, static_cast<std::size_t>(r), static_cast<std::size_t>(c), color,
                  std::min(std::clamp(dx, 0.0, 1.0), std::clamp(dy, 0.0, 1.0)));
        }
    }
}

double coordinate(Rng& rng, std::size_t extent, double margin) {
    const double hi = static_cast<double>(extent) - 1.0 - margin;
    if (hi <= margin) {
        return rng.uniform(0.0, static_cast<double>(extent) - 1.0);
    }
    return rng.uniform(margin, hi);
}

}  // namespace

AnnotatedImage synth_scene(Rng& rng, const SynthConfig& config, std::string id) {
    config.validate();
    AnnotatedImage scene;
    scene.id = std::move(id);
    Image& img = scene.image;
    img = Image(config.height, config.width, config.channels);

    // Background: bright base tint, two low-frequency waves, pixel noise.
    float base[3];
    for (float& b : base) {
        b = static_cast<float>(rng.uniform(0.55, 0.8));
    }
    double freq[2][2], phase[2];
    for (int k = 0; k < 2; ++k) {
        freq[k][0] = rng.uniform(0.05, 0.3);
        freq[k][1] = rng.uniform(0.05, 0.3);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            double wave = 0.0;
            for (int k = 0; k < 2; ++k) {
                wave += 0.06 * std::sin(freq[k][0] * static_cast<double>(c) +
                                        freq[k][1] * static_cast<double>(r) + phase[k]);
            }
            const double noise = rng.uniform(-0.03, 0.03);
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                img.at(r, c, ch) =
                    static_cast<float>(std::clamp(base[ch] + wave + noise, 0.0, 1.0));
            }
        }
    }

    // Distractors first so heads are drawn on top of them.
    const double expected = config.clutter_level * static_cast<double>(std::max<std::size_t>(config.count_max, 1));
    const auto distractors =
        static_cast<std::size_t>(std::llround(expected * rng.uniform(0.5, 1.5)));
    for (std::size_t i = 0; i < distractors; ++i) {
        const double radius = rng.uniform(config.radius_min, config.radius_max);
        const double length = radius * rng.uniform(2.5, 3.5);
        const double thickness = radius * rng.uniform(0.6, 0.9);
        const bool horizontal = rng.bernoulli(0.5);
        const double cx = coordinate(rng, img.width, 0.0);
        const double cy = coordinate(rng, img.height, 0.0);
        draw_bar(img, cx, cy, horizontal ? length : thickness, horizontal ? thickness : length,
                 dark_color(rng));
    }

    const auto heads = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(config.count_min), static_cast<std::int64_t>(config.count_max)));
    scene.points.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        const double radius = rng.uniform(config.radius_min, config.radius_max);
        const double cx = coordinate(rng, img.width, radius);
        const double cy = coordinate(rng, img.height, radius);
        draw_disc(img, cx, cy, radius, dark_color(rng));
        scene.points.push_back({cx, cy});
    }
    return scene;
}

}  // namespace iadccn::data
