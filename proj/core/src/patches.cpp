#include "iadccn/patches.hpp"

#include <algorithm>

#include "iadccn/error.hpp"

namespace iadccn::data {

std::vector<Patch> sample_patches(const AnnotatedImage& source, std::size_t count,
                                  std::size_t size, Rng& rng) {
    if (size == 0) {
        throw ConfigError("patch size must be positive");
    }
    const Image& img = source.image;
    const std::size_t h = std::max(img.height, size);
    const std::size_t w = std::max(img.width, size);
    const std::size_t c = img.channels;

    std::vector<Patch> patches;
    patches.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        Patch patch;
        patch.left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w - size)));
        patch.top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h - size)));
        patch.source_id = source.id;
        patch.image = Image(size, size, c);
        // Rows/cols beyond the source image stay zero (padding).
        for (std::size_t r = 0; r < size; ++r) {
            const std::size_t sr = patch.top + r;
            if (sr >= img.height) {
                break;
            }
            for (std::size_t col = 0; col < size; ++col) {
                const std::size_t sc = patch.left + col;
                if (sc >= img.width) {
                    break;
                }
                for (std::size_t ch = 0; ch < c; ++ch) {
                    patch.image.at(r, col, ch) = img.at(sr, sc, ch);
                }
            }
        }
        const auto left = static_cast<double>(patch.left);
        const auto top = static_cast<double>(patch.top);
        const auto extent = static_cast<double>(size);
        for (const Point& p : source.points) {
            if (p.x >= left && p.x < left + extent && p.y >= top && p.y < top + extent) {
                patch.points.push_back({p.x - left, p.y - top});
            }
        }
        patches.push_back(std::move(patch));
    }
    return patches;
}

void flip_horizontal(Image& image, std::vector<Point>& points) {
    const std::size_t c = image.channels;
    for (std::size_t r = 0; r < image.height; ++r) {
        for (std::size_t left = 0, right = image.width - 1; left < right; ++left, --right) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                std::swap(image.at(r, left, ch), image.at(r, right, ch));
            }
        }
    }
    const auto last = static_cast<double>(image.width) - 1.0;
    for (Point& p : points) {
        // Points in the last half-pixel would land at negative x.
        p.x = std::max(0.0, last - p.x);
    }
}

Patch augment(Patch patch, Rng& rng, double noise_amp) {
    if (rng.bernoulli(0.5)) {
        flip_horizontal(patch.image, patch.points);
    }
    if (noise_amp > 0.0) {
        for (float& v : patch.image.pixels) {
            const double noisy = static_cast<double>(v) + rng.uniform(-noise_amp, noise_amp);
            v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
        }
    }
    return patch;
}

}  // namespace iadccn::data
