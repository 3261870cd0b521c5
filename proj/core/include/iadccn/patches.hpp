#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "iadccn/image.hpp"
#include "iadccn/rng.hpp"

namespace iadccn::data {

struct Patch {
    Image image;
    std::vector<Point> points;  ///< patch coordinates
    std::size_t left = 0;
    std::size_t top = 0;
    std::string source_id;
};

/// Zero-pads images smaller than `size`, then crops `count` windows whose
/// top-left corners are uniform over the valid positions. A point belongs to
/// a window when left <= x < left + size (same for y).
std::vector<Patch> sample_patches(const AnnotatedImage& image, std::size_t count,
                                  std::size_t size, Rng& rng);

/// x -> W - 1 - x on pixels and points.
void flip_horizontal(Image& image, std::vector<Point>& points);

/// Random horizontal flip (p = 0.5) then uniform noise in
/// [-noise_amp, noise_amp], clamped to [0, 1].
Patch augment(Patch patch, Rng& rng, double noise_amp = 0.01);

}  // namespace iadccn::data
