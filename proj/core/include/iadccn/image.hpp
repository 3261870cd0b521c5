#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "iadccn/tensor.hpp"

namespace iadccn::data {

/// Head annotation in pixel units; pixel (col, row) has its center at (col, row).
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// Interleaved H x W x C pixels in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

    float& at(std::size_t row, std::size_t col, std::size_t ch) {
        return pixels[(row * width + col) * channels + ch];
    }
    float at(std::size_t row, std::size_t col, std::size_t ch) const {
        return pixels[(row * width + col) * channels + ch];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

struct AnnotatedImage {
    std::string id;
    Image image;
    std::vector<Point> points;
};

/// Throws DataError naming the first point outside [0, W) x [0, H).
void validate_points(const std::vector<Point>& points, std::size_t height, std::size_t width,
                     const std::string& context = {});

/// [1, C, H, W] tensor in the current default dtype.
Tensor image_to_tensor(const Image& image);

/// Stacks same-sized images into [N, C, H, W].
Tensor images_to_tensor(const std::vector<const Image*>& images);

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), 8-bit.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

}  // namespace iadccn::data
