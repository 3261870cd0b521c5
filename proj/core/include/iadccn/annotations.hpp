#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iadccn/image.hpp"

namespace iadccn::data {

/// Reads a JSON array of {"id", "image", "points": [[x, y], ...]} records.
/// Image paths are relative to the annotation file. Syntax errors raise
/// ParseError with the byte offset and line; out-of-bounds points raise
/// DataError naming the record and point index.
std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path);

/// Writes images (PGM/PPM by channel count) under `image_dir`, relative to
/// the annotation file, and the JSON index itself.
/// Returns every file written, annotation file last.
std::vector<std::filesystem::path> save_dataset(const std::filesystem::path& annotation_path,
                                                const std::vector<AnnotatedImage>& images,
                                                const std::string& image_dir = "images");

}  // namespace iadccn::data
