#include "iadccn/annotations.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iadccn/error.hpp"

namespace iadccn::data {

namespace {

using nlohmann::json;

std::size_t line_of(const std::string& text, std::size_t byte) {
    const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size()));
    return 1 + static_cast<std::size_t>(std::count(text.begin(), end, '\n'));
}

[[noreturn]] void schema_error(const std::filesystem::path& path, std::size_t record,
                               const std::string& message) {
    throw DataError(path.string() + ": record " + std::to_string(record) + ": " + message);
}

}  // namespace

std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open annotations " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // nlohmann reports the 1-based position of the offending byte.
        const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
        const std::size_t line = line_of(text, offset);
        throw ParseError(path.string() + ": malformed JSON at byte " + std::to_string(offset) +
                             " (line " + std::to_string(line) + ")",
                         offset, line);
    }
    if (!doc.is_array()) {
        throw ParseError(path.string() + ": top level must be an array of image records", 0, 1);
    }

    const auto base = path.parent_path();
    std::vector<AnnotatedImage> images;
    images.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        if (!rec.is_object()) {
            schema_error(path, i, "expected an object");
        }
        if (!rec.contains("id") || !rec["id"].is_string()) {
            schema_error(path, i, "missing string field \"id\"");
        }
        if (!rec.contains("image") || !rec["image"].is_string()) {
            schema_error(path, i, "missing string field \"image\"");
        }
        if (!rec.contains("points") || !rec["points"].is_array()) {
            schema_error(path, i, "missing array field \"points\"");
        }
        AnnotatedImage item;
        item.id = rec["id"].get<std::string>();
        const auto& pts = rec["points"];
        item.points.reserve(pts.size());
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const json& p = pts[k];
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
                schema_error(path, i, "point " + std::to_string(k) + " is not [x, y]");
            }
            item.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        item.image = read_pnm(base / rec["image"].get<std::string>());
        validate_points(item.points, item.image.height, item.image.width,
                        path.string() + ": record " + std::to_string(i) + " (" + item.id + ")");
        images.push_back(std::move(item));
    }
    return images;
}

std::vector<std::filesystem::path> save_dataset(const std::filesystem::path& annotation_path,
                                                const std::vector<AnnotatedImage>& images,
                                                const std::string& image_dir) {
    const auto base = annotation_path.parent_path();
    std::filesystem::create_directories(base / image_dir);
    std::vector<std::filesystem::path> written;
    json doc = json::array();
    for (const auto& item : images) {
        const std::string ext = item.image.channels == 1 ? ".pgm" : ".ppm";
        const std::string rel = image_dir + "/" + item.id + ext;
        write_pnm(base / rel, item.image);
        written.push_back(base / rel);
        json pts = json::array();
        for (const auto& p : item.points) {
            pts.push_back({p.x, p.y});
        }
        doc.push_back({{"id", item.id}, {"image", rel}, {"points", std::move(pts)}});
    }
    std::ofstream out(annotation_path);
    if (!out) {
        throw DataError("cannot write " + annotation_path.string());
    }
    out << doc.dump(1) << '\n';
    written.push_back(annotation_path);
    return written;
}

}  // namespace iadccn::data
