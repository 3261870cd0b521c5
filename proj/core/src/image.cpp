#include "iadccn/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "iadccn/error.hpp"

namespace iadccn::data {

void validate_points(const std::vector<Point>& points, std::size_t height, std::size_t width,
                     const std::string& context) {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        const bool inside = std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 &&
                            p.y >= 0.0 && p.x < static_cast<double>(width) &&
                            p.y < static_cast<double>(height);
        if (!inside) {
            std::ostringstream os;
            os << (context.empty() ? "" : context + ": ") << "point " << i << " (" << p.x << ", "
               << p.y << ") lies outside the " << width << "x" << height << " image";
            throw DataError(os.str());
        }
    }
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor({&image}); }

Tensor images_to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) {
        throw DimensionError("images_to_tensor: empty batch");
    }
    const Image& first = *images.front();
    const std::size_t h = first.height, w = first.width, c = first.channels;
    Storage s(default_dtype(), images.size() * c * h * w);
    dispatch(s.dtype(), [&]<typename T>(std::type_identity<T>) {
        auto out = s.view<T>();
        for (std::size_t n = 0; n < images.size(); ++n) {
            const Image& img = *images[n];
            if (img.height != h || img.width != w || img.channels != c) {
                throw DimensionError("images_to_tensor: batch members differ in size");
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* plane = out.data() + (n * c + ch) * h * w;
                for (std::size_t i = 0; i < h * w; ++i) {
                    plane[i] = static_cast<T>(img.pixels[i * c + ch]);
                }
            }
        }
    });
    return Tensor::from_storage({images.size(), c, h, w}, std::move(s));
}

namespace {

class PnmHeader {
public:
    PnmHeader(const std::string& bytes, std::string source)
        : bytes_(bytes), source_(std::move(source)) {}

    std::size_t next_number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > 1'000'000) {
                fail(std::string(what) + " is too large", start);
            }
            ++pos_;
        }
        if (pos_ == start) {
            fail(std::string("expected ") + what, start);
        }
        return value;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

    [[noreturn]] void fail(const std::string& message, std::size_t at) const {
        throw ParseError(source_ + ": " + message + " at byte " + std::to_string(at), at);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open image " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string bytes = buffer.str();
    PnmHeader header(bytes, path.string());
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        header.fail("expected P5 or P6 magic", 0);
    }
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    header.advance(2);
    const std::size_t width = header.next_number("width");
    const std::size_t height = header.next_number("height");
    const std::size_t maxval = header.next_number("maxval");
    if (width == 0 || height == 0) {
        header.fail("image extents must be positive", header.pos());
    }
    if (maxval == 0 || maxval > 255) {
        header.fail("only 8-bit images are supported", header.pos());
    }
    if (header.pos() >= bytes.size() ||
        !std::isspace(static_cast<unsigned char>(bytes[header.pos()]))) {
        header.fail("missing whitespace after header", header.pos());
    }
    header.advance(1);
    const std::size_t n = width * height * channels;
    if (bytes.size() - header.pos() < n) {
        header.fail("truncated pixel data", bytes.size());
    }
    Image image(height, width, channels);
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + header.pos());
    for (std::size_t i = 0; i < n; ++i) {
        image.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
    }
    return image;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw DataError("PNM output needs 1 or 3 channels, got " + std::to_string(image.channels));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write image " + path.string());
    }
    out << (image.channels == 1 ? "P5" : "P6") << '\n'
        << image.width << ' ' << image.height << "\n255\n";
    std::string raw(image.pixels.size(), '\0');
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
        raw[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

}  // namespace iadccn::data
