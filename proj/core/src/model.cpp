#include "iadccn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "iadccn/error.hpp"
#include "iadccn/ops.hpp"

namespace iadccn::model {

void ModelConfig::validate() const {
    if (in_channels != 1 && in_channels != 3) {
        throw ConfigError("in_channels must be 1 or 3");
    }
    for (std::size_t b = 0; b < 5; ++b) {
        if (block_channels[b] == 0 || block_depths[b] == 0) {
            throw ConfigError("block " + std::to_string(b + 1) +
                              " needs at least one conv with at least one channel");
        }
    }
    if (dru_channels == 0 || iab_hidden == 0) {
        throw ConfigError("dru_channels and iab_hidden must be positive");
    }
    if (upsample_factor != 1 && upsample_factor != 2 && upsample_factor != 4) {
        throw ConfigError("upsample_factor must be 1, 2 or 4");
    }
}

ModelConfig ModelConfig::vgg16() {
    ModelConfig c;
    c.block_channels = {64, 128, 256, 512, 512};
    c.block_depths = {2, 2, 3, 3, 3};
    return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.block_channels = {4, 8, 8, 16, 16};
    c.block_depths = {1, 1, 1, 1, 1};
    c.dru_channels = 8;
    c.iab_hidden = 4;
    return c;
}

namespace {

std::string backbone_name(std::size_t block, std::size_t layer) {
    return "backbone.conv" + std::to_string(block + 1) + "_" + std::to_string(layer + 1);
}

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t cin,
              std::size_t cout, std::size_t k) {
    out.push_back({prefix + ".weight", {cout, cin, k, k}});
    out.push_back({prefix + ".bias", {cout}});
}

void add_cba_stack(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t cin,
                   std::size_t hidden) {
    add_conv(out, prefix + ".conv1", cin, hidden, 1);
    add_conv(out, prefix + ".conv2", hidden, hidden, 3);
    add_conv(out, prefix + ".conv3", hidden, 1, 3);
}

bool is_bias(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

Tensor conv(const ModelParams& params, const std::string& prefix, const Tensor& x,
            std::size_t pad) {
    return ops::conv2d(x, params.at(prefix + ".weight"), params.at(prefix + ".bias"), 1, pad);
}

/// conv 1x1 - relu - conv 3x3 - relu - conv 3x3, no final activation.
Tensor cba_stack(const ModelParams& params, const std::string& prefix, const Tensor& x) {
    Tensor h = ops::relu(conv(params, prefix + ".conv1", x, 0));
    h = ops::relu(conv(params, prefix + ".conv2", h, 1));
    return conv(params, prefix + ".conv3", h, 1);
}

}  // namespace

std::vector<ParamSpec> parameter_inventory(const ModelConfig& config) {
    config.validate();
    std::vector<ParamSpec> specs;
    std::size_t cin = config.in_channels;
    for (std::size_t b = 0; b < 5; ++b) {
        for (std::size_t d = 0; d < config.block_depths[b]; ++d) {
            add_conv(specs, backbone_name(b, d), cin, config.block_channels[b], 3);
            cin = config.block_channels[b];
        }
    }
    add_conv(specs, "dru.conv", cin, config.dru_channels, 1);
    if (config.iab_enabled) {
        add_cba_stack(specs, "iab", config.dru_channels, config.iab_hidden);
    }
    if (config.seg_head_enabled) {
        add_cba_stack(specs, "seg", config.dru_channels, config.iab_hidden);
    }
    add_conv(specs, "dm.conv1", config.dru_channels, config.dru_channels, 3);
    add_conv(specs, "dm.conv2", config.dru_channels, config.dru_channels, 3);
    add_conv(specs, "dm.conv3", config.dru_channels, 1, 3);
    return specs;
}

// ---------------------------------------------------------------------------
// ModelParams

void ModelParams::insert(std::string name, Tensor tensor) {
    if (index_.contains(name)) {
        throw InventoryError("duplicate parameter " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
}

bool ModelParams::contains(const std::string& name) const { return index_.contains(name); }

const Tensor& ModelParams::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw InventoryError("no parameter named " + name);
    }
    return entries_[it->second].second;
}

Tensor& ModelParams::at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
        n += t.numel();
    }
    return n;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : entries_) {
        t.zero_grad();
    }
}

ModelParams ModelParams::clone() const {
    ModelParams copy;
    for (const auto& [name, t] : entries_) {
        Tensor c = t.clone();
        c.set_requires_grad(t.requires_grad());
        copy.insert(name, std::move(c));
    }
    return copy;
}

void ModelParams::check_inventory(const ModelConfig& config) const {
    const auto expected = parameter_inventory(config);
    std::vector<std::string> missing, unexpected, misshaped;
    std::map<std::string, const Shape*> wanted;
    for (const auto& spec : expected) {
        wanted.emplace(spec.name, &spec.shape);
        if (!contains(spec.name)) {
            missing.push_back(spec.name);
        } else if (at(spec.name).shape() != spec.shape) {
            misshaped.push_back(spec.name + " " + shape_string(at(spec.name).shape()) +
                                " (expected " + shape_string(spec.shape) + ")");
        }
    }
    for (const auto& [name, t] : entries_) {
        if (!wanted.contains(name)) {
            unexpected.push_back(name);
        }
    }
    if (missing.empty() && unexpected.empty() && misshaped.empty()) {
        return;
    }
    std::ostringstream os;
    os << "parameter inventory does not match the model config";
    auto list = [&os](const char* label, const std::vector<std::string>& names) {
        if (names.empty()) {
            return;
        }
        os << "; " << label << ":";
        for (const auto& n : names) {
            os << ' ' << n;
        }
    };
    list("missing", missing);
    list("unexpected", unexpected);
    list("wrong shape", misshaped);
    throw InventoryError(os.str());
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    // One stream per tensor name, so configs that share a layer also share
    // its initial weights.
    const std::uint64_t base_seed = rng.next_u64();
    ModelParams params;
    for (const auto& spec : parameter_inventory(config)) {
        Rng local(derive_seed(base_seed, spec.name));
        Storage values(default_dtype(), shape_numel(spec.shape), 0.0);
        if (!is_bias(spec.name)) {
            double stddev = 0.01;
            if (starts_with(spec.name, "backbone.") || starts_with(spec.name, "dru.")) {
                const double fan_in =
                    static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
                stddev = std::sqrt(2.0 / fan_in);
            }
            for (std::size_t i = 0; i < values.size(); ++i) {
                values.set(i, local.normal(0.0, stddev));
            }
        }
        params.insert(spec.name, Tensor::from_storage(spec.shape, std::move(values), true));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Forward

Tensor backbone_forward(const ModelParams& params, const ModelConfig& config, const Tensor& x) {
    if (x.ndim() != 4) {
        throw DimensionError("backbone input must be 4-d, got " + shape_string(x.shape()));
    }
    if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
        throw ConfigError("backbone input extents must be multiples of 16, got " +
                          shape_string(x.shape()));
    }
    Tensor h = x;
    for (std::size_t b = 0; b < 5; ++b) {
        for (std::size_t d = 0; d < config.block_depths[b]; ++d) {
            h = ops::relu(conv(params, backbone_name(b, d), h, 1));
        }
        if (b < 4) {
            h = ops::maxpool2d(h);
        }
    }
    return h;
}

Tensor dru_forward(const ModelParams& params, const ModelConfig& config, const Tensor& features) {
    Tensor h = ops::relu(conv(params, "dru.conv", features, 0));
    if (config.upsample_factor > 1) {
        h = ops::upsample_bilinear(h, config.upsample_factor);
    }
    return h;
}

IabOutput iab_forward(const ModelParams& params, const Tensor& features,
                      const std::optional<Tensor>& forced_inverse_attention) {
    const std::size_t expected = params.at("iab.conv1.weight").dim(1);
    if (features.ndim() != 4 || features.dim(1) != expected) {
        throw DimensionError("iab: channel axis (1) of " + shape_string(features.shape()) +
                             " does not match the attention block input of " +
                             std::to_string(expected));
    }
    Tensor a_inv;
    if (forced_inverse_attention) {
        a_inv = *forced_inverse_attention;
        const Shape want{features.dim(0), 1, features.dim(2), features.dim(3)};
        if (a_inv.shape() != want) {
            throw DimensionError("iab: forced attention map must be " + shape_string(want));
        }
    } else {
        a_inv = ops::sigmoid(cba_stack(params, "iab", features));
    }
    Tensor attended = ops::sub(features, ops::mul(features, a_inv));
    return {std::move(attended), std::move(a_inv)};
}

Tensor density_module_forward(const ModelParams& params, const Tensor& features) {
    Tensor h = ops::relu(conv(params, "dm.conv1", features, 1));
    h = ops::relu(conv(params, "dm.conv2", h, 1));
    return conv(params, "dm.conv3", h, 1);
}

Tensor seg_head_forward(const ModelParams& params, const Tensor& features) {
    return cba_stack(params, "seg", features);
}

ForwardOutput forward(const ModelParams& params, const ModelConfig& config, const Tensor& x,
                      const ForwardOptions& options) {
    if (x.ndim() != 4 || x.dim(1) != config.in_channels) {
        throw DimensionError("model input must be [N," + std::to_string(config.in_channels) +
                             ",H,W], got " + shape_string(x.shape()));
    }
    const Tensor f5 = backbone_forward(params, config, x);
    Tensor features = dru_forward(params, config, f5);
    ForwardOutput out;
    if (config.seg_head_enabled) {
        out.seg_logits = seg_head_forward(params, features);
    }
    if (config.iab_enabled) {
        IabOutput iab = iab_forward(params, features, options.forced_inverse_attention);
        features = std::move(iab.attended);
        out.inverse_attention = std::move(iab.inverse_attention);
    }
    out.density = density_module_forward(params, features);
    return out;
}

Tensor predict_density(const Model& model, const data::Image& image) {
    NoGradGuard no_grad;
    const Tensor x = data::image_to_tensor(image);
    const std::size_t pad_h = (16 - image.height % 16) % 16;
    const std::size_t pad_w = (16 - image.width % 16) % 16;
    const Tensor padded = ops::pad_bottom_right(x, pad_h, pad_w);
    const Tensor density = forward(model.params, model.config, padded).density;
    const std::size_t stride = model.config.output_stride();
    return ops::crop_top_left(density, (image.height + stride - 1) / stride,
                              (image.width + stride - 1) / stride);
}

// ---------------------------------------------------------------------------
// Persistence

void save_params(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write("IAWT", 4);
    detail::write_le<std::uint32_t>(out, kWeightFormatVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.entries()) {
        if (name.size() > UINT16_MAX || t.ndim() > UINT8_MAX) {
            throw DataError("parameter " + name + " cannot be encoded");
        }
        detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
        for (const auto extent : t.shape()) {
            detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
        }
        for (std::size_t i = 0; i < t.numel(); ++i) {
            detail::write_f32(out, static_cast<float>(t.at(i)));
        }
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

ModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    detail::LeReader reader(in, path.string());
    char magic[4];
    reader.read_bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "IAWT") {
        reader.fail("bad magic, expected IAWT", 0);
    }
    const auto version = reader.read<std::uint32_t>("version");
    if (version != kWeightFormatVersion) {
        reader.fail("unsupported weight format version " + std::to_string(version), 4);
    }
    const auto count = reader.read<std::uint32_t>("tensor count");
    ModelParams params;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::size_t entry_offset = reader.offset();
        const auto name_len = reader.read<std::uint16_t>("name length");
        std::string name(name_len, '\0');
        reader.read_bytes(name.data(), name_len, "name");
        const auto ndim = reader.read<std::uint8_t>("rank");
        if (ndim == 0) {
            reader.fail("tensor " + name + " has rank 0", entry_offset);
        }
        Shape shape(ndim);
        for (auto& extent : shape) {
            extent = reader.read<std::uint32_t>("extent");
            if (extent == 0) {
                reader.fail("tensor " + name + " has a zero extent", entry_offset);
            }
        }
        Storage values(default_dtype(), shape_numel(shape));
        for (std::size_t i = 0; i < values.size(); ++i) {
            values.set(i, reader.read_f32("tensor data"));
        }
        if (params.contains(name)) {
            reader.fail("duplicate tensor " + name, entry_offset);
        }
        params.insert(name, Tensor::from_storage(shape, std::move(values), true));
    }
    reader.expect_end();
    return params;
}

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& config) {
    ModelParams params = load_params(path);
    params.check_inventory(config);
    return params;
}

ModelConfig infer_config(const ModelParams& params, std::size_t upsample_factor) {
    ModelConfig config;
    config.upsample_factor = upsample_factor;
    if (!params.contains("backbone.conv1_1.weight")) {
        throw InventoryError("weights have no backbone.conv1_1.weight");
    }
    config.in_channels = params.at("backbone.conv1_1.weight").dim(1);
    for (std::size_t b = 0; b < 5; ++b) {
        std::size_t depth = 0;
        while (params.contains(backbone_name(b, depth) + ".weight")) {
            ++depth;
        }
        if (depth == 0) {
            throw InventoryError("weights have no conv layers for block " + std::to_string(b + 1));
        }
        config.block_depths[b] = depth;
        config.block_channels[b] = params.at(backbone_name(b, depth - 1) + ".weight").dim(0);
    }
    config.dru_channels = params.at("dru.conv.weight").dim(0);
    config.iab_enabled = params.contains("iab.conv1.weight");
    config.seg_head_enabled = params.contains("seg.conv1.weight");
    if (config.iab_enabled) {
        config.iab_hidden = params.at("iab.conv1.weight").dim(0);
    } else if (config.seg_head_enabled) {
        config.iab_hidden = params.at("seg.conv1.weight").dim(0);
    }
    params.check_inventory(config);
    return config;
}

}  // namespace iadccn::model
