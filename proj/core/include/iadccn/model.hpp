#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iadccn/image.hpp"
#include "iadccn/rng.hpp"
#include "iadccn/tensor.hpp"

namespace iadccn::model {

/// Architecture of the counting network: five VGG-style conv blocks, the
/// dimensionality-reduction-and-upsampling unit (DRU), an optional inverse
/// attention block (IAB) and the density module.
struct ModelConfig {
    std::size_t in_channels = 3;
    std::array<std::size_t, 5> block_channels{8, 16, 32, 64, 64};
    std::array<std::size_t, 5> block_depths{1, 1, 2, 2, 2};
    /// Width of the DRU output and of the density module convs.
    std::size_t dru_channels = 64;
    bool iab_enabled = true;
    std::size_t iab_hidden = 32;
    /// Auxiliary segmentation head on the DRU output that does not feed the
    /// counting path ("Base network + S").
    bool seg_head_enabled = false;
    std::size_t upsample_factor = 4;

    void validate() const;

    /// Backbone stride divided by the DRU upsampling factor.
    std::size_t output_stride() const { return 16 / upsample_factor; }

    static ModelConfig vgg16();
    static ModelConfig desk();
    /// Small enough for full finite-difference checks.
    static ModelConfig tiny();

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamSpec {
    std::string name;
    Shape shape;
};

/// Names and shapes implied by a config, in forward order.
std::vector<ParamSpec> parameter_inventory(const ModelConfig& config);

/// Learnable tensors addressed by name, kept in insertion order.
class ModelParams {
public:
    void insert(std::string name, Tensor tensor);
    bool contains(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

    void zero_grad();
    /// Deep copy.
    ModelParams clone() const;

    /// Throws InventoryError listing missing, unexpected and mis-shaped tensors.
    void check_inventory(const ModelConfig& config) const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Density-module, IAB and segmentation-head weights ~ N(0, 0.01^2); backbone
/// and DRU weights ~ He-scaled normal; all biases 0.
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// [N,Cin,H,W] with H, W divisible by 16 -> [N, block_channels[4], H/16, W/16].
Tensor backbone_forward(const ModelParams& params, const ModelConfig& config, const Tensor& x);

/// 1x1 conv to dru_channels, relu, bilinear upsampling.
Tensor dru_forward(const ModelParams& params, const ModelConfig& config, const Tensor& features);

struct IabOutput {
    Tensor attended;           ///< F - F * A_inv
    Tensor inverse_attention;  ///< A_inv in (0, 1), [N,1,h,w]
};

/// `forced_inverse_attention` replaces sigmoid(CB_A(F)) when set; used to
/// probe the suppression arithmetic.
IabOutput iab_forward(const ModelParams& params, const Tensor& features,
                      const std::optional<Tensor>& forced_inverse_attention = std::nullopt);

Tensor density_module_forward(const ModelParams& params, const Tensor& features);

/// CB_A-shaped head used by the "+S" ablation; returns logits.
Tensor seg_head_forward(const ModelParams& params, const Tensor& features);

struct ForwardOutput {
    Tensor density;                           ///< [N,1,H/s,W/s]
    std::optional<Tensor> inverse_attention;  ///< when iab_enabled
    std::optional<Tensor> seg_logits;         ///< when seg_head_enabled
};

struct ForwardOptions {
    std::optional<Tensor> forced_inverse_attention;
};

/// x must already be padded to multiples of 16.
ForwardOutput forward(const ModelParams& params, const ModelConfig& config, const Tensor& x,
                      const ForwardOptions& options = {});

struct Model {
    ModelConfig config;
    ModelParams params;
};

/// Whole-image inference: zero-pads bottom/right to a multiple of 16, runs
/// the network without recording a graph, and crops the density to
/// ceil(H/s) x ceil(W/s).
Tensor predict_density(const Model& model, const data::Image& image);

// Weight files: "IAWT", u32 version, u32 count; per tensor u16 name length,
// UTF-8 name, u8 ndim, u32 dims, little-endian f32 data.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_params(const ModelParams& params, const std::filesystem::path& path);
/// Tensors come back in the current default dtype.
ModelParams load_params(const std::filesystem::path& path);
/// Loads and checks the inventory against `config`.
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& config);

/// Recovers the architecture from tensor names and shapes. upsample_factor
/// is not recorded in weight files and is taken as given.
ModelConfig infer_config(const ModelParams& params, std::size_t upsample_factor = 4);

}  // namespace iadccn::model
