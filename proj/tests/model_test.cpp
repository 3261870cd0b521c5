#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iadccn/error.hpp"
#include "iadccn/model.hpp"
#include "iadccn/ops.hpp"
#include "test_util.hpp"

using namespace iadccn;
using namespace iadccn::model;
using test_util::random_tensor;
namespace fs = std::filesystem;

namespace {

std::string inventory_text(const ModelConfig& cfg) {
    std::ostringstream os;
    for (const auto& spec : parameter_inventory(cfg)) {
        os << spec.name << ' ';
        for (std::size_t i = 0; i < spec.shape.size(); ++i) os << (i ? "x" : "") << spec.shape[i];
        os << '\n';
    }
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("iadccn_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Inventory, MatchesGoldenFiles) {
    EXPECT_EQ(inventory_text(ModelConfig::desk()), read_file(fs::path(IADCCN_GOLDEN_DIR) / "inventory_desk.txt"));
    auto seg = ModelConfig::desk();
    seg.iab_enabled = false;
    seg.seg_head_enabled = true;
    EXPECT_EQ(inventory_text(seg),
              read_file(fs::path(IADCCN_GOLDEN_DIR) / "inventory_desk_seg_noiab.txt"));
}

TEST(Inventory, Vgg16Shapes) {
    const auto inv = parameter_inventory(ModelConfig::vgg16());
    std::size_t convs = 0;
    for (const auto& s : inv) convs += s.name.starts_with("backbone.") && s.name.ends_with(".weight");
    EXPECT_EQ(convs, 13u);
    EXPECT_EQ(inv.front().shape, (Shape{64, 3, 3, 3}));
}

TEST(Config, Validation) {
    auto c = ModelConfig::desk();
    c.upsample_factor = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig::desk();
    c.block_channels[2] = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Init, DeterministicAndSpecified) {
    auto cfg = ModelConfig::desk();
    cfg.seg_head_enabled = true;
    Rng a(41), b(41);
    const auto pa = init_params(cfg, a);
    const auto pb = init_params(cfg, b);
    ASSERT_EQ(pa.size(), pb.size());
    std::vector<double> dm;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto& [name, t] = pa.entries()[i];
        EXPECT_EQ(t.to_vector(), pb.entries()[i].second.to_vector()) << name;
        if (name.ends_with(".bias")) {
            for (double v : t.to_vector()) EXPECT_EQ(v, 0.0);
        }
        if (name.starts_with("dm.") && name.ends_with(".weight")) {
            for (double v : t.to_vector()) dm.push_back(v);
        }
    }
    ASSERT_GE(dm.size(), 10000u);
    double mean = 0, sq = 0;
    for (double v : dm) mean += v;
    mean /= static_cast<double>(dm.size());
    for (double v : dm) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(dm.size() - 1));
    EXPECT_GE(sd, 0.008);
    EXPECT_LE(sd, 0.012);
}

TEST(Forward, ShapesAcrossConfigs) {
    Rng rng(42);
    const auto cfg = ModelConfig::desk();
    const auto p = init_params(cfg, rng);
    const auto x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    const auto f5 = backbone_forward(p, cfg, x);
    EXPECT_EQ(f5.shape(), (Shape{1, 64, 2, 2}));
    const auto f = dru_forward(p, cfg, f5);
    EXPECT_EQ(f.shape(), (Shape{1, 64, 8, 8}));
    const auto out = forward(p, cfg, x);
    EXPECT_EQ(out.density.shape(), (Shape{1, 1, 8, 8}));
    ASSERT_TRUE(out.inverse_attention);
    for (double v : out.inverse_attention->to_vector()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_FALSE(out.seg_logits);
    EXPECT_THROW(forward(p, cfg, random_tensor({1, 3, 24, 32}, rng)), ConfigError);
}

TEST(Forward, Vgg16At224) {
    DTypeScope f32(DType::f32);
    Rng rng(43);
    const auto cfg = ModelConfig::vgg16();
    const auto p = init_params(cfg, rng);
    NoGradGuard ng;
    const auto x = random_tensor({1, 3, 224, 224}, rng, 0, 1);
    EXPECT_EQ(backbone_forward(p, cfg, x).shape(), (Shape{1, 512, 14, 14}));
    EXPECT_EQ(forward(p, cfg, x).density.shape(), (Shape{1, 1, 56, 56}));
}

TEST(Forward, FullyConvolutionalProperty) {
    Rng rng(44);
    const auto cfg = ModelConfig::tiny();
    const auto p = init_params(cfg, rng);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t h = 16 * static_cast<std::size_t>(rng.uniform_int(1, 4));
        const std::size_t w = 16 * static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto out = forward(p, cfg, random_tensor({1, 3, h, w}, rng, 0, 1));
        EXPECT_EQ(out.density.shape(), (Shape{1, 1, h / 4, w / 4}));
    }
}

TEST(Dru, ConstantInConstantOut) {
    Rng rng(45);
    const auto cfg = ModelConfig::tiny();
    const auto p = init_params(cfg, rng);
    const auto f = dru_forward(p, cfg, Tensor::full({1, cfg.block_channels[4], 3, 2}, 0.7));
    EXPECT_EQ(f.shape(), (Shape{1, cfg.dru_channels, 12, 8}));
    const auto v = f.to_vector();
    for (std::size_t c = 0; c < cfg.dru_channels; ++c)
        for (std::size_t i = 0; i < 96; ++i) EXPECT_NEAR(v[c * 96 + i], v[c * 96], 1e-6 * std::abs(v[c * 96]));
}

TEST(Iab, ForcedAttentionAlgebra) {
    Rng rng(46);
    const auto cfg = ModelConfig::tiny();
    const auto p = init_params(cfg, rng);
    const auto f = random_tensor({1, cfg.dru_channels, 4, 4}, rng, -3, 3);
    const auto zero = iab_forward(p, f, Tensor::zeros({1, 1, 4, 4}));
    EXPECT_EQ(zero.attended.to_vector(), f.to_vector());
    const auto one = iab_forward(p, f, Tensor::full({1, 1, 4, 4}, 1.0));
    for (double v : one.attended.to_vector()) EXPECT_EQ(v, 0.0);
    const auto half = iab_forward(p, Tensor::full({1, cfg.dru_channels, 4, 4}, 2.0),
                                  Tensor::full({1, 1, 4, 4}, 0.5));
    for (double v : half.attended.to_vector()) EXPECT_NEAR(v, 1.0, 1e-12);
    EXPECT_THROW(iab_forward(p, random_tensor({1, cfg.dru_channels + 1, 4, 4}, rng)), DimensionError);
}

TEST(Iab, SaturatedBypassMatchesBase) {
    DTypeScope f64(DType::f64);
    Rng rng(47);
    auto cfg = ModelConfig::tiny();
    auto p = init_params(cfg, rng);
    auto base_cfg = cfg;
    base_cfg.iab_enabled = false;
    ModelParams base;
    for (const auto& [name, t] : p.entries())
        if (!name.starts_with("iab.")) base.insert(name, t);
    p.at("iab.conv3.bias").mutable_data<double>()[0] = -60.0;
    const auto x = random_tensor({1, 3, 32, 32}, rng, 0, 1);
    const auto a = forward(p, cfg, x).density.to_vector();
    const auto b = forward(base, base_cfg, x).density.to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-4);
}

TEST(DensityModule, ShapeAndZeroWeights) {
    Rng rng(48);
    const auto cfg = ModelConfig::tiny();
    auto p = init_params(cfg, rng);
    const auto f = random_tensor({2, cfg.dru_channels, 5, 7}, rng);
    EXPECT_EQ(density_module_forward(p, f).shape(), (Shape{2, 1, 5, 7}));
    for (auto& [name, t] : p.entries()) {
        if (name.starts_with("dm.")) t.mutable_storage().fill(0.0);
    }
    for (double v : density_module_forward(p, f).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Predict, PadsAndCrops) {
    Rng rng(49);
    Model m{ModelConfig::tiny(), {}};
    m.params = init_params(m.config, rng);
    data::Image img(37, 50, 3, 0.5f);
    const auto d = predict_density(m, img);
    EXPECT_EQ(d.shape(), (Shape{1, 1, 10, 13}));
    EXPECT_FALSE(d.requires_grad());
}

TEST(WeightsIo, RoundTripAndInventoryErrors) {
    const auto dir = temp_dir("weights");
    Rng rng(50);
    const auto cfg = ModelConfig::tiny();
    const auto p = init_params(cfg, rng);
    save_params(p, dir / "a.iawt");
    const auto q = load_params(dir / "a.iawt", cfg);
    save_params(q, dir / "b.iawt");
    EXPECT_EQ(read_file(dir / "a.iawt"), read_file(dir / "b.iawt"));

    DTypeScope f32(DType::f32);
    const auto p32 = load_params(dir / "a.iawt");
    const auto r = load_params(dir / "a.iawt");
    const auto x = random_tensor({1, 3, 16, 16}, rng, 0, 1);
    EXPECT_EQ(forward(p32, cfg, x).density.to_vector(), forward(r, cfg, x).density.to_vector());
    EXPECT_EQ(infer_config(r), cfg);

    auto base_cfg = cfg;
    base_cfg.iab_enabled = false;
    Rng rng2(51);
    save_params(init_params(base_cfg, rng2), dir / "base.iawt");
    try {
        load_params(dir / "base.iawt", cfg);
        FAIL();
    } catch (const InventoryError& e) {
        EXPECT_NE(std::string(e.what()).find("iab.conv1.weight"), std::string::npos);
    }

    std::ofstream(dir / "bad.iawt", std::ios::binary) << "IAWX";
    EXPECT_THROW(load_params(dir / "bad.iawt"), ParseError);
}
