#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iadccn/annotations.hpp"
#include "iadccn/density.hpp"
#include "iadccn/error.hpp"
#include "iadccn/patches.hpp"
#include "iadccn/synth.hpp"

using namespace iadccn;
using namespace iadccn::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("iadccn_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<Point> random_points(Rng& rng, std::size_t n, std::size_t h, std::size_t w) {
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i) {
        pts.push_back({rng.uniform(0.0, static_cast<double>(w)), rng.uniform(0.0, static_cast<double>(h))});
    }
    return pts;
}

}  // namespace

TEST(Density, EmptyIsZero) {
    const auto d = generate_density_map({}, 8, 9, {});
    EXPECT_EQ(d.values.size(), 72u);
    for (double v : d.values) EXPECT_EQ(v, 0.0);
}

TEST(Density, SinglePointCentered) {
    DensityConfig cfg;
    cfg.sigma = 2.0;
    const auto d = generate_density_map({{16, 16}}, 32, 32, cfg);
    EXPECT_NEAR(d.sum(), 1.0, 1e-9);
    const auto it = std::max_element(d.values.begin(), d.values.end());
    EXPECT_EQ(static_cast<std::size_t>(it - d.values.begin()), 16u * 32 + 16);
    for (double v : d.values) EXPECT_GE(v, 0.0);
}

TEST(Density, CornerPointsRenormalized) {
    const auto d = generate_density_map({{0, 0}, {31.9, 31.9}, {10, 20}}, 32, 32, {});
    EXPECT_NEAR(d.sum(), 3.0, 1e-9);
}

TEST(Density, OutOfBoundsNamesIndex) {
    try {
        generate_density_map({{1, 1}, {40, 2}}, 32, 32, {});
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
    }
}

TEST(Density, CountConservationProperty) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 4 * static_cast<std::size_t>(rng.uniform_int(1, 16));
        const std::size_t w = 4 * static_cast<std::size_t>(rng.uniform_int(1, 16));
        DensityConfig cfg;
        cfg.sigma = rng.uniform(0.5, 6.0);
        const auto pts = random_points(rng, static_cast<std::size_t>(rng.uniform_int(0, 30)), h, w);
        const auto d = generate_density_map(pts, h, w, cfg);
        ASSERT_LE(std::abs(d.sum() - static_cast<double>(pts.size())), 1e-9);
        const auto down = downsample_density(d, 4);
        EXPECT_EQ(down.sum(), d.sum());
        EXPECT_EQ(down.scale, 4u);
    }
}

TEST(Density, DownsampleBasics) {
    DensityMap d(4, 4);
    d.at(2, 1) = 1.0;
    const auto one = downsample_density(d, 4);
    ASSERT_EQ(one.values.size(), 1u);
    EXPECT_EQ(one.values[0], 1.0);
    const auto z = downsample_density(DensityMap(8, 12), 4);
    for (double v : z.values) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(downsample_density(DensityMap(6, 8), 4), ConfigError);
}

TEST(Mask, ThresholdAndComplement) {
    const auto zero = generate_seg_mask(DensityMap(5, 5), 1e-3);
    EXPECT_EQ(zero.count(), 0u);
    EXPECT_EQ(invert(zero).count(), 25u);

    DensityConfig cfg;
    cfg.sigma = 2.0;
    const auto d = generate_density_map({{16, 16}}, 32, 32, cfg);
    const auto m = generate_seg_mask(d, cfg.mask_threshold);
    const auto inv = invert(m);
    for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_EQ(m.values[i] + inv.values[i], 1);

    // Brute force: normalized Gaussian over the truncated window.
    const int r = static_cast<int>(std::ceil(3 * cfg.sigma));
    double z = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) z += std::exp(-(dx * dx + dy * dy) / (2 * cfg.sigma * cfg.sigma));
    std::size_t above = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (std::exp(-(dx * dx + dy * dy) / (2 * cfg.sigma * cfg.sigma)) / z > cfg.mask_threshold) ++above;
    EXPECT_EQ(m.count(), above);
}

TEST(Mask, DownsampleIsBlockMax) {
    SegMask m;
    m.height = 8;
    m.width = 8;
    m.values.assign(64, 0);
    m.values[5 * 8 + 6] = 1;
    const auto d = downsample_mask(m, 4);
    EXPECT_EQ(d.values, (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(GroundTruth, OutputGridTargets) {
    Rng rng(22);
    const auto pts = random_points(rng, 7, 64, 48);
    const auto gt = make_ground_truth(pts, 64, 48, {}, 4);
    EXPECT_EQ(gt.density.height, 16u);
    EXPECT_EQ(gt.density.width, 12u);
    EXPECT_NEAR(gt.count, 7.0, 1e-9);
    EXPECT_NEAR(gt.density.sum(), 7.0, 1e-9);
    for (std::size_t i = 0; i < gt.mask.values.size(); ++i) EXPECT_EQ(gt.mask.values[i] + gt.inverse.values[i], 1);
}

TEST(DensityIo, RoundTripBitExact) {
    const auto dir = temp_dir("density_io");
    Rng rng(23);
    auto d = generate_density_map(random_points(rng, 5, 16, 20), 16, 20, {});
    for (auto& v : d.values) v = static_cast<float>(v);
    save_density(dir / "d.iadm", d);
    const auto back = load_density(dir / "d.iadm");
    EXPECT_EQ(back.height, d.height);
    EXPECT_EQ(back.width, d.width);
    EXPECT_EQ(back.values, d.values);

    std::ofstream(dir / "bad.iadm", std::ios::binary) << "IADX";
    EXPECT_THROW(load_density(dir / "bad.iadm"), ParseError);
}

TEST(Heatmap, ZeroRendersBlackAndMaxIsWhite) {
    const auto black = render_heatmap(DensityMap(4, 4));
    for (float v : black.pixels) EXPECT_EQ(v, 0.0f);
    DensityMap d(2, 2);
    d.values = {0.0, 0.5, 1.0, -1.0};
    const auto img = render_heatmap(d);
    EXPECT_EQ(img.pixels[2], 1.0f);
    EXPECT_EQ(img.pixels[3], 0.0f);
}

TEST(Patches, ExactSizeYieldsWholeImage) {
    Rng rng(24);
    AnnotatedImage img{"a", Image(32, 32, 1, 0.25f), {{3, 4}, {30, 31}}};
    for (const auto& p : sample_patches(img, 9, 32, rng)) {
        EXPECT_EQ(p.image, img.image);
        EXPECT_EQ(p.points, img.points);
    }
}

TEST(Patches, HalfOpenContainmentOracle) {
    Rng rng(25);
    AnnotatedImage img{"b", Image(40, 50, 3, 0.5f), random_points(rng, 60, 40, 50)};
    img.points.push_back({20, 10});
    for (const auto& p : sample_patches(img, 20, 16, rng)) {
        std::size_t expected = 0;
        for (const auto& q : img.points) {
            if (q.x >= p.left && q.x < p.left + 16.0 && q.y >= p.top && q.y < p.top + 16.0) ++expected;
        }
        EXPECT_EQ(p.points.size(), expected);
        for (const auto& q : p.points) {
            EXPECT_GE(q.x, 0.0);
            EXPECT_LT(q.x, 16.0);
        }
    }
}

TEST(Patches, BoundaryPointExcluded) {
    Rng rng(26);
    AnnotatedImage img{"c", Image(8, 16, 1), {{8.0, 2.0}, {7.99, 2.0}}};
    // A 8x8 patch of a 8x16 image; find one with left == 0.
    for (int i = 0; i < 100; ++i) {
        auto ps = sample_patches(img, 1, 8, rng);
        if (ps[0].left == 0) {
            ASSERT_EQ(ps[0].points.size(), 1u);
            EXPECT_EQ(ps[0].points[0].x, 7.99);
            return;
        }
    }
    FAIL() << "no patch at left 0";
}

TEST(Patches, SmallImageIsZeroPadded) {
    Rng rng(27);
    AnnotatedImage img{"d", Image(10, 12, 1, 1.0f), {{5, 5}}};
    const auto ps = sample_patches(img, 3, 16, rng);
    for (const auto& p : ps) {
        EXPECT_EQ(p.image.height, 16u);
        EXPECT_EQ(p.image.width, 16u);
        EXPECT_EQ(p.image.at(15, 15, 0), 0.0f);
        EXPECT_EQ(p.points.size(), 1u);
    }
}

TEST(Augment, FlipInvolutionAndEdge) {
    Rng rng(28);
    Image im(4, 224, 1);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<float>(rng.uniform());
    std::vector<Point> pts{{0, 1}, {100.5, 2}};
    auto im2 = im;
    auto pts2 = pts;
    flip_horizontal(im2, pts2);
    EXPECT_EQ(pts2[0].x, 223.0);
    flip_horizontal(im2, pts2);
    EXPECT_EQ(im2, im);
    EXPECT_EQ(pts2, pts);
}

TEST(Augment, ZeroNoiseOnlyFlips) {
    Rng rng(29);
    Image im(3, 5, 3);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<float>(rng.uniform());
    Patch p{im, {{1, 1}}, 0, 0, "x"};
    for (int i = 0; i < 10; ++i) {
        const auto out = augment(p, rng, 0.0);
        auto flipped = im;
        std::vector<Point> fp = p.points;
        flip_horizontal(flipped, fp);
        EXPECT_TRUE(out.image == im || out.image == flipped);
    }
    const auto noisy = augment(p, rng, 0.5);
    for (float v : noisy.image.pixels) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Augment, SeededDeterminism) {
    AnnotatedImage img{"e", Image(40, 40, 3, 0.5f), {{3, 3}, {20, 30}}};
    Rng a(30), b(30);
    const auto pa = sample_patches(img, 4, 16, a);
    const auto pb = sample_patches(img, 4, 16, b);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto x = augment(pa[i], a);
        const auto y = augment(pb[i], b);
        EXPECT_EQ(x.image, y.image);
        EXPECT_EQ(x.points, y.points);
    }
}

TEST(Synth, CountsAndDeterminism) {
    SynthConfig cfg;
    cfg.count_min = cfg.count_max = 0;
    Rng r0(31);
    EXPECT_TRUE(synth_scene(r0, cfg).points.empty());

    cfg.count_min = cfg.count_max = 5;
    cfg.clutter_level = 1.0;
    Rng r1(32), r2(32);
    const auto a = synth_scene(r1, cfg, "s");
    const auto b = synth_scene(r2, cfg, "s");
    EXPECT_EQ(a.points.size(), 5u);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.points, b.points);
    for (const auto& p : a.points) {
        EXPECT_LT(p.x, 64.0);
        EXPECT_LT(p.y, 64.0);
    }
}

TEST(Annotations, RoundTripAndErrors) {
    const auto dir = temp_dir("annotations");
    Rng rng(33);
    SynthConfig cfg;
    cfg.channels = 1;
    std::vector<AnnotatedImage> imgs{synth_scene(rng, cfg, "g0"), synth_scene(rng, cfg, "g1")};
    imgs[1].points.clear();
    const auto files = save_dataset(dir / "ann.json", imgs);
    EXPECT_EQ(files.back(), dir / "ann.json");
    const auto back = load_annotations(dir / "ann.json");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, "g0");
    EXPECT_EQ(back[0].points, imgs[0].points);
    EXPECT_TRUE(back[1].points.empty());
    EXPECT_EQ(back[0].image.channels, 1u);

    std::ofstream(dir / "oob.json") << R"([{"id":"x","image":"images/g0.pgm","points":[[1,1],[500,2]]}])";
    try {
        load_annotations(dir / "oob.json");
        FAIL();
    } catch (const ParseError&) {
        FAIL() << "bounds error is not a syntax error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
    }

    std::ofstream(dir / "bad.json") << "[\n{\"id\": \"x\",, }]";
    try {
        load_annotations(dir / "bad.json");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_GT(e.offset(), 0u);
    }
}

TEST(Pnm, RoundTrip) {
    const auto dir = temp_dir("pnm");
    Image im(3, 4, 3);
    for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<float>(i % 256) / 255.0f;
    write_pnm(dir / "a.ppm", im);
    EXPECT_EQ(read_pnm(dir / "a.ppm"), im);
    std::ofstream(dir / "t.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    EXPECT_THROW(read_pnm(dir / "t.pgm"), ParseError);
}
