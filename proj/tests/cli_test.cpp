#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iadccn/annotations.hpp"
#include "iadccn/density.hpp"
#include "iadccn/image.hpp"
#include "iadccn/model.hpp"
#include "iadccn_cli/cli.hpp"
#include "iadccn_cli/manifest.hpp"

using namespace iadccn;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "iadccn");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() / ("iadccn_cli_" + std::string(
                    ::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        std::ofstream(root_ / "tiny.cfg") << "preset = tiny\nepochs = 2\npatch_size = 32\n"
                                             "patches_per_image = 1\nlr = 0.001\nval_fraction = 0.25\n";
    }
    std::string p(const std::string& rel) const { return (root_ / rel).string(); }
    fs::path root_;
};

}  // namespace

TEST(Manifest, GitBlobHash) {
    const auto f = fs::temp_directory_path() / "iadccn_empty_blob";
    std::ofstream(f).close();
    EXPECT_EQ(cli::git_blob_sha1(f), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    std::ofstream(f) << "hello\n";
    EXPECT_EQ(cli::git_blob_sha1(f), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_F(Cli, VersionAndUsage) {
    const auto v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find("IAWT v1"), std::string::npos);
    EXPECT_EQ(run({}).code, cli::kExitUsage);
    EXPECT_EQ(run({"bogus"}).code, cli::kExitUsage);
    EXPECT_EQ(run({"synth"}).code, cli::kExitUsage);
    EXPECT_EQ(run({"train", "--data", p("none"), "--out", p("o"), "--set", "lr"}).code, cli::kExitUsage);
}

TEST_F(Cli, SynthEmptyCountsAndDeterminism) {
    ASSERT_EQ(run({"synth", "--out", p("empty"), "--n", "0"}).code, 0);
    EXPECT_TRUE(data::load_annotations(p("empty/annotations.json")).empty());

    ASSERT_EQ(run({"synth", "--out", p("a"), "--n", "3", "--count-range", "5", "5", "--seed", "4"}).code, 0);
    ASSERT_EQ(run({"synth", "--out", p("b"), "--n", "3", "--count-range", "5", "5", "--seed", "4"}).code, 0);
    for (const auto& img : data::load_annotations(p("a/annotations.json"))) EXPECT_EQ(img.points.size(), 5u);
    EXPECT_EQ(slurp(p("a/annotations.json")), slurp(p("b/annotations.json")));
    EXPECT_EQ(slurp(p("a/images/img_00002.ppm")), slurp(p("b/images/img_00002.ppm")));

    const auto m = nlohmann::json::parse(slurp(p("a/manifest.json")));
    EXPECT_EQ(m["artifacts"].size(), 4u);
    for (const auto& a : m["artifacts"]) {
        EXPECT_EQ(a["sha1"], cli::git_blob_sha1(root_ / "a" / a["path"].get<std::string>()));
    }
    EXPECT_EQ(run({"synth", "--out", p("c"), "--n", "1", "--count-range", "5", "2"}).code, cli::kExitUsage);
}

TEST_F(Cli, TrainEvalInferRender) {
    ASSERT_EQ(run({"synth", "--out", p("d"), "--n", "4", "--hw", "32", "32", "--seed", "2"}).code, 0);
    const auto t = run({"train", "--data", p("d"), "--config", p("tiny.cfg"), "--out", p("t"),
                        "--ablation", "base", "--seed", "3", "--quiet", "--threads", "1"});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto params = model::load_params(p("t/weights.iawt"));
    EXPECT_FALSE(params.contains("iab.conv1.weight"));
    EXPECT_FALSE(params.contains("seg.conv1.weight"));
    std::ifstream csv(p("t/metrics.csv"));
    std::string line;
    int rows = -1;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 2);
    const auto m = nlohmann::json::parse(slurp(p("t/manifest.json")));
    EXPECT_EQ(m["artifacts"].size(), 3u);
    EXPECT_EQ(m["seed"], 3);

    // Resume: matching inventory works, mismatched is a data error.
    EXPECT_EQ(run({"train", "--data", p("d"), "--config", p("tiny.cfg"), "--out", p("t2"), "--ablation",
                   "base", "--weights", p("t/weights.iawt"), "--quiet"}).code, 0);
    const auto bad = run({"train", "--data", p("d"), "--config", p("tiny.cfg"), "--out", p("t3"),
                          "--ablation", "iab", "--weights", p("t/weights.iawt"), "--quiet"});
    EXPECT_EQ(bad.code, cli::kExitData);
    EXPECT_NE(bad.err.find("iab.conv1.weight"), std::string::npos);

    const auto e = run({"eval", "--data", p("d"), "--weights", p("t/weights.iawt"), "--out", p("e")});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto summary = nlohmann::json::parse(slurp(p("e/summary.json")));
    EXPECT_EQ(summary["n"], 4);

    data::write_pnm(p("odd.pgm"), data::Image(37, 50, 3, 0.4f));
    const auto inf = run({"infer", "--image", p("odd.pgm"), "--weights", p("t/weights.iawt"), "--out", p("i")});
    ASSERT_EQ(inf.code, 0) << inf.err;
    const auto d = data::load_density(p("i/density.iadm"));
    EXPECT_EQ(d.height, 10u);
    EXPECT_EQ(d.width, 13u);

    data::save_density(p("zero.iadm"), data::DensityMap(6, 7, 4));
    ASSERT_EQ(run({"render", "--density", p("zero.iadm"), "--out", p("zero.pgm")}).code, 0);
    const auto img = data::read_pnm(p("zero.pgm"));
    EXPECT_EQ(img.channels, 1u);
    for (float v : img.pixels) EXPECT_EQ(v, 0.0f);
}

TEST_F(Cli, DataErrors) {
    EXPECT_EQ(run({"eval", "--data", p("missing"), "--weights", p("w"), "--out", p("e")}).code, cli::kExitData);
    fs::create_directories(root_ / "bad");
    std::ofstream(root_ / "bad/annotations.json") << "[{";
    EXPECT_EQ(run({"train", "--data", p("bad"), "--out", p("o"), "--quiet"}).code, cli::kExitData);
    EXPECT_EQ(run({"render", "--density", p("missing.iadm"), "--out", p("x.pgm")}).code, cli::kExitData);
}

TEST_F(Cli, GradcheckOps) {
    const auto g = run({"gradcheck", "--level", "ops"});
    EXPECT_EQ(g.code, 0) << g.out;
    EXPECT_EQ(g.out.find("FAIL"), std::string::npos);
    EXPECT_EQ(run({"gradcheck", "--level", "weird"}).code, cli::kExitUsage);
}
