#include "iadccn_cli/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI/CLI.hpp>

#include "iadccn/annotations.hpp"
#include "iadccn/density.hpp"
#include "iadccn/error.hpp"
#include "iadccn/evaluation.hpp"
#include "iadccn/model.hpp"
#include "iadccn/ops.hpp"
#include "iadccn/synth.hpp"
#include "iadccn/training.hpp"
#include "iadccn_cli/gradcheck_suite.hpp"
#include "iadccn_cli/manifest.hpp"

namespace iadccn::cli {

namespace fs = std::filesystem;

namespace {

struct Context {
    std::ostream& out;
    std::ostream& err;
    std::vector<std::string> arguments;
    std::string started;
};

fs::path annotation_file(const fs::path& data) {
    return fs::is_directory(data) ? data / "annotations.json" : data;
}

std::vector<data::AnnotatedImage> load_data(const fs::path& data) {
    const auto path = annotation_file(data);
    if (!fs::exists(path)) {
        throw DataError("no annotation file at " + path.string());
    }
    return data::load_annotations(path);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw DataError("cannot create directory " + dir.string());
    }
}

train::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& sets) {
    train::RunConfig cfg;
    if (!config_path.empty()) {
        cfg = train::load_run_config(config_path);
    }
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        train::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

void log_epoch(std::ostream& os, const std::string& prefix, const train::EpochMetrics& m) {
    os << prefix << "epoch " << m.epoch << " train_mae " << fmt("%.4f", m.train_mae) << " val_mae "
       << fmt("%.4f", m.val_mae) << " L_d " << fmt("%.5f", m.density_loss) << " L_s "
       << fmt("%.5f", m.seg_loss) << " active " << m.active_set_size << '\n';
}

data::DensityMap to_density_map(const Tensor& t, std::size_t scale) {
    data::DensityMap d;
    d.height = t.dim(2);
    d.width = t.dim(3);
    d.scale = scale;
    d.values = t.to_vector();
    return d;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::size_t n = 10;
    std::vector<std::size_t> hw{64, 64};
    std::vector<std::size_t> count_range{0, 20};
    double clutter = 0.0;
    std::size_t channels = 3;
    std::uint64_t seed = 0;
};

int cmd_synth(Context& ctx, const SynthArgs& a) {
    data::SynthConfig cfg;
    cfg.height = a.hw[0];
    cfg.width = a.hw[1];
    cfg.count_min = a.count_range[0];
    cfg.count_max = a.count_range[1];
    cfg.clutter_level = a.clutter;
    cfg.channels = a.channels;
    cfg.validate();

    ensure_dir(a.out);
    std::vector<data::AnnotatedImage> images;
    images.reserve(a.n);
    for (std::size_t i = 0; i < a.n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "img_%05zu", i);
        Rng rng(derive_seed(a.seed, std::string("synth/") + id));
        images.push_back(data::synth_scene(rng, cfg, id));
    }
    const auto files = data::save_dataset(fs::path(a.out) / "annotations.json", images);

    std::ostringstream snapshot;
    snapshot << "n=" << a.n << "\nheight=" << cfg.height << "\nwidth=" << cfg.width
             << "\ncount_min=" << cfg.count_min << "\ncount_max=" << cfg.count_max
             << "\nclutter=" << fmt("%.17g", cfg.clutter_level) << "\nchannels=" << cfg.channels
             << '\n';
    write_manifest(a.out, {"synth", ctx.arguments, snapshot.str(), a.seed, ctx.started, files});
    ctx.out << "wrote " << a.n << " images to " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::string ablation;
    std::string weights;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_train(Context& ctx, const TrainArgs& a) {
    train::RunConfig cfg = load_config(a.config, a.sets);
    if (a.seed) {
        cfg.train.seed = *a.seed;
    }
    if (!a.ablation.empty()) {
        const auto ab = eval::parse_ablation(a.ablation);
        if (!ab) {
            throw ConfigError("--ablation expects base, s, iab or iab_hsm");
        }
        eval::apply_ablation(cfg, *ab);
    }
    cfg.model.validate();
    cfg.train.validate();
    const auto dataset = load_data(a.data);
    ensure_dir(a.out);

    model::Model model{cfg.model, {}};
    if (!a.weights.empty()) {
        model.params = model::load_params(a.weights, cfg.model);
    } else {
        Rng init_rng(derive_seed(cfg.train.seed, "init"));
        model.params = model::init_params(cfg.model, init_rng);
    }

    train::TrainCallbacks callbacks;
    if (!a.quiet) {
        callbacks.on_epoch = [&](const train::EpochMetrics& m) { log_epoch(ctx.err, "", m); };
    }
    const auto result = train::train(model, dataset, cfg.train, callbacks);
    for (const auto& m : result.history) {
        if (!std::isfinite(m.density_loss) || !std::isfinite(m.seg_loss)) {
            ctx.err << "error: training diverged at epoch " << m.epoch << '\n';
            return kExitNumeric;
        }
    }

    const fs::path out(a.out);
    const auto weights = out / "weights.iawt";
    const auto metrics = out / "metrics.csv";
    const auto config = out / "config.txt";
    model::save_params(model.params, weights);
    train::write_metrics_csv(metrics, result.history);
    const std::string snapshot = train::to_key_values(cfg);
    {
        std::ofstream os(config);
        os << snapshot;
    }
    write_manifest(out, {"train", ctx.arguments, snapshot, cfg.train.seed, ctx.started,
                         {weights, metrics, config}});
    ctx.out << "weights: " << weights.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

model::Model load_model(const std::string& weights, std::size_t upsample_factor) {
    model::Model m;
    m.params = model::load_params(weights);
    m.config = model::infer_config(m.params, upsample_factor);
    m.params.check_inventory(m.config);
    return m;
}

struct EvalArgs {
    std::string data;
    std::string weights;
    std::string out;
    std::size_t upsample_factor = 4;
};

int cmd_eval(Context& ctx, const EvalArgs& a) {
    const auto model = load_model(a.weights, a.upsample_factor);
    const auto dataset = load_data(a.data);
    ensure_dir(a.out);
    const auto report = eval::evaluate(model, dataset);
    const fs::path out(a.out);
    const auto csv = out / "report.csv";
    const auto json = out / "summary.json";
    eval::write_report_csv(csv, report);
    eval::write_report_json(json, report);
    write_manifest(out, {"eval", ctx.arguments, "", 0, ctx.started, {csv, json}});
    ctx.out << "n " << report.samples.size() << " mae " << fmt("%.4f", report.mae) << " mse "
            << fmt("%.4f", report.mse) << " ms_per_image " << fmt("%.2f", report.ms_per_image)
            << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string image;
    std::string weights;
    std::string out;
    std::size_t upsample_factor = 4;
};

int cmd_infer(Context& ctx, const InferArgs& a) {
    const auto model = load_model(a.weights, a.upsample_factor);
    const auto image = data::read_pnm(a.image);
    ensure_dir(a.out);

    const auto start = std::chrono::steady_clock::now();
    const Tensor density = model::predict_density(model, image);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const auto map = to_density_map(density, model.config.output_stride());
    const double count = eval::count_from_density(map);

    const fs::path out(a.out);
    const auto iadm = out / "density.iadm";
    const auto csv = out / "density.csv";
    const auto pgm = out / "heatmap.pgm";
    const auto txt = out / "count.txt";
    data::save_density(iadm, map);
    data::export_density_csv(csv, map);
    data::write_pnm(pgm, data::render_heatmap(map));
    {
        std::ofstream os(txt);
        os << fmt("%.6f", count) << '\n';
    }
    write_manifest(out, {"infer", ctx.arguments, "", 0, ctx.started, {iadm, csv, pgm, txt}});
    ctx.out << "count " << fmt("%.4f", count) << " input " << image.height << "x" << image.width
            << " output " << map.height << "x" << map.width << " ms " << fmt("%.2f", ms) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_render(Context& ctx, const std::string& density_path, const std::string& out_path) {
    const auto density = data::load_density(density_path);
    const fs::path out(out_path);
    if (out.has_parent_path()) {
        ensure_dir(out.parent_path());
    }
    data::write_pnm(out, data::render_heatmap(density));
    ctx.out << "wrote " << out.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(Context& ctx, const std::string& level, std::uint64_t seed) {
    std::vector<GradCheckEntry> entries;
    if (level == "ops" || level == "all") {
        entries = run_op_gradchecks(seed);
    }
    if (level == "model" || level == "all") {
        entries.push_back(run_model_gradcheck(seed));
    }
    bool ok = true;
    for (const auto& e : entries) {
        ok = ok && e.passed();
        ctx.out << (e.passed() ? "ok   " : "FAIL ") << e.name << "  max_rel_err "
                << fmt("%.3e", e.result.max_rel_err) << " (tol " << fmt("%.0e", e.tolerance)
                << ", " << e.result.coords_checked << " coords)\n";
    }
    return ok ? kExitOk : kExitNumeric;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
    std::string data;
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    double test_fraction = 0.25;
    bool quiet = false;
};

int cmd_ablate(Context& ctx, const AblateArgs& a) {
    train::RunConfig cfg = load_config(a.config, a.sets);
    const std::uint64_t seed = a.seed.value_or(cfg.train.seed);
    const auto dataset = load_data(a.data);
    ensure_dir(a.out);

    eval::AblationOptions opts;
    opts.test_fraction = a.test_fraction;
    if (!a.quiet) {
        opts.on_epoch = [&](eval::Ablation ab, const train::EpochMetrics& m) {
            log_epoch(ctx.err, std::string(eval::ablation_label(ab)) + " ", m);
        };
    }
    const auto result = eval::run_ablation(dataset, cfg, seed, opts);

    const fs::path out(a.out);
    std::vector<fs::path> files;
    for (const auto& row : result.rows) {
        const std::string key(eval::ablation_key(row.config));
        files.push_back(out / (key + "_report.csv"));
        eval::write_report_csv(files.back(), row.report);
        files.push_back(out / (key + "_metrics.csv"));
        train::write_metrics_csv(files.back(), row.history);
    }
    files.push_back(out / "ablation.csv");
    eval::write_ablation_csv(files.back(), result);
    cfg.train.seed = seed;
    write_manifest(out, {"ablate", ctx.arguments, train::to_key_values(cfg), seed, ctx.started, files});

    for (const auto& row : result.rows) {
        ctx.out << eval::ablation_label(row.config) << " mae " << fmt("%.4f", row.report.mae)
                << " mse " << fmt("%.4f", row.report.mse) << '\n';
    }
    return kExitOk;
}

void print_version(std::ostream& os) {
    os << "iadccn " << IADCCN_VERSION << '\n'
       << "weights format IAWT v" << model::kWeightFormatVersion << '\n'
       << "density format IADM v" << data::kDensityFormatVersion << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Crowd counting with inverse attention: data, training, evaluation.", "iadccn"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    bool version = false;
    int threads = 0;
    app.add_flag("--version", version, "Print tool and file format versions");
    app.add_option("--threads", threads, "Worker threads for convolution; 1 is bitwise deterministic")
        ->check(CLI::NonNegativeNumber);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic crowd dataset");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--n", synth.n, "Number of images");
    s->add_option("--hw", synth.hw, "Image height and width")->expected(2);
    s->add_option("--count-range", synth.count_range, "Min and max people per image")->expected(2);
    s->add_option("--clutter", synth.clutter, "Distractors per image as a multiple of the max count");
    s->add_option("--channels", synth.channels, "1 (PGM) or 3 (PPM)");
    s->add_option("--seed", synth.seed, "Random seed");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--data", tr.data, "Dataset directory or annotation file")->required();
    t->add_option("--config", tr.config, "key = value config file");
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--ablation", tr.ablation, "base, s, iab or iab_hsm");
    t->add_option("--weights", tr.weights, "Initial weights to resume from");
    t->add_option("--set", tr.sets, "Override a config key: key=value");
    t->add_option("--seed", tr.seed, "Random seed, overrides the config");
    t->add_flag("--quiet", tr.quiet, "No per-epoch log");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate weights on a dataset");
    e->add_option("--data", ev.data, "Dataset directory or annotation file")->required();
    e->add_option("--weights", ev.weights, "Weight file")->required();
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_option("--upsample-factor", ev.upsample_factor, "DRU upsampling used in training");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Predict a density map for one image");
    i->add_option("--image", inf.image, "PGM or PPM image")->required();
    i->add_option("--weights", inf.weights, "Weight file")->required();
    i->add_option("--out", inf.out, "Output directory")->required();
    i->add_option("--upsample-factor", inf.upsample_factor, "DRU upsampling used in training");

    std::string render_in, render_out;
    auto* r = app.add_subcommand("render", "Render a density file as a PGM heatmap");
    r->add_option("--density", render_in, "IADM density file")->required();
    r->add_option("--out", render_out, "Output PGM")->required();

    std::string level = "ops";
    std::uint64_t gc_seed = 7;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    g->add_option("--level", level, "ops, model or all")
        ->check(CLI::IsMember({"ops", "model", "all"}));
    g->add_option("--seed", gc_seed, "Random seed");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train and evaluate the four ablation configurations");
    a->add_option("--data", ab.data, "Dataset directory or annotation file")->required();
    a->add_option("--config", ab.config, "key = value config file");
    a->add_option("--out", ab.out, "Output directory")->required();
    a->add_option("--set", ab.sets, "Override a config key: key=value");
    a->add_option("--seed", ab.seed, "Random seed, overrides the config");
    a->add_option("--test-fraction", ab.test_fraction, "Held-out share of the dataset");
    a->add_flag("--quiet", ab.quiet, "No per-epoch log");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    if (version) {
        print_version(out);
        return kExitOk;
    }
    if (app.get_subcommands().empty()) {
        err << app.help();
        return kExitUsage;
    }
    if (threads > 0) {
        ops::set_num_threads(threads);
    }

    Context ctx{out, err, {}, utc_timestamp()};
    for (int k = 1; k < argc; ++k) {
        ctx.arguments.emplace_back(argv[k]);
    }
    try {
        if (s->parsed()) return cmd_synth(ctx, synth);
        if (t->parsed()) return cmd_train(ctx, tr);
        if (e->parsed()) return cmd_eval(ctx, ev);
        if (i->parsed()) return cmd_infer(ctx, inf);
        if (r->parsed()) return cmd_render(ctx, render_in, render_out);
        if (g->parsed()) return cmd_gradcheck(ctx, level, gc_seed);
        if (a->parsed()) return cmd_ablate(ctx, ab);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const DataError& ex) {
        err << "data error: " << ex.what() << '\n';
        return kExitData;
    } catch (const InventoryError& ex) {
        err << "weights error: " << ex.what() << '\n';
        return kExitData;
    } catch (const std::filesystem::filesystem_error& ex) {
        err << "file error: " << ex.what() << '\n';
        return kExitData;
    } catch (const Error& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitNumeric;
    }
    return kExitUsage;
}

}  // namespace iadccn::cli
