#include "gtanet/cli.hpp"

#include "gtanet/bench.hpp"
#include "gtanet/metrics.hpp"
#include "gtanet/plot.hpp"
#include "gtanet/stream.hpp"
#include "gtanet/synth.hpp"
#include "gtanet/trainer.hpp"

#include "CLI11.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <ostream>

namespace gtanet {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = ".";
    bool json = false;
};

// Config file sections: "model", "train", "synth"; all optional.
nlohmann::json read_config(const Globals& g) {
    if (g.config.empty()) return nlohmann::json::object();
    const auto bytes = read_file_bytes(g.config);
    try {
        auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
        if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() != "model" && it.key() != "train" && it.key() != "synth") {
                throw std::invalid_argument("unknown config section '" + it.key() + "'");
            }
        }
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(g.config + ": " + e.what());
    }
}

GtaNetConfig model_config(const Globals& g) {
    const auto cfg = read_config(g);
    auto m = cfg.contains("model") ? GtaNetConfig::from_json(cfg.at("model")) : GtaNetConfig{};
    if (!cfg.contains("model") || !cfg.at("model").contains("seed")) m.seed = g.seed;
    return m;
}

TrainConfig train_config(const Globals& g) {
    const auto cfg = read_config(g);
    auto t = cfg.contains("train") ? TrainConfig::from_json(cfg.at("train")) : TrainConfig{};
    if (!cfg.contains("train") || !cfg.at("train").contains("seed")) t.seed = g.seed;
    return t;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

struct DataEntry {
    std::string name;
    PoseSequence input;
    PoseSequence target;
};

std::vector<DataEntry> load_dataset(const fs::path& dir) {
    const auto bytes = read_file_bytes(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    std::vector<DataEntry> out;
    for (const auto& s : manifest.at("sequences")) {
        out.push_back({s.at("name").get<std::string>(), load_pose(dir / s.at("input").get<std::string>()),
                       load_pose(dir / s.at("target").get<std::string>())});
    }
    if (out.empty()) throw std::runtime_error("dataset " + dir.string() + " is empty");
    return out;
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

Split split_dataset(std::size_t n, std::size_t fold, std::size_t folds, std::uint64_t seed) {
    if (n == 1) return {{0}, {0}};
    const auto parts = kfold_split(n, std::min(folds, n), seed);
    if (fold >= parts.size()) throw std::invalid_argument("fold index out of range");
    return {parts[fold].train, parts[fold].val};
}

std::vector<Sample> to_samples(const std::vector<DataEntry>& data, const std::vector<std::size_t>& idx, bool conf) {
    std::vector<Sample> out;
    for (auto i : idx) out.push_back(make_sample(data[i].input, data[i].target, conf));
    return out;
}

EvalReport evaluate_model(GtaNetModel& model, const std::vector<Sample>& samples) {
    std::vector<EvalItem> items;
    for (const auto& s : samples) {
        items.push_back({s.action, predict(model, s), s.root_relative_target(model.topology().root_index)});
    }
    return evaluate(items, model.topology().joint_count(), model.topology().root_index);
}

void emit_report(const EvalReport& report, const Globals& g, std::ostream& out) {
    if (g.json) {
        out << report.to_json().dump(2) << "\n";
    } else {
        out << report.to_text();
    }
}

// ---- Subcommands ---------------------------------------------------------------

int cmd_synth(const Globals& g, std::size_t sequences, std::size_t frames, double noise, double outliers,
              std::ostream& out) {
    const auto cfg = read_config(g);
    SynthConfig base = cfg.contains("synth") ? SynthConfig::from_json(cfg.at("synth")) : SynthConfig{};
    if (frames > 0) base.frames = frames;
    const fs::path dir = g.out;
    fs::create_directories(dir);
    nlohmann::json manifest = {{"sequences", nlohmann::json::array()}, {"synth", base.to_json()}};
    Rng noise_rng(g.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < sequences; ++i) {
        SynthConfig sc = base;
        sc.seed = g.seed * 1000003ULL + i;
        auto data = synth_generate(sc);
        if (noise > 0.0 || outliers > 0.0) data.obs2d = add_detector_noise(data.obs2d, noise, outliers, noise_rng);
        char name[32];
        std::snprintf(name, sizeof name, "seq%03zu", i);
        save_pose(dir / (std::string(name) + "_2d.gpsq"), data.obs2d);
        save_pose(dir / (std::string(name) + "_3d.gpsq"), data.gt3d);
        manifest["sequences"].push_back(
            {{"name", name}, {"input", std::string(name) + "_2d.gpsq"}, {"target", std::string(name) + "_3d.gpsq"}});
    }
    write_json(dir / "manifest.json", manifest);
    if (g.json) {
        out << manifest.dump(2) << "\n";
    } else {
        out << "wrote " << sequences << " sequences to " << dir.string() << "\n";
    }
    return 0;
}

int cmd_train(const Globals& g, const std::string& data_dir, std::size_t epochs, std::size_t fold, std::size_t folds,
              bool quiet, std::ostream& out) {
    auto mcfg = model_config(g);
    auto tcfg = train_config(g);
    if (epochs > 0) tcfg.max_epochs = epochs;
    const auto data = load_dataset(data_dir);
    const auto split = split_dataset(data.size(), fold, folds, g.seed);
    const auto train = to_samples(data, split.train, mcfg.use_confidence);
    const auto val = to_samples(data, split.val, mcfg.use_confidence);
    auto model = init_weights(mcfg, data.front().input.topology, mcfg.seed);
    const auto result = train_loop(model, train, val, tcfg, [&](const EpochRecord& r) {
        if (!quiet && !g.json) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.4f  val P1 %.3f mm  lr %.6g\n", r.epoch, r.train_loss,
                          r.val_mpjpe, r.lr);
            out << buf << std::flush;
        }
    });
    const fs::path dir = g.out;
    fs::create_directories(dir);
    write_file_bytes(dir / "checkpoint.gtac", result.best_checkpoint);
    write_json(dir / "history.json", history_to_json(result.history));
    const auto report = evaluate_model(model, val);
    write_json(dir / "metrics.json", report.to_json());
    emit_report(report, g, out);
    return 0;
}

int cmd_eval(const Globals& g, const std::string& pred_path, const std::string& gt_path, const std::string& checkpoint,
             const std::string& data_dir, std::ostream& out) {
    EvalReport report;
    if (!pred_path.empty() || !gt_path.empty()) {
        if (pred_path.empty() || gt_path.empty()) throw CLI::ValidationError("eval", "--pred and --gt go together");
        const auto pred = load_pose(pred_path);
        const auto gt = load_pose(gt_path);
        if (!(pred.topology == gt.topology) || pred.frames != gt.frames) {
            throw std::runtime_error("prediction and ground truth differ in topology or frame count");
        }
        const auto root = gt.topology.root_index;
        report = evaluate({{gt.action, pred.values_mm(), gt.values_mm()}}, gt.joints(), root);
    } else {
        if (checkpoint.empty() || data_dir.empty()) {
            throw CLI::ValidationError("eval", "give --pred/--gt or --checkpoint/--data");
        }
        auto model = load_checkpoint(checkpoint);
        const auto data = load_dataset(data_dir);
        std::vector<std::size_t> all(data.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        report = evaluate_model(model, to_samples(data, all, model.config().use_confidence));
    }
    if (!g.out.empty() && g.out != ".") fs::create_directories(g.out);
    write_json(fs::path(g.out) / "metrics.json", report.to_json());
    emit_report(report, g, out);
    return 0;
}

int cmd_bench(const Globals& g, const std::string& checkpoint, BenchOptions opts, std::ostream& out) {
    GtaNetConfig base = model_config(g);
    SkeletonTopology topo = SkeletonTopology::h36m17();
    if (!checkpoint.empty()) {
        auto model = load_checkpoint(checkpoint);
        base = model.config();
        topo = model.topology();
    }
    opts.seed = g.seed;
    const auto rows = run_bench(base, topo, opts);
    if (g.json) {
        out << bench_to_json(rows).dump(2) << "\n";
    } else {
        out << bench_to_text(rows);
    }
    return 0;
}

int cmd_serve(const Globals&, const std::string& checkpoint, const std::string& host, std::uint16_t port,
              std::ostream& out) {
    auto model = load_checkpoint(checkpoint);
    g_stop.store(false);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    ServerOptions opts;
    opts.host = host;
    opts.port = port;
    opts.on_listening = [&out](std::uint16_t p) { out << "listening on port " << p << "\n" << std::flush; };
    serve(model, opts, g_stop);
    return 0;
}

int cmd_client(const Globals& g, const std::string& host, std::uint16_t port, const std::string& input,
               std::ostream& out) {
    const auto seq = load_pose(input);
    const auto replies = run_client(host, port, seq);
    PoseSequence pred;
    pred.topology = seq.topology;
    pred.fps = seq.fps;
    pred.units = Units::mm;
    pred.dims = 3;
    pred.action = seq.action;
    pred.frames = replies.size();
    for (const auto& r : replies) pred.values.insert(pred.values.end(), r.values.begin(), r.values.end());
    fs::create_directories(g.out);
    save_pose(fs::path(g.out) / "stream_pred.gpsq", pred);
    if (g.json) {
        out << nlohmann::json{{"frames", replies.size()}, {"output", (fs::path(g.out) / "stream_pred.gpsq").string()}}.dump()
            << "\n";
    } else {
        out << "received " << replies.size() << " poses\n";
    }
    return 0;
}

int cmd_plot(const Globals& g, const std::string& input, const std::string& output, std::size_t panels,
             std::ostream& out) {
    PlotOptions opts;
    opts.max_panels = panels;
    const auto svg = render_svg(load_pose(input), opts);
    const fs::path path = output.empty() ? fs::path(g.out) / "plot.svg" : fs::path(output);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text_file(path, svg);
    if (!g.json) out << "wrote " << path.string() << "\n";
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& data_dir, std::size_t epochs, std::ostream& out) {
    const auto base = model_config(g);
    auto tcfg = train_config(g);
    if (epochs > 0) tcfg.max_epochs = epochs;
    const auto data = load_dataset(data_dir);
    const auto split = split_dataset(data.size(), 0, 5, g.seed);
    const auto train = to_samples(data, split.train, base.use_confidence);
    const auto val = to_samples(data, split.val, base.use_confidence);

    nlohmann::json rows = nlohmann::json::array();
    std::string text = "variant                              P1 (mm)    P2 (mm)\n";
    for (const auto& v : ablation_variants(base)) {
        auto model = init_weights(v.config, data.front().input.topology, base.seed);
        train_loop(model, train, val, tcfg);
        const auto report = evaluate_model(model, val);
        rows.push_back({{"variant", v.name}, {"mpjpe_p1_mm", report.overall.mpjpe_p1}, {"mpjpe_p2_mm", report.overall.mpjpe_p2}});
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-34s %9.2f %10.2f\n", v.name.c_str(), report.overall.mpjpe_p1,
                      report.overall.mpjpe_p2);
        text += buf;
    }
    fs::create_directories(g.out);
    write_json(fs::path(g.out) / "ablation.json", rows);
    if (g.json) {
        out << rows.dump(2) << "\n";
    } else {
        out << text;
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GTA-Net 2D-to-3D pose lifting"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--config", g.config, "JSON config with optional model/train/synth sections");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--json", g.json, "Machine-readable JSON on stdout");

    std::size_t sequences = 1, frames = 0;
    double noise = 0.0, outliers = 0.0;
    auto* synth = app.add_subcommand("synth", "Generate synthetic 2D/3D sequences");
    synth->add_option("--sequences", sequences, "Number of sequences")->check(CLI::PositiveNumber);
    synth->add_option("--frames", frames, "Frames per sequence");
    synth->add_option("--noise", noise, "2D detector jitter sigma (normalized units)");
    synth->add_option("--outliers", outliers, "2D outlier rate");

    std::string data_dir;
    std::size_t epochs = 0, fold = 0, folds = 5;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "Train on a dataset directory");
    train->add_option("--data", data_dir, "Dataset directory with manifest.json")->required();
    train->add_option("--epochs", epochs, "Override max_epochs");
    train->add_option("--fold", fold, "Validation fold index");
    train->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
    train->add_flag("--quiet", quiet, "No per-epoch log");

    std::string pred, gt, checkpoint;
    auto* eval = app.add_subcommand("eval", "Evaluate predictions or a checkpoint");
    eval->add_option("--pred", pred, "Predicted 3D sequence");
    eval->add_option("--gt", gt, "Ground-truth 3D sequence");
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
    eval->add_option("--data", data_dir, "Dataset directory");

    BenchOptions bench_opts;
    auto* bench = app.add_subcommand("bench", "Frame-rate benchmark");
    bench->add_option("--checkpoint", checkpoint, "Model checkpoint (default: config or built-in model)");
    bench->add_option("--frames", bench_opts.frames, "Frames per run")->check(CLI::PositiveNumber);
    bench->add_option("--iters", bench_opts.iters, "Timed iterations")->check(CLI::PositiveNumber);
    bench->add_option("--warmup", bench_opts.warmup, "Untimed warmup iterations");

    std::string host = "127.0.0.1";
    std::uint16_t port = 7878;
    auto* serve_cmd = app.add_subcommand("serve", "Streaming inference server");
    serve_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    serve_cmd->add_option("--host", host, "Listen address");
    serve_cmd->add_option("--port", port, "Listen port");

    std::string input;
    auto* client = app.add_subcommand("client", "Stream a 2D sequence to a server");
    client->add_option("--host", host, "Server address");
    client->add_option("--port", port, "Server port");
    client->add_option("--input", input, "Normalized 2D sequence")->required();

    std::string output;
    std::size_t panels = 8;
    auto* plot = app.add_subcommand("plot", "Render a sequence as SVG");
    plot->add_option("--input", input, "2D or 3D sequence")->required();
    plot->add_option("--svg", output, "Output SVG path (default <out>/plot.svg)");
    plot->add_option("--panels", panels, "Maximum number of frame panels")->check(CLI::PositiveNumber);

    auto* ablate = app.add_subcommand("ablate", "Train the full model and its four ablations");
    ablate->add_option("--data", data_dir, "Dataset directory")->required();
    ablate->add_option("--epochs", epochs, "Override max_epochs");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(g, sequences, frames, noise, outliers, out);
        if (train->parsed()) return cmd_train(g, data_dir, epochs, fold, folds, quiet, out);
        if (eval->parsed()) return cmd_eval(g, pred, gt, checkpoint, data_dir, out);
        if (bench->parsed()) return cmd_bench(g, checkpoint, bench_opts, out);
        if (serve_cmd->parsed()) return cmd_serve(g, checkpoint, host, port, out);
        if (client->parsed()) return cmd_client(g, host, port, input, out);
        if (plot->parsed()) return cmd_plot(g, input, output, panels, out);
        if (ablate->parsed()) return cmd_ablate(g, data_dir, epochs, out);
    } catch (const CLI::ValidationError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace gtanet
