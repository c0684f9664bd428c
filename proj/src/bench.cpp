#include "gtanet/bench.hpp"

#include "gtanet/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace gtanet {

namespace {

template <typename Fn>
double median_seconds(std::size_t warmup, std::size_t iters, Fn&& fn) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> times;
    for (std::size_t i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(const GtaNetConfig& base, const SkeletonTopology& topology, const BenchOptions& options) {
    if (options.frames == 0 || options.iters == 0) throw std::invalid_argument("bench: frames and iters must be positive");
    SynthConfig sc;
    sc.seed = options.seed;
    sc.frames = options.frames;
    sc.topology = topology;
    const auto data = synth_generate(sc);
    const std::size_t j = topology.joint_count();

    std::vector<BenchRow> layer_rows;
    std::vector<BenchRow> single_rows;
    for (std::size_t rf : options.receptive_fields) {
        GtaNetConfig cfg = base;
        cfg.target_receptive_field = rf;
        cfg.tcn_dilations.clear();
        cfg.attention_window = 0;
        auto model = init_weights(cfg, topology, options.seed);
        const std::size_t din = cfg.input_channels();
        std::vector<double> values;
        for (std::size_t i = 0; i < options.frames * j; ++i) {
            values.push_back(data.obs2d.values[2 * i]);
            values.push_back(data.obs2d.values[2 * i + 1]);
            if (din == 3) values.push_back(1.0);
        }
        const Tensor input = Tensor::from({options.frames, j, din}, values);
        Rng rng(0);

        const double whole = median_seconds(options.warmup, options.iters, [&] {
            forward(model, input, Mode::eval, rng);
        });
        layer_rows.push_back({"layer-by-layer", rf, options.frames, whole, static_cast<double>(options.frames) / whole});

        const std::size_t row = j * din;
        const double sliding = median_seconds(options.warmup, options.iters, [&] {
            for (std::size_t t = 0; t < options.frames; ++t) {
                const std::size_t begin = t + 1 >= rf ? t + 1 - rf : 0;
                std::vector<double> window(values.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                           values.begin() + static_cast<std::ptrdiff_t>((t + 1) * row));
                forward(model, Tensor::from({t + 1 - begin, j, din}, std::move(window)), Mode::eval, rng);
            }
        });
        single_rows.push_back({"single-frame", rf, options.frames, sliding, static_cast<double>(options.frames) / sliding});
    }
    layer_rows.insert(layer_rows.end(), single_rows.begin(), single_rows.end());
    return layer_rows;
}

nlohmann::json bench_to_json(const std::vector<BenchRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"mode", r.mode},
                       {"receptive_field", r.receptive_field},
                       {"frames", r.frames},
                       {"wall_seconds", r.wall_seconds},
                       {"fps", r.fps}});
    }
    return out;
}

std::string bench_to_text(const std::vector<BenchRow>& rows) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-15s %6s %8s %12s %12s\n", "mode", "RF", "frames", "seconds", "fps");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-15s %6zu %8zu %12.4f %12.1f\n", r.mode.c_str(), r.receptive_field, r.frames,
                      r.wall_seconds, r.fps);
        out += buf;
    }
    return out;
}

}  // namespace gtanet
