#pragma once

#include "gtanet/model.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace gtanet {

struct BenchOptions {
    std::vector<std::size_t> receptive_fields{32, 64, 128};
    std::size_t frames = 128;
    std::size_t warmup = 1;
    std::size_t iters = 3;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::string mode;  // "layer-by-layer" or "single-frame"
    std::size_t receptive_field = 0;
    std::size_t frames = 0;
    double wall_seconds = 0.0;  // median over timed iterations
    double fps = 0.0;           // frames / wall_seconds
};

// Layer-by-layer: one forward over the whole sequence. Single-frame: one
// forward per output frame over the last `receptive_field` frames. Each RF
// gets a fresh model built from `base` with that target and default dilations.
std::vector<BenchRow> run_bench(const GtaNetConfig& base, const SkeletonTopology& topology, const BenchOptions& options);

nlohmann::json bench_to_json(const std::vector<BenchRow>& rows);
std::string bench_to_text(const std::vector<BenchRow>& rows);

}  // namespace gtanet
