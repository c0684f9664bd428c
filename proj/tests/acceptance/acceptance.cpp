// Acceptance run: one PASS/FAIL line per criterion. `--only 3 --only 7`
// restricts the run; the exit code is non-zero if any selected criterion fails.
#include "gtanet/bench.hpp"
#include "gtanet/cli.hpp"
#include "gtanet/gcn.hpp"
#include "gtanet/metrics.hpp"
#include "gtanet/model.hpp"
#include "gtanet/stream.hpp"
#include "gtanet/synth.hpp"
#include "gtanet/temporal.hpp"
#include "gtanet/trainer.hpp"
#include "gtanet/wire.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace gtanet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

SkeletonTopology toy5() {
    SkeletonTopology t;
    t.name = "toy5";
    t.joint_names = {"root", "l1", "l2", "r1", "r2"};
    t.parent = {-1, 0, 1, 0, 3};
    t.left_right_pairs = {{1, 3}, {2, 4}};
    return t;
}

GtaNetConfig toy_config() {
    GtaNetConfig c;
    c.gcn_layers = 2;
    c.gcn_channels = 8;
    c.heads = 2;
    c.kernel = 3;
    c.target_receptive_field = 5;
    return c;
}

AttentionParams random_attention(std::size_t c, std::size_t heads, Rng& rng, bool grad = false) {
    AttentionParams p;
    p.w_h = random_tensor({c, c}, rng, -0.5, 0.5, grad);
    p.b_h = random_tensor({c}, rng, -0.1, 0.1, grad);
    p.w_q = random_tensor({c, c}, rng, -0.5, 0.5, grad);
    p.w_k = random_tensor({c, c}, rng, -0.5, 0.5, grad);
    p.heads = heads;
    return p;
}

// ---- 1. Gradient integrity ----------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::vector<std::pair<std::string, double>> errors;

    // Reduces an op output to a scalar with fixed random weights so every
    // output entry contributes a distinct gradient.
    auto reduce = [](const Tensor& y) {
        Rng w(99);
        return sum(mul(y, random_tensor(y.shape(), w)));
    };
    auto check = [&](const std::string& name, std::vector<Tensor> inputs, const std::function<Tensor()>& fn) {
        errors.emplace_back(name, grad_check([&] { return reduce(fn()); }, inputs));
    };

    {
        auto a = random_tensor({3, 4}, rng, -1, 1, true), b = random_tensor({4, 2}, rng, -1, 1, true);
        check("matmul", {a, b}, [=] { return matmul(a, b); });
    }
    {
        auto x = random_tensor({2, 3, 4}, rng, -1, 1, true), w = random_tensor({4, 5}, rng, -1, 1, true);
        check("linear", {x, w}, [=] { return linear(x, w); });
    }
    {
        auto x = random_tensor({3, 4}, rng, -1, 1, true), b = random_tensor({4}, rng, -1, 1, true);
        check("add_bias", {x, b}, [=] { return add_bias(x, b); });
    }
    {
        auto a = random_tensor({3, 4}, rng, -1, 1, true), b = random_tensor({3, 4}, rng, -1, 1, true);
        check("add", {a, b}, [=] { return add(a, b); });
        check("sub", {a, b}, [=] { return sub(a, b); });
        check("mul", {a, b}, [=] { return mul(a, b); });
        check("scale", {a}, [=] { return scale(a, -2.5); });
        check("relu", {a}, [=] { return relu(a); });
        check("reshape", {a}, [=] { return reshape(a, {2, 6}); });
        check("concat_last", {a, b}, [=] { return concat_last(a, b); });
        check("softmax_rows", {a}, [=] { return softmax_rows(a); });
        check("sum", {a}, [=] { return scale(sum(a), 1.0); });
    }
    {
        auto x = random_tensor({2, 3, 4}, rng, -1, 1, true);
        check("sum_rows", {x}, [=] { return sum_rows(x); });
    }
    {
        Matrix m(4, 5);
        for (auto& v : m.data) v = rng.uniform(-1, 1);
        auto x = random_tensor({3, 5, 2}, rng, -1, 1, true);
        check("mix_nodes", {x}, [=] { return mix_nodes(m, x); });
    }
    {
        auto x = random_tensor({7, 3}, rng, -1, 1, true), w = random_tensor({3, 3, 2}, rng, -1, 1, true);
        check("causal_dilated_conv1d", {x, w}, [=] { return causal_dilated_conv1d(x, w, 2); });
    }
    {
        auto s = random_tensor({2, 5, 5}, rng, -2, 2, true);
        check("masked_softmax", {s}, [=] { return masked_softmax(s, {true, 3}); });
    }
    {
        auto q = random_tensor({2, 5, 4}, rng, -1, 1, true), k = random_tensor({2, 5, 4}, rng, -1, 1, true);
        check("multihead_scores", {q, k}, [=] { return multihead_scores(q, k, 2, {true, 0}); });
        auto alpha = random_tensor({2, 2, 5, 5}, rng, 0, 1, true), v = random_tensor({2, 5, 4}, rng, -1, 1, true);
        check("multihead_mix", {alpha, v}, [=] { return multihead_mix(alpha, v, 2); });
    }
    {
        auto x = random_tensor({6, 4}, rng, -1, 1, true);
        auto g = random_tensor({4}, rng, 0.5, 1.5, true), b = random_tensor({4}, rng, -0.5, 0.5, true);
        check("batchnorm1d train", {x, g, b}, [=] {
            BatchNormStats st;
            return batchnorm1d(x, g, b, st, Mode::train);
        });
        BatchNormStats fixed{{0.1, -0.2, 0.3, 0.0}, {1.5, 0.5, 2.0, 1.0}, true};
        check("batchnorm1d eval", {x, g, b}, [=] {
            auto st = fixed;
            return batchnorm1d(x, g, b, st, Mode::eval);
        });
        check("dropout", {x}, [=] {
            Rng r(5);
            return dropout(x, 0.4, Mode::train, r);
        });
    }
    {
        auto p = random_tensor({4, 3}, rng, -1, 1, true), t = random_tensor({4, 3}, rng, -1, 1);
        errors.emplace_back("mse_loss", grad_check([=] { return mse_loss(p, t); }, std::span(&p, 1)));
        const std::vector<std::size_t> labels{0, 2, 1, 2};
        errors.emplace_back("cross_entropy_loss",
                            grad_check([=] { return cross_entropy_loss(p, labels); }, std::span(&p, 1)));
    }

    const auto topo = toy5();
    const auto joint_graph = build_joint_adjacency(topo);
    const auto bone_graph = build_bone_graph(topo);
    {
        auto h = random_tensor({5, 3}, rng, -1, 1, true), w = random_tensor({3, 4}, rng, -1, 1, true);
        check("gcn_layer", {h, w}, [=] { return gcn_layer(h, joint_graph.normalized, {w, Activation::relu}); });
        auto x = random_tensor({6, 5, 2}, rng, 0, 1, true);
        check("bone_sequence", {x}, [=] { return bone_sequence(x, topo); });
        GcnStreamParams stream;
        stream.weights = {random_tensor({2, 4}, rng, -1, 1, true), random_tensor({4, 4}, rng, -1, 1, true)};
        for (int l = 0; l < 2; ++l) {
            stream.norms.push_back({random_tensor({4}, rng, 0.5, 1.5, true), random_tensor({4}, rng, -0.5, 0.5, true), {}});
        }
        std::vector<Tensor> in{x};
        for (auto& w2 : stream.weights) in.push_back(w2);
        check("bone_stream", in, [=]() mutable { return bone_stream(x, topo, bone_graph, stream, Mode::train); });
        auto jout = random_tensor({6, 5, 4}, rng, -1, 1, true), bout = random_tensor({6, 4, 4}, rng, -1, 1, true);
        auto wf = random_tensor({8, 4}, rng, -1, 1, true);
        check("fuse_streams", {jout, bout, wf}, [=] { return fuse_streams(jout, bout, topo, wf); });
        NodeProjection proj{random_tensor({2, 4}, rng, -1, 1, true), random_tensor({4}, rng, -1, 1, true)};
        check("project_nodes", {x, proj.weight, proj.bias}, [=] { return project_nodes(x, proj); });
    }
    {
        auto att = random_attention(4, 2, rng, true);
        std::vector<Tensor> params{att.w_h, att.b_h, att.w_q, att.w_k};
        auto seq = random_tensor({6, 4}, rng, -1, 1, true);
        auto frames = random_tensor({3, 5, 4}, rng, -1, 1, true);
        auto with = [&](Tensor x) {
            auto v = params;
            v.push_back(x);
            return v;
        };
        check("hidden_projection", with(seq), [=] { return hidden_projection(seq, att); });
        check("attention_aggregate", with(frames), [=] { return attention_aggregate(frames, att, {}); });
        check("temporal_attention", with(seq), [=] { return temporal_attention(seq, att, 3); });
        check("spatial_attention", with(frames), [=] { return spatial_attention(frames, att); });
        ReadoutParams ro{random_tensor({4, 3}, rng, -1, 1, true), random_tensor({3}, rng, -1, 1, true)};
        check("hierarchical_readout", {seq, ro.w_z, ro.b_z}, [=] { return hierarchical_readout(seq, ro); });

        TcnBlockParams block;
        block.conv_weight = random_tensor({3, 4, 4}, rng, -1, 1, true);
        block.dilation = 2;
        block.norm = {random_tensor({4}, rng, 0.5, 1.5, true), random_tensor({4}, rng, -0.5, 0.5, true), {}};
        block.dropout_rate = 0.2;
        std::vector<Tensor> bin{seq, block.conv_weight, block.norm.gamma, block.norm.beta};
        check("tcn_block", bin, [=]() mutable {
            Rng r(3);
            return tcn_block(seq, block, Mode::train, r);
        });
        bin.insert(bin.end(), params.begin(), params.end());
        check("attention_tcn_block", bin, [=]() mutable {
            Rng r(3);
            return attention_tcn_block(seq, block, att, 4, Mode::train, r);
        });
    }

    // Full model with dropout active under a fixed mask, every parameter entry.
    {
        auto cfg = toy_config();
        cfg.dropout = 0.3;
        auto model = init_weights(cfg, topo, 5);
        const auto x = random_tensor({6, 5, 2}, rng, 0.2, 0.8);
        const auto target = random_tensor({6, 5, 3}, rng, -50, 50);
        std::vector<Tensor> params;
        for (auto& [name, t] : model.parameters()) params.push_back(t);
        errors.emplace_back("GTA-Net forward + MSE", grad_check(
                                                         [&] {
                                                             Rng r(0);
                                                             return mse_loss(forward(model, x, Mode::train, r), target);
                                                         },
                                                         params));
    }

    const auto worst = *std::max_element(errors.begin(), errors.end(),
                                         [](const auto& a, const auto& b) { return a.second < b.second; });
    const double elapsed = seconds_since(t0);
    return {worst.second < 1e-4 && elapsed < 60.0,
            fmt("%zu checks, worst %s rel err %.2e (< 1e-4), %.1f s (< 60 s)", errors.size(), worst.first.c_str(),
                worst.second, elapsed)};
}

// ---- 2. Attention normalization ---------------------------------------------------

Outcome attention_normalization() {
    double worst_sum = 0.0, min_entry = 0.0;
    bool masked_zero = true;
    std::size_t rows = 0;
    auto scan = [&](const Tensor& w, const AttentionMask& mask) {
        const std::size_t n = w.size(w.dim() - 1);
        const auto d = w.data();
        for (std::size_t r = 0; r < w.numel() / n; ++r) {
            const std::size_t i = r % n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double a = d[r * n + j];
                min_entry = std::min(min_entry, a);
                if (!mask.allows(i, j) && a != 0.0) masked_zero = false;
                s += a;
            }
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
            ++rows;
        }
    };
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t heads = 1 + rng.uniform_index(4);
        const std::size_t c = heads * (1 + rng.uniform_index(4));
        const std::size_t b = 1 + rng.uniform_index(3), n = 2 + rng.uniform_index(20);
        // Magnitudes up to 1e2 push the logits far into saturation.
        const double amp = std::pow(10.0, rng.uniform(-2.0, 2.0));
        const auto att = random_attention(c, heads, rng);
        const auto h = random_tensor({b, n, c}, rng, -amp, amp);
        const AttentionMask mask{rng.bernoulli(0.5), rng.uniform_index(n + 1)};
        scan(attention_weights(h, att, mask), mask);
    }
    // Weights produced inside the model on a random sequence.
    GtaNetConfig cfg = toy_config();
    cfg.attention_window = 3;
    auto model = init_weights(cfg, toy5(), 4);
    Rng rng(77);
    ForwardTrace trace;
    forward(model, random_tensor({12, 5, 2}, rng, 0, 1), Mode::eval, rng, &trace);
    for (const auto& w : trace.spatial_weights) scan(w, {});
    for (const auto& w : trace.temporal_weights) scan(w, {true, cfg.temporal_window()});

    return {worst_sum <= 1e-12 && min_entry >= 0.0 && masked_zero,
            fmt("%zu rows, max |sum - 1| %.1e (<= 1e-12), min weight %.1e, masked entries zero: %s", rows, worst_sum,
                min_entry, masked_zero ? "yes" : "no")};
}

// ---- 3. Causality ---------------------------------------------------------------

Outcome causality() {
    GtaNetConfig cfg;
    cfg.gcn_layers = 2;
    cfg.gcn_channels = 16;
    cfg.heads = 4;
    cfg.target_receptive_field = 16;
    const auto topo = SkeletonTopology::h36m17();
    auto model = init_weights(cfg, topo, 11);
    // Non-trivial running statistics.
    Rng warm(12);
    for (int i = 0; i < 3; ++i) forward(model, random_tensor({40, 17, 2}, warm, 0, 1), Mode::train, warm);

    std::size_t offline_bad = 0, streamed_bad = 0, compared = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(2000 + seed);
        const std::size_t frames = 20 + rng.uniform_index(30);
        const std::size_t t = rng.uniform_index(frames - 1);
        std::vector<double> a(frames * 17 * 2);
        for (auto& v : a) v = rng.uniform(0, 1);
        auto b = a;
        for (std::size_t i = (t + 1) * 34; i < b.size(); ++i) b[i] = rng.uniform(-1, 2);

        Rng r(0);
        const auto ya = forward(model, Tensor::from({frames, 17, 2}, a), Mode::eval, r);
        const auto yb = forward(model, Tensor::from({frames, 17, 2}, b), Mode::eval, r);
        StreamSession sa(model), sb(model);
        for (std::size_t f = 0; f < frames; ++f) {
            const auto pa = sa.push(std::span(a).subspan(f * 34, 34));
            const auto pb = sb.push(std::span(b).subspan(f * 34, 34));
            if (f > t) continue;
            for (std::size_t k = 0; k < 51; ++k) {
                if (ya.data()[f * 51 + k] != yb.data()[f * 51 + k]) ++offline_bad;
                if (pa[k] != pb[k]) ++streamed_bad;
                ++compared;
            }
        }
    }
    return {offline_bad == 0 && streamed_bad == 0 && compared > 0,
            fmt("50 sequences, %zu values at frames <= t; differing offline %zu, streamed %zu", compared, offline_bad,
                streamed_bad)};
}

// ---- 4. Metric invariances --------------------------------------------------------

using Vec3 = std::array<double, 3>;

Mat3 random_rotation(Rng& rng) {
    // Unit quaternion from four normals.
    double q[4];
    double n = 0.0;
    for (auto& v : q) {
        v = rng.normal(0, 1);
        n += v * v;
    }
    n = std::sqrt(n);
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

std::vector<double> transform(const std::vector<double>& pts, const Mat3& r, const Vec3& t) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); i += 3) {
        for (int a = 0; a < 3; ++a) {
            out[i + a] = t[a];
            for (int b = 0; b < 3; ++b) out[i + a] += r[a][b] * pts[i + b];
        }
    }
    return out;
}

Mat3 euler_zyx(double a, double b, double c) {
    const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
                 sc = std::sin(c);
    return {{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
             {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
             {-sb, cb * sc, cb * cc}}};
}

// Minimum residual over an Euler grid with step h; the optimal translation for a
// fixed rotation is the centroid difference, so only rotations are searched.
double grid_residual(const std::vector<double>& p, const std::vector<double>& g, std::size_t steps) {
    const std::size_t j = p.size() / 3;
    std::vector<double> pc = p, gc = g;
    for (int a = 0; a < 3; ++a) {
        double mp = 0, mg = 0;
        for (std::size_t i = 0; i < j; ++i) {
            mp += p[3 * i + a];
            mg += g[3 * i + a];
        }
        for (std::size_t i = 0; i < j; ++i) {
            pc[3 * i + a] -= mp / j;
            gc[3 * i + a] -= mg / j;
        }
    }
    const double h = 2 * std::numbers::pi / static_cast<double>(steps);
    const std::size_t beta_steps = steps / 2;
    double best = INFINITY;
    for (std::size_t ia = 0; ia < steps; ++ia)
        for (std::size_t ib = 0; ib <= beta_steps; ++ib)
            for (std::size_t ic = 0; ic < steps; ++ic) {
                const auto r = euler_zyx(ia * h, -std::numbers::pi / 2 + ib * h, ic * h);
                double res = 0.0;
                for (std::size_t i = 0; i < j; ++i) {
                    for (int a = 0; a < 3; ++a) {
                        double v = -gc[3 * i + a];
                        for (int b = 0; b < 3; ++b) v += r[a][b] * pc[3 * i + b];
                        res += v * v;
                    }
                }
                best = std::min(best, res);
            }
    return best;
}

Outcome metric_invariances() {
    const auto topo = SkeletonTopology::h36m17();
    SynthConfig sc;
    sc.seed = 3;
    sc.frames = 100;
    const auto gt = synth_generate(sc).gt3d.values_mm();
    const std::size_t j = 17, frame = j * 3;

    double p1_shift = 0.0, p2_rigid = 0.0;
    std::size_t order_violations = 0;
    Rng rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 t{rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), rng.uniform(-2000, 2000)};
        p1_shift = std::max(p1_shift, mpjpe_protocol1(transform(gt, euler_zyx(0, 0, 0), t), gt, j, topo.root_index));

        std::vector<double> rigid;
        for (std::size_t f = 0; f < 100; ++f) {
            const std::vector<double> pose(gt.begin() + f * frame, gt.begin() + (f + 1) * frame);
            const auto moved = transform(pose, random_rotation(rng), t);
            rigid.insert(rigid.end(), moved.begin(), moved.end());
        }
        p2_rigid = std::max(p2_rigid, mpjpe_protocol2(rigid, gt, j));

        const std::size_t f = rng.uniform_index(100);
        const std::vector<double> pose(gt.begin() + f * frame, gt.begin() + (f + 1) * frame);
        const double sigma = rng.uniform(1, 80);
        auto pred = transform(pose, euler_zyx(rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2)), t);
        for (auto& v : pred) v += rng.normal(0, sigma);
        if (mpjpe_protocol2(pred, pose, j) > mpjpe_protocol1(pred, pose, j, topo.root_index)) ++order_violations;
    }

    // Rotation grid with 5 degree steps; the SVD answer must be no worse than
    // the grid and no better than the grid's covering bound allows.
    const std::size_t steps = 72;
    const double h = 2 * std::numbers::pi / steps;
    std::size_t grid_violations = 0;
    double worst_gap = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial) % 4;
        std::vector<double> p(3 * n);
        for (auto& v : p) v = rng.uniform(-300, 300);
        auto g = transform(p, random_rotation(rng), {rng.uniform(-50, 50), 0, rng.uniform(-50, 50)});
        const double noise = trial < 4 ? 20.0 : 200.0;
        for (auto& v : g) v += rng.normal(0, noise);
        const double svd = procrustes_align(p, g).residual;
        const double grid = grid_residual(p, g, steps);
        double spread = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            double m = 0;
            for (std::size_t i = 0; i < n; ++i) m += p[3 * i + a] / n;
            for (std::size_t i = 0; i < n; ++i) spread += (p[3 * i + a] - m) * (p[3 * i + a] - m);
        }
        // Each Euler angle lies within h/2 of the grid, so the nearest grid
        // rotation is within 1.5 h and moves the centred points by <= 1.5 h |P|.
        const double bound = 1.5 * h * std::sqrt(spread);
        const double gap = std::sqrt(grid) - std::sqrt(svd);
        worst_gap = std::max(worst_gap, gap / bound);
        if (svd > grid * (1 + 1e-12) + 1e-9 || gap > bound) ++grid_violations;
    }

    const bool pass = p1_shift <= 1e-9 && p2_rigid <= 1e-6 && order_violations == 0 && grid_violations == 0;
    return {pass, fmt("P1 translated %.1e (<= 1e-9), P2 rigid %.1e (<= 1e-6), P2 > P1 in %zu/100, grid oracle "
                      "violations %zu/8 (worst gap %.2f of bound)",
                      p1_shift, p2_rigid, order_violations, grid_violations, worst_gap)};
}

// ---- 5. Graph correctness --------------------------------------------------------------

Matrix adjacency_of(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    Matrix a(n, n);
    for (auto [u, v] : edges) a(u, v) = a(v, u) = 1.0;
    return a;
}

Outcome graph_correctness() {
    // Entry (i, j) of the expected operator is 1/sqrt(k) with k = (d_i + 1)(d_j + 1)
    // written out by hand; 0 means no edge.
    struct Case {
        std::string name;
        Matrix adjacency;
        std::vector<std::vector<int>> k;
    };
    const std::vector<Case> cases = {
        {"chain2", adjacency_of(2, {{0, 1}}), {{4, 4}, {4, 4}}},
        {"chain3", adjacency_of(3, {{0, 1}, {1, 2}}), {{4, 6, 0}, {6, 9, 6}, {0, 6, 4}}},
        {"chain4", adjacency_of(4, {{0, 1}, {1, 2}, {2, 3}}), {{4, 6, 0, 0}, {6, 9, 9, 0}, {0, 9, 9, 6}, {0, 0, 6, 4}}},
        {"chain5",
         adjacency_of(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}),
         {{4, 6, 0, 0, 0}, {6, 9, 9, 0, 0}, {0, 9, 9, 9, 0}, {0, 0, 9, 9, 6}, {0, 0, 0, 6, 4}}},
        {"star3", adjacency_of(3, {{0, 1}, {0, 2}}), {{9, 6, 6}, {6, 4, 0}, {6, 0, 4}}},
        {"star4", adjacency_of(4, {{0, 1}, {0, 2}, {0, 3}}), {{16, 8, 8, 8}, {8, 4, 0, 0}, {8, 0, 4, 0}, {8, 0, 0, 4}}},
        {"star5",
         adjacency_of(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}),
         {{25, 10, 10, 10, 10}, {10, 4, 0, 0, 0}, {10, 0, 4, 0, 0}, {10, 0, 0, 4, 0}, {10, 0, 0, 0, 4}}},
        {"complete3", adjacency_of(3, {{0, 1}, {0, 2}, {1, 2}}), {{9, 9, 9}, {9, 9, 9}, {9, 9, 9}}},
        {"complete4",
         adjacency_of(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}),
         {{16, 16, 16, 16}, {16, 16, 16, 16}, {16, 16, 16, 16}, {16, 16, 16, 16}}},
        {"complete5",
         adjacency_of(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}}),
         std::vector<std::vector<int>>(5, std::vector<int>(5, 25))},
    };
    std::size_t mismatches = 0, entries = 0;
    for (const auto& c : cases) {
        const auto op = make_graph_operator(c.adjacency);
        const auto direct = normalize_adjacency(add_self_loops(c.adjacency));
        for (std::size_t i = 0; i < c.adjacency.rows; ++i)
            for (std::size_t jj = 0; jj < c.adjacency.rows; ++jj) {
                const int k = c.k[i][jj];
                const double expected = k == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(k));
                if (op.normalized(i, jj) != expected || direct(i, jj) != expected) ++mismatches;
                ++entries;
            }
    }

    // Permutation equivariance of a 3-layer GCN on random 8-node graphs.
    double worst = 0.0;
    Rng rng(505);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a(8, 8);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t jj = 0; jj < i; ++jj) a(i, jj) = a(jj, i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
        std::vector<std::size_t> perm(8);
        for (std::size_t i = 0; i < 8; ++i) perm[i] = i;
        rng.shuffle(perm.begin(), perm.end());
        Matrix pa(8, 8);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t jj = 0; jj < 8; ++jj) pa(i, jj) = a(perm[i], perm[jj]);
        const auto h = random_tensor({8, 3}, rng);
        std::vector<double> ph(24);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t c = 0; c < 3; ++c) ph[i * 3 + c] = h.data()[perm[i] * 3 + c];
        const std::vector<Tensor> ws{random_tensor({3, 6}, rng), random_tensor({6, 6}, rng), random_tensor({6, 4}, rng)};
        auto run = [&](Tensor x, const Matrix& adj) {
            const auto a_hat = make_graph_operator(adj).normalized;
            for (std::size_t l = 0; l < ws.size(); ++l) {
                x = gcn_layer(x, a_hat, {ws[l], l + 1 < ws.size() ? Activation::relu : Activation::identity});
            }
            return x;
        };
        const auto y = run(h, a);
        const auto py = run(Tensor::from({8, 3}, ph), pa);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t c = 0; c < 4; ++c)
                worst = std::max(worst, std::abs(py.data()[i * 4 + c] - y.data()[perm[i] * 4 + c]));
    }
    return {mismatches == 0 && worst <= 1e-9,
            fmt("%zu hand-oracle entries over %zu graphs, %zu mismatches; permutation error %.1e (<= 1e-9)", entries,
                cases.size(), mismatches, worst)};
}

// ---- Shared synthetic benchmark (criteria 6 and 8) -------------------------------------

struct Benchmark {
    Sample sample;
    SkeletonTopology topology;
    double mean_bone = 0.0;
};

Benchmark overfit_benchmark() {
    SynthConfig sc;
    sc.seed = 1;
    sc.frames = 200;
    const auto data = synth_generate(sc);
    return {make_sample(data.obs2d, data.gt3d), sc.topology, mean_bone_length(sc.topology, default_rest_offsets(sc.topology))};
}

GtaNetConfig reduced_config() {
    GtaNetConfig c;
    c.gcn_channels = 32;
    c.target_receptive_field = 32;
    c.dropout = 0.0;
    return c;
}

// Memorizing one sequence: no augmentation, no dropout, constant learning rate
// and exact batch-norm statistics before each evaluation.
TrainConfig overfit_train_config(std::size_t epochs, std::uint64_t seed) {
    TrainConfig t;
    t.lr = 5e-3;
    t.max_epochs = epochs;
    t.plateau_patience = epochs + 1;
    t.early_stop_patience = epochs + 1;
    t.augment.rotate = t.augment.flip = t.augment.noise = false;
    t.precise_bn = true;
    t.seed = seed;
    return t;
}

// ---- 6. Synthetic overfit ----------------------------------------------------------------

Outcome synthetic_overfit() {
    const auto t0 = Clock::now();
    const auto bench = overfit_benchmark();
    const double threshold = 0.02 * bench.mean_bone;
    auto model = init_weights(reduced_config(), bench.topology, 7);
    std::size_t first_below = 0;
    const auto result = train_loop(model, {bench.sample}, {bench.sample}, overfit_train_config(500, 0),
                                   [&](const EpochRecord& e) {
                                       if (first_below == 0 && e.val_mpjpe < threshold) first_below = e.epoch;
                                   });
    const double final_mpjpe = evaluate_mpjpe(model, {bench.sample});
    const double elapsed = seconds_since(t0);
    return {final_mpjpe < threshold && elapsed < 600.0,
            fmt("training P1 %.3f mm (< %.2f mm = 2%% of mean bone %.1f mm), first below at epoch %zu of %zu, "
                "%.0f s (< 600 s)",
                final_mpjpe, threshold, bench.mean_bone, first_below, result.history.size(), elapsed)};
}

// ---- 7. Generalization sanity --------------------------------------------------------------

Outcome generalization() {
    const std::size_t n = 10, k = 5;
    std::vector<Sample> samples;
    SkeletonTopology topo;
    for (std::size_t i = 0; i < n; ++i) {
        SynthConfig sc;
        sc.seed = 700 + i;
        // Long enough to cover the slowest joint oscillations (0.1 Hz) more than once.
        sc.frames = 300;
        const auto data = synth_generate(sc);
        samples.push_back(make_sample(data.obs2d, data.gt3d));
        topo = sc.topology;
    }
    const auto folds = kfold_split(n, k, 7);

    std::multiset<std::size_t> seen;
    bool partition = folds.size() == k;
    for (const auto& f : folds) {
        std::set<std::size_t> both(f.train.begin(), f.train.end());
        for (auto v : f.val) partition = partition && both.insert(v).second;
        partition = partition && both.size() == n && f.train.size() + f.val.size() == n;
        seen.insert(f.val.begin(), f.val.end());
    }
    partition = partition && seen.size() == n && std::set<std::size_t>(seen.begin(), seen.end()).size() == n;

    const std::size_t joints = topo.joint_count(), root = topo.root_index;
    std::string detail;
    bool all_beat = true;
    double worst_gain = INFINITY;
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
        std::vector<Sample> train, val;
        for (auto i : folds[fi].train) train.push_back(samples[i]);
        for (auto i : folds[fi].val) val.push_back(samples[i]);

        // Constant baseline: mean root-relative training pose.
        std::vector<double> mean(joints * 3, 0.0);
        std::size_t count = 0;
        for (const auto& s : train) {
            const auto rr = s.root_relative_target(root);
            for (std::size_t i = 0; i < rr.size(); ++i) mean[i % mean.size()] += rr[i];
            count += s.frames;
        }
        for (auto& v : mean) v /= static_cast<double>(count);
        double base_sum = 0.0;
        std::size_t val_frames = 0;
        for (const auto& s : val) {
            std::vector<double> pred;
            for (std::size_t t = 0; t < s.frames; ++t) pred.insert(pred.end(), mean.begin(), mean.end());
            base_sum += mpjpe_protocol1(pred, s.target, joints, root) * static_cast<double>(s.frames);
            val_frames += s.frames;
        }
        const double baseline = base_sum / static_cast<double>(val_frames);

        // Standard recipe (augmentation, dropout 0.3, plateau halving, early
        // stop) on 100-frame clips of the reduced model.
        auto cfg = reduced_config();
        cfg.dropout = 0.3;
        auto model = init_weights(cfg, topo, 70 + fi);
        TrainConfig tc;
        tc.lr = 3e-3;
        tc.batch_size = 1;
        tc.max_epochs = 60;
        tc.clip_frames = 100;
        tc.clip_stride = 50;
        tc.precise_bn = true;
        tc.seed = fi;
        const auto result = train_loop(model, train, val, tc);
        const double gain = 1.0 - result.best_val_mpjpe / baseline;
        worst_gain = std::min(worst_gain, gain);
        all_beat = all_beat && gain >= 0.30;
        detail += fmt("%s%.1f/%.1f", fi ? ", " : "", result.best_val_mpjpe, baseline);
    }
    return {partition && all_beat, fmt("folds exact partition: %s; val/baseline mm per fold: %s; worst improvement "
                                       "%.0f%% (>= 30%%)",
                                       partition ? "yes" : "no", detail.c_str(), 100.0 * worst_gain)};
}

// ---- 8. Ablation direction ------------------------------------------------------------------

Outcome ablation_direction() {
    const auto bench = overfit_benchmark();
    const std::size_t epochs = 500;
    bool pass = true;
    std::string detail;
    for (std::uint64_t repeat = 0; repeat < 3; ++repeat) {
        std::vector<std::pair<std::string, double>> scores;
        for (const auto& v : ablation_variants(reduced_config())) {
            auto model = init_weights(v.config, bench.topology, 7 + repeat);
            const auto r = train_loop(model, {bench.sample}, {bench.sample}, overfit_train_config(epochs, repeat));
            scores.emplace_back(v.name, r.best_val_mpjpe);
        }
        const double full = scores.front().second;
        double best = INFINITY;
        for (const auto& [name, s] : scores) best = std::min(best, s);
        const bool ok = full <= 1.02 * best;
        pass = pass && ok;
        detail += fmt("%sseed %llu [", repeat ? "; " : "", static_cast<unsigned long long>(7 + repeat));
        for (std::size_t i = 0; i < scores.size(); ++i) detail += fmt("%s%.2f", i ? " " : "", scores[i].second);
        detail += ok ? "] ok" : "] full not within 2% of best";
    }
    return {pass, "val P1 mm, full first: " + detail};
}

// ---- 9. Scheduler and early stop -----------------------------------------------------------------

// Brute force: the rate after epoch e is lr0 halved once for every epoch i <= e
// at which the current run of non-improving epochs reaches a positive multiple
// of the plateau patience; training stops at the first epoch whose run reaches
// the stop patience.
struct Simulated {
    std::vector<double> lr;
    std::size_t stop = 0;
};

Simulated simulate(const std::vector<double>& scores, const TrainConfig& cfg) {
    Simulated s;
    double best = INFINITY, lr = cfg.lr;
    std::size_t run = 0;
    for (std::size_t e = 0; e < scores.size(); ++e) {
        if (scores[e] < best - cfg.improvement_threshold) {
            best = scores[e];
            run = 0;
        } else {
            ++run;
            if (run % cfg.plateau_patience == 0) lr *= 0.5;
        }
        s.lr.push_back(lr);
        if (s.stop == 0 && run >= cfg.early_stop_patience) s.stop = e + 1;
    }
    return s;
}

Outcome scheduler_machine() {
    Rng rng(909);
    std::size_t mismatches = 0, stops = 0, halvings = 0;
    for (int h = 0; h < 10000; ++h) {
        TrainConfig cfg;  // 5-epoch halving, 10-epoch stop
        if (h % 4 == 3) {
            cfg.plateau_patience = 1 + rng.uniform_index(8);
            cfg.early_stop_patience = 1 + rng.uniform_index(16);
        }
        const std::size_t n = 1 + rng.uniform_index(60);
        std::vector<double> scores;
        double level = rng.uniform(10, 100);
        for (std::size_t e = 0; e < n; ++e) {
            const double u = rng.uniform();
            if (u < 0.3) level -= rng.uniform(0, 5);
            // Ties and sub-threshold gains must count as no improvement.
            scores.push_back(u < 0.4 ? level : u < 0.5 ? level - 1e-7 : level + rng.uniform(0, 5));
        }
        const auto ref = simulate(scores, cfg);
        ScheduleState st;
        st.lr = cfg.lr;
        std::size_t stop = 0;
        for (std::size_t e = 0; e < n; ++e) {
            const double lr = plateau_scheduler(st, scores[e], cfg);
            if (lr != ref.lr[e]) ++mismatches;
            if (stop == 0 && early_stop(st, cfg)) stop = e + 1;
        }
        if (stop != ref.stop) ++mismatches;
        stops += ref.stop != 0;
        halvings += ref.lr.back() < cfg.lr;
    }
    return {mismatches == 0, fmt("10000 histories (%zu stop, %zu halve), %zu mismatches", stops, halvings, mismatches)};
}

// ---- 10. Streaming and protocol -------------------------------------------------------------

// Byte layout written out independently of the library encoder.
std::vector<std::uint8_t> reference_bytes(const WireFrame& f) {
    std::vector<std::uint8_t> p{'G', 'T', 'A', 'P', 1, static_cast<std::uint8_t>(f.type)};
    for (int s = 24; s >= 0; s -= 8) p.push_back(static_cast<std::uint8_t>(f.frame_index >> s));
    p.push_back(static_cast<std::uint8_t>(f.joint_count >> 8));
    p.push_back(static_cast<std::uint8_t>(f.joint_count));
    for (float v : f.values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int s = 0; s < 32; s += 8) p.push_back(static_cast<std::uint8_t>(bits >> s));
    }
    std::vector<std::uint8_t> out;
    const auto len = static_cast<std::uint32_t>(p.size());
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(len >> s));
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

Outcome streaming_and_protocol() {
    Rng rng(1010);
    std::size_t wire_bad = 0;
    FrameDecoder decoder;
    for (int i = 0; i < 10000; ++i) {
        WireFrame f;
        const MsgType types[] = {MsgType::keypoints2d, MsgType::pose3d, MsgType::end, MsgType::error};
        f.type = types[rng.uniform_index(4)];
        f.frame_index = static_cast<std::uint32_t>(rng.uniform_index(1ull << 32));
        f.joint_count = static_cast<std::uint16_t>(rng.uniform_index(40));
        for (std::size_t v = 0; v < f.joint_count * wire_dims(f.type); ++v) {
            // Any finite float bit pattern, including subnormals and -0.
            float x;
            do {
                x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.uniform_index(1ull << 32)));
            } while (!std::isfinite(x));
            f.values.push_back(x);
        }
        const auto bytes = encode_frame(f);
        if (bytes != reference_bytes(f)) ++wire_bad;
        // Feed in random fragments.
        std::size_t pos = 0;
        std::optional<WireFrame> got;
        while (pos < bytes.size()) {
            const std::size_t len = std::min(bytes.size() - pos, 1 + rng.uniform_index(64));
            decoder.feed(std::span(bytes).subspan(pos, len));
            pos += len;
            if (auto g = decoder.next()) got = std::move(g);
        }
        if (!got || !(*got == f) || decoder.pending() != 0) ++wire_bad;
        for (std::size_t v = 0; got && v < f.values.size(); ++v) {
            if (std::bit_cast<std::uint32_t>(got->values[v]) != std::bit_cast<std::uint32_t>(f.values[v])) ++wire_bad;
        }
    }

    // Streamed session against the offline forward pass.
    GtaNetConfig cfg;
    cfg.gcn_layers = 2;
    cfg.gcn_channels = 16;
    cfg.heads = 4;
    cfg.target_receptive_field = 16;
    const auto topo = SkeletonTopology::h36m17();
    auto model = init_weights(cfg, topo, 21);
    for (int i = 0; i < 3; ++i) forward(model, random_tensor({50, 17, 2}, rng, 0, 1), Mode::train, rng);
    double stream_err = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SynthConfig sc;
        sc.seed = 40 + seed;
        sc.frames = 90;
        const auto data = synth_generate(sc);
        Rng r(0);
        const auto offline = forward(model, data.obs2d.to_tensor(), Mode::eval, r);
        StreamSession session(model);
        for (std::size_t t = 0; t < sc.frames; ++t) {
            const auto pose = session.push(std::span(data.obs2d.values).subspan(t * 34, 34));
            for (std::size_t k = 0; k < 51; ++k) stream_err = std::max(stream_err, std::abs(pose[k] - offline.data()[t * 51 + k]));
        }
    }

    // Benchmark ordering on the reduced model.
    BenchOptions bo;
    bo.iters = 3;
    const auto rows = run_bench(reduced_config(), topo, bo);
    std::map<std::string, std::vector<double>> fps;
    for (const auto& row : rows) fps[row.mode].push_back(row.fps);
    bool ordered = rows.size() == 6 && fps["layer-by-layer"].size() == 3 && fps["single-frame"].size() == 3;
    std::string table;
    for (std::size_t i = 0; ordered && i < 3; ++i) {
        ordered = ordered && fps["layer-by-layer"][i] >= fps["single-frame"][i];
        if (i > 0) {
            ordered = ordered && fps["layer-by-layer"][i] <= fps["layer-by-layer"][i - 1] &&
                      fps["single-frame"][i] <= fps["single-frame"][i - 1];
        }
    }
    for (const auto& row : rows) table += fmt("%s%s@%zu %.0f", table.empty() ? "" : ", ", row.mode.c_str(), row.receptive_field, row.fps);

    return {wire_bad == 0 && stream_err <= 1e-9 && ordered,
            fmt("wire mismatches %zu/10000; streamed vs offline %.1e (<= 1e-9); bench %zu rows ordered: %s [fps %s]",
                wire_bad, stream_err, rows.size(), ordered ? "yes" : "no", table.c_str())};
}

// ---- 11. Determinism ------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "gtanet_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto cfg = root / "config.json";
    std::ofstream(cfg) << R"({"model": {"gcn_channels": 16, "heads": 4, "target_receptive_field": 16},
                              "train": {"max_epochs": 4, "batch_size": 2}})";
    std::ostringstream sink;
    int failures = 0;
    for (const char* run : {"a", "b"}) {
        const auto dir = root / run;
        const auto data = (dir / "data").string();
        failures += run_cli({"--seed", "11", "--out", data, "synth", "--sequences", "4", "--frames", "48"}, sink, sink) != 0;
        failures += run_cli({"--seed", "11", "--config", cfg.string(), "--out", (dir / "train").string(), "train", "--data",
                             data, "--quiet", "--folds", "4"},
                            sink, sink) != 0;
        failures += run_cli({"--seed", "11", "--out", (dir / "eval").string(), "eval", "--checkpoint",
                             (dir / "train" / "checkpoint.gtac").string(), "--data", data},
                            sink, sink) != 0;
    }
    std::size_t identical = 0, compared = 0;
    for (const auto rel : {"train/history.json", "train/metrics.json", "eval/metrics.json"}) {
        const auto a = slurp(root / "a" / rel), b = slurp(root / "b" / rel);
        identical += !a.empty() && a == b;
        ++compared;
    }
    fs::remove_all(root);
    return {failures == 0 && identical == compared,
            fmt("%d failed commands; %zu/%zu files byte-identical (train history and metrics, eval metrics)", failures,
                identical, compared)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GTA-Net acceptance run"};
    std::vector<int> only;
    app.add_option("--only", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient integrity", gradient_integrity},
        {"attention normalization", attention_normalization},
        {"causality", causality},
        {"metric invariances", metric_invariances},
        {"graph correctness", graph_correctness},
        {"synthetic overfit", synthetic_overfit},
        {"generalization sanity", generalization},
        {"ablation direction", ablation_direction},
        {"scheduler state machine", scheduler_machine},
        {"streaming equivalence and protocol", streaming_and_protocol},
        {"determinism", determinism},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << number << ". " << criteria[i].first << ": " << o.detail
                  << fmt(" [%.1f s]", seconds_since(t0)) << std::endl;
    }
    return all ? 0 : 1;
}
