#include "gtanet/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <map>

namespace gtanet {

namespace {

std::size_t frame_count(std::span<const double> pred, std::span<const double> gt, std::size_t joints,
                        const char* who) {
    if (joints == 0) throw MetricError(std::string(who) + ": joint count must be positive");
    if (pred.size() != gt.size()) {
        throw MetricError(std::string(who) + ": prediction has " + std::to_string(pred.size()) +
                          " values, ground truth " + std::to_string(gt.size()));
    }
    if (pred.empty() || pred.size() % (joints * 3) != 0) {
        throw MetricError(std::string(who) + ": expected a non-empty [T, " + std::to_string(joints) + ", 3] array");
    }
    return pred.size() / (joints * 3);
}

// Root-aligned per-joint errors, frame-major.
std::vector<double> root_aligned_errors(std::span<const double> pred, std::span<const double> gt,
                                        std::size_t joints, std::size_t root, const char* who) {
    const std::size_t frames = frame_count(pred, gt, joints, who);
    if (root >= joints) throw MetricError(std::string(who) + ": root index out of range");
    std::vector<double> errors;
    errors.reserve(frames * joints);
    for (std::size_t t = 0; t < frames; ++t) {
        const double* p = pred.data() + t * joints * 3;
        const double* g = gt.data() + t * joints * 3;
        for (std::size_t j = 0; j < joints; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = (p[j * 3 + c] - p[root * 3 + c]) - (g[j * 3 + c] - g[root * 3 + c]);
                s += d * d;
            }
            errors.push_back(std::sqrt(s));
        }
    }
    return errors;
}

double percent_below(const std::vector<double>& errors, double threshold) {
    std::size_t hits = 0;
    for (double e : errors) hits += e < threshold ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double mpjpe_protocol1(std::span<const double> pred, std::span<const double> gt, std::size_t joints,
                       std::size_t root) {
    return mean(root_aligned_errors(pred, gt, joints, root, "mpjpe_protocol1"));
}

Alignment procrustes_align(std::span<const double> pred, std::span<const double> gt, bool similarity) {
    if (pred.size() != gt.size() || pred.empty() || pred.size() % 3 != 0) {
        throw MetricError("procrustes_align: expected two [J, 3] point sets of equal size");
    }
    const auto n = static_cast<Eigen::Index>(pred.size() / 3);
    using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
    const Points p = Eigen::Map<const Points>(pred.data(), n, 3);
    const Points g = Eigen::Map<const Points>(gt.data(), n, 3);
    const Eigen::RowVector3d pm = p.colwise().mean();
    const Eigen::RowVector3d gm = g.colwise().mean();
    const Points pc = p.rowwise() - pm;
    const Points gc = g.rowwise() - gm;

    auto check_rank = [](const Points& x, const char* which) {
        const Eigen::Matrix3d cov = x.transpose() * x;
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        const auto ev = es.eigenvalues();  // ascending
        if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) {
            throw MetricError(std::string("procrustes_align: degenerate ") + which + " point set (rank < 2)");
        }
    };
    check_rank(pc, "prediction");
    check_rank(gc, "ground-truth");

    const Eigen::Matrix3d h = pc.transpose() * gc;
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d signs(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    const Eigen::Matrix3d r = v * signs.asDiagonal() * u.transpose();

    double s = 1.0;
    if (similarity) {
        const double trace = (svd.singularValues().array() * signs.array()).sum();
        s = trace / pc.squaredNorm();
    }
    const Eigen::RowVector3d t = gm - s * (r * pm.transpose()).transpose();

    Alignment out;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) out.rotation[i][j] = r(i, j);
        out.translation[i] = t(i);
    }
    out.scale = s;
    const Points aligned = ((s * (p * r.transpose())).rowwise() + t).eval();
    out.aligned.assign(aligned.data(), aligned.data() + aligned.size());
    out.residual = (aligned - g).squaredNorm();
    return out;
}

double mpjpe_protocol2(std::span<const double> pred, std::span<const double> gt, std::size_t joints,
                       bool similarity) {
    const std::size_t frames = frame_count(pred, gt, joints, "mpjpe_protocol2");
    const std::size_t stride = joints * 3;
    double total = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
        const auto g = gt.subspan(t * stride, stride);
        const auto a = procrustes_align(pred.subspan(t * stride, stride), g, similarity);
        for (std::size_t j = 0; j < joints; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = a.aligned[j * 3 + c] - g[j * 3 + c];
                s += d * d;
            }
            total += std::sqrt(s);
        }
    }
    return total / static_cast<double>(frames * joints);
}

double pck(std::span<const double> pred, std::span<const double> gt, std::size_t joints, std::size_t root,
           double threshold_mm) {
    if (!(threshold_mm > 0.0)) throw MetricError("pck: threshold must be positive");
    return percent_below(root_aligned_errors(pred, gt, joints, root, "pck"), threshold_mm);
}

std::vector<double> default_auc_thresholds() {
    std::vector<double> out;
    for (int mm = 5; mm <= 150; mm += 5) out.push_back(mm);
    return out;
}

double auc(std::span<const double> pred, std::span<const double> gt, std::size_t joints, std::size_t root,
           std::span<const double> thresholds_mm) {
    const auto defaults = default_auc_thresholds();
    if (thresholds_mm.empty()) thresholds_mm = defaults;
    for (std::size_t i = 0; i < thresholds_mm.size(); ++i) {
        if (!(thresholds_mm[i] > 0.0) || (i > 0 && !(thresholds_mm[i] > thresholds_mm[i - 1]))) {
            throw MetricError("auc: thresholds must be positive and ascending");
        }
    }
    const auto errors = root_aligned_errors(pred, gt, joints, root, "auc");
    double s = 0.0;
    for (double th : thresholds_mm) s += percent_below(errors, th);
    return s / static_cast<double>(thresholds_mm.size());
}

nlohmann::json EvalReport::to_json() const {
    auto row = [](const MetricRow& r) {
        return nlohmann::json{{"action", r.action}, {"frames", r.frames},   {"mpjpe_p1_mm", r.mpjpe_p1},
                              {"mpjpe_p2_mm", r.mpjpe_p2}, {"pck_150mm", r.pck}, {"auc", r.auc}};
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : actions) rows.push_back(row(r));
    return {{"actions", rows}, {"overall", row(overall)}};
}

std::string EvalReport::to_text() const {
    std::size_t width = 7;
    for (const auto& r : actions) width = std::max(width, r.action.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %8s %10s %10s %8s %8s\n", static_cast<int>(width), "action", "frames",
                  "P1 (mm)", "P2 (mm)", "PCK", "AUC");
    out += buf;
    auto line = [&](const MetricRow& r) {
        std::snprintf(buf, sizeof buf, "%-*s %8zu %10.2f %10.2f %8.2f %8.2f\n", static_cast<int>(width),
                      r.action.c_str(), r.frames, r.mpjpe_p1, r.mpjpe_p2, r.pck, r.auc);
        out += buf;
    };
    for (const auto& r : actions) line(r);
    line(overall);
    return out;
}

EvalReport evaluate(const std::vector<EvalItem>& items, std::size_t joints, std::size_t root, bool similarity) {
    if (items.empty()) throw MetricError("evaluate: no sequences");
    EvalReport report;
    std::map<std::string, std::size_t> index;
    for (const auto& item : items) {
        const std::size_t frames = frame_count(item.pred, item.gt, joints, "evaluate");
        auto [it, fresh] = index.emplace(item.action, report.actions.size());
        if (fresh) report.actions.push_back({item.action, 0, 0, 0, 0, 0});
        auto& row = report.actions[it->second];
        const double f = static_cast<double>(frames);
        // Accumulate frame-weighted sums; normalized below.
        row.mpjpe_p1 += f * mpjpe_protocol1(item.pred, item.gt, joints, root);
        row.mpjpe_p2 += f * mpjpe_protocol2(item.pred, item.gt, joints, similarity);
        row.pck += f * pck(item.pred, item.gt, joints, root);
        row.auc += f * auc(item.pred, item.gt, joints, root);
        row.frames += frames;
    }
    report.overall.action = "Average";
    for (auto& row : report.actions) {
        report.overall.frames += row.frames;
        report.overall.mpjpe_p1 += row.mpjpe_p1;
        report.overall.mpjpe_p2 += row.mpjpe_p2;
        report.overall.pck += row.pck;
        report.overall.auc += row.auc;
        const double f = static_cast<double>(row.frames);
        row.mpjpe_p1 /= f;
        row.mpjpe_p2 /= f;
        row.pck /= f;
        row.auc /= f;
    }
    const double total = static_cast<double>(report.overall.frames);
    report.overall.mpjpe_p1 /= total;
    report.overall.mpjpe_p2 /= total;
    report.overall.pck /= total;
    report.overall.auc /= total;
    return report;
}

}  // namespace gtanet
