#pragma once

#include "json.hpp"

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gtanet {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// All pose arrays below are row-major [T, J, 3] in millimetres.

double mpjpe_protocol1(std::span<const double> pred, std::span<const double> gt, std::size_t joints,
                       std::size_t root);

using Mat3 = std::array<std::array<double, 3>, 3>;

struct Alignment {
    Mat3 rotation{};  // det = +1
    std::array<double, 3> translation{};
    double scale = 1.0;                // 1 unless similarity mode
    std::vector<double> aligned;       // [J, 3]
    double residual = 0.0;             // sum of squared distances to gt
};

// Least-squares rigid fit of pred [J, 3] onto gt [J, 3]. Reflections are
// excluded. Throws MetricError when either centred point set has rank < 2.
Alignment procrustes_align(std::span<const double> pred, std::span<const double> gt, bool similarity = false);

double mpjpe_protocol2(std::span<const double> pred, std::span<const double> gt, std::size_t joints,
                       bool similarity = false);

// Percentage of root-aligned joints with error strictly below threshold.
double pck(std::span<const double> pred, std::span<const double> gt, std::size_t joints, std::size_t root,
           double threshold_mm = 150.0);

std::vector<double> default_auc_thresholds();  // 5, 10, ..., 150
double auc(std::span<const double> pred, std::span<const double> gt, std::size_t joints, std::size_t root,
           std::span<const double> thresholds_mm = {});

struct MetricRow {
    std::string action;
    std::size_t frames = 0;
    double mpjpe_p1 = 0.0;
    double mpjpe_p2 = 0.0;
    double pck = 0.0;
    double auc = 0.0;
};

struct EvalReport {
    std::vector<MetricRow> actions;
    MetricRow overall;  // frame-weighted mean of the action rows

    nlohmann::json to_json() const;
    std::string to_text() const;
};

struct EvalItem {
    std::string action;
    std::vector<double> pred;
    std::vector<double> gt;
};

// Rows are grouped by action name in order of first appearance.
EvalReport evaluate(const std::vector<EvalItem>& items, std::size_t joints, std::size_t root,
                    bool similarity = false);

}  // namespace gtanet
