#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gtanet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { train, eval };

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Seeded random source. Every stochastic operation takes one of these
/// explicitly; there is no global generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform();                    // [0, 1)
    double uniform(double lo, double hi);
    double normal(double mean, double stddev);
    bool bernoulli(double p);
    std::size_t uniform_index(std::size_t n);  // [0, n)

    template <typename It>
    void shuffle(It first, It last) {
        // Fisher-Yates on our own draws; std::shuffle is implementation-defined.
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(first[i - 1], first[uniform_index(i)]);
        }
    }

    std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pushes this node's grad into its parents.
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense row-major float64 array with an attached reverse-mode graph.
/// Copies share the underlying node; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Only leaves may be written (parameter updates, perturbation in grad checks).
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Row-major constant matrix used for fixed graph operators.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    bool operator==(const Matrix&) const = default;
};

/// Topologically ordered record of the ops reachable from a root tensor.
class CompGraph {
public:
    static CompGraph trace(const Tensor& root);

    std::size_t size() const { return order_.size(); }
    // Seeds d(root)/d(root) = 1 and runs every backward closure once, in
    // reverse topological order.
    void backward() const;

private:
    std::vector<std::shared_ptr<detail::Node>> order_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf.
void backward(const Tensor& loss);

// ---- Ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., C_in] x w[C_in, C_out] over the last axis.
Tensor linear(const Tensor& x, const Tensor& w);
// x[..., C] + b[C]
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_last(const Tensor& a, const Tensor& b);
// Sums over all leading axes: x[..., C] -> [C].
Tensor sum_rows(const Tensor& x);
Tensor sum(const Tensor& x);

// y[t] = m * x[t] for x[T, N, C], m[P, N] constant -> y[T, P, C].
Tensor mix_nodes(const Matrix& m, const Tensor& x);

// y_t = sum_i x_{t - i*dilation} w_i with zero history; x[T, C_in], w[k, C_in, C_out].
Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& w, std::size_t dilation);

struct AttentionMask {
    bool causal = false;
    std::size_t window = 0;  // 0 = unbounded

    bool allows(std::size_t i, std::size_t j) const {
        if (!causal) return true;
        if (j > i) return false;
        return window == 0 || i - j < window;
    }
    std::size_t first(std::size_t i) const {
        if (!causal || window == 0 || i + 1 < window) return 0;
        return i + 1 - window;
    }
    std::size_t last(std::size_t i, std::size_t n) const { return causal ? i + 1 : n; }
};

// Softmax over the last axis, restricted to the mask (masked entries are 0).
// Leading axes are batch axes; the last two form an N x N square when masked.
Tensor masked_softmax(const Tensor& s, const AttentionMask& mask);
Tensor softmax_rows(const Tensor& s);

// q, k [B, N, C] -> scores [B, H, N, N]; entry (i, j) = q_i^h . k_j^h / sqrt(C/H).
Tensor multihead_scores(const Tensor& q, const Tensor& k, std::size_t heads, const AttentionMask& mask);
// alpha [B, H, N, N], v [B, N, C] -> [B, N, C]; head h reads and writes its channel slice.
Tensor multihead_mix(const Tensor& alpha, const Tensor& v, std::size_t heads);

struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
    bool initialized = false;
    // When set, train-mode calls fold into an equal-weight average of every
    // batch seen since `averaged` was reset, instead of the momentum update.
    bool cumulative = false;
    std::size_t averaged = 0;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Normalizes each channel (last axis) over all leading axes.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode);

// Inverted dropout.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean negative log-likelihood of softmax(logits) over rows.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels);

// ---- Gradient checking -----------------------------------------------------

struct GradCheckOptions {
    double step = 1e-6;
    // Checks at most this many entries per input (evenly strided); 0 = all.
    std::size_t max_entries_per_input = 0;
    // Denominators are floored at this fraction of the input's largest analytic
    // gradient, so entries near the finite-difference noise level do not dominate.
    double relative_floor = 1e-2;
};

/// max |analytic - numeric| / max(floor, |analytic| + |numeric|) over every
/// checked entry of every input. `fn` must read the inputs' current data.
double grad_check(const std::function<Tensor()>& fn, std::span<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace gtanet
