#include "gtanet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace gtanet {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmap(const std::vector<double>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return {v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

MapMat map(std::vector<double>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
    return {v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
    check_finite(value, op);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    const bool track = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(inputs);
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

const NodePtr& require(const Tensor& t, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
    return t.node();
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

// ---- Rng -------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    // Box-Muller without caching the second variate, so the engine state is
    // the whole generator state.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw std::invalid_argument("Rng::set_state: malformed state");
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("Tensor::from: shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    check_finite(values, "Tensor::from");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return require(*this, "shape")->shape; }

std::size_t Tensor::size(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("Tensor::size: axis out of range");
    return s[axis];
}

std::size_t Tensor::numel() const { return require(*this, "numel")->value.size(); }

std::span<const double> Tensor::data() const { return require(*this, "data")->value; }

std::span<double> Tensor::mutable_data() {
    auto& n = require(*this, "mutable_data");
    if (n->backward) throw std::logic_error("mutable_data: only leaf tensors may be written");
    return n->value;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar " + shape_to_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("at: rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw ShapeError("at: index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

bool Tensor::requires_grad() const { return require(*this, "requires_grad")->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    auto& n = require(*this, "set_requires_grad");
    if (n->backward) throw std::logic_error("set_requires_grad: not a leaf");
    n->requires_grad = flag;
}

bool Tensor::is_leaf() const { return !require(*this, "is_leaf")->backward; }

bool Tensor::has_grad() const { return require(*this, "has_grad")->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
    auto& n = require(*this, "grad");
    return n->ensure_grad();
}

std::span<double> Tensor::mutable_grad() { return require(*this, "mutable_grad")->ensure_grad(); }

void Tensor::zero_grad() {
    auto& n = require(*this, "zero_grad");
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad() && is_leaf()); }

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

// ---- Graph -----------------------------------------------------------------

CompGraph CompGraph::trace(const Tensor& root) {
    CompGraph g;
    if (!root.defined() || !root.requires_grad()) return g;
    std::unordered_set<const Node*> visited;
    // Iterative post-order DFS.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            const NodePtr& parent = node->parents[next++];
            if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
        } else {
            g.order_.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

void CompGraph::backward() const {
    if (order_.empty()) return;
    for (const auto& n : order_) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    auto& root = order_.back();
    std::fill(root->ensure_grad().begin(), root->grad.end(), 1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
    for (const auto& n : order_) {
        if (n->backward) std::vector<double>().swap(n->grad);
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " +
                         (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
    }
    CompGraph::trace(loss).backward();
}

// ---- Ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<double> out(m * n);
    map(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
    return make_result("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        auto dc = cmap(self.grad, m, n);
        if (pa.requires_grad) map(pa.ensure_grad(), m, k).noalias() += dc * cmap(pb.value, k, n).transpose();
        if (pb.requires_grad) map(pb.ensure_grad(), k, n).noalias() += cmap(pa.value, m, k).transpose() * dc;
    });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (w.dim() != 2 || x.dim() < 1 || x.shape().back() != w.size(0)) {
        throw ShapeError("linear: incompatible shapes " + shape_to_string(x.shape()) + " x " +
                         shape_to_string(w.shape()));
    }
    const std::size_t k = w.size(0), n = w.size(1), m = x.numel() / k;
    Shape shape = x.shape();
    shape.back() = n;
    std::vector<double> out(m * n);
    map(out, m, n).noalias() = cmap(x.node()->value, m, k) * cmap(w.node()->value, k, n);
    return make_result("linear", std::move(shape), std::move(out), {x.node(), w.node()}, [m, k, n](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto dy = cmap(self.grad, m, n);
        if (px.requires_grad) map(px.ensure_grad(), m, k).noalias() += dy * cmap(pw.value, k, n).transpose();
        if (pw.requires_grad) map(pw.ensure_grad(), k, n).noalias() += cmap(px.value, m, k).transpose() * dy;
    });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    const std::size_t c = last_dim(x.shape());
    if (b.numel() != c || b.dim() != 1) {
        throw ShapeError("add_bias: bias " + shape_to_string(b.shape()) + " vs input " + shape_to_string(x.shape()));
    }
    std::vector<double> out = x.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
    return make_result("add_bias", x.shape(), std::move(out), {x.node(), b.node()}, [c](Node& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad) {
            auto& g = px.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out = x.node()->value;
    for (auto& v : out) v *= factor;
    return make_result("scale", x.shape(), std::move(out), {x.node()}, [factor](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out = x.node()->value;
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return make_result("relu", x.shape(), std::move(out), {x.node()}, [](Node& self) {
        auto& p = *self.parents[0];
        auto& g = p.ensure_grad();
        // Subgradient at exactly 0 is 0.
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (p.value[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
    }
    return make_result("reshape", std::move(shape), x.node()->value, {x.node()}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    Shape sa = a.shape();
    Shape sb = b.shape();
    if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
        throw ShapeError("concat_last: " + shape_to_string(sa) + " vs " + shape_to_string(sb));
    }
    const std::size_t ca = sa.back(), cb = sb.back(), rows = a.numel() / ca;
    Shape shape = sa;
    shape.back() = ca + cb;
    std::vector<double> out(rows * (ca + cb));
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
        std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
    }
    return make_result("concat_last", std::move(shape), std::move(out), {a.node(), b.node()},
                       [rows, ca, cb](Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           const std::size_t c = ca + cb;
                           if (pa.requires_grad) {
                               auto& g = pa.ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * c + j];
                           }
                           if (pb.requires_grad) {
                               auto& g = pb.ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * c + ca + j];
                           }
                       });
}

Tensor sum_rows(const Tensor& x) {
    const std::size_t c = last_dim(x.shape());
    std::vector<double> out(c, 0.0);
    const auto& xv = x.node()->value;
    for (std::size_t i = 0; i < xv.size(); ++i) out[i % c] += xv[i];
    return make_result("sum_rows", {c}, std::move(out), {x.node()}, [c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i % c];
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.node()->value) total += v;
    return make_result("sum", {}, {total}, {x.node()}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mix_nodes(const Matrix& m, const Tensor& x) {
    if (x.dim() != 3 || x.size(1) != m.cols) {
        throw ShapeError("mix_nodes: operator " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                         " vs input " + shape_to_string(x.shape()));
    }
    const std::size_t t = x.size(0), n = m.cols, p = m.rows, c = x.size(2);
    std::vector<double> out(t * p * c);
    const auto op = cmap(m.data, p, n);
    for (std::size_t f = 0; f < t; ++f) {
        map(out, p, c, f * p * c).noalias() = op * cmap(x.node()->value, n, c, f * n * c);
    }
    return make_result("mix_nodes", {t, p, c}, std::move(out), {x.node()}, [m, t, n, p, c](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto op = cmap(m.data, p, n);
        for (std::size_t f = 0; f < t; ++f) {
            map(g, n, c, f * n * c).noalias() += op.transpose() * cmap(self.grad, p, c, f * p * c);
        }
    });
}

Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& w, std::size_t dilation) {
    if (dilation == 0) throw std::invalid_argument("causal_dilated_conv1d: dilation must be positive");
    if (x.dim() != 2 || x.size(0) == 0) throw ShapeError("causal_dilated_conv1d: expected non-empty [T, C_in] input");
    if (w.dim() != 3 || w.size(1) != x.size(1)) {
        throw ShapeError("causal_dilated_conv1d: weight " + shape_to_string(w.shape()) + " vs input " +
                         shape_to_string(x.shape()));
    }
    const std::size_t t = x.size(0), cin = x.size(1), k = w.size(0), cout = w.size(2);
    std::vector<double> out(t * cout, 0.0);
    const auto& xv = x.node()->value;
    const auto& wv = w.node()->value;
    for (std::size_t tap = 0; tap < k; ++tap) {
        const std::size_t lag = tap * dilation;
        if (lag >= t) break;
        const std::size_t rows = t - lag;
        map(out, rows, cout, lag * cout).noalias() += cmap(xv, rows, cin) * cmap(wv, cin, cout, tap * cin * cout);
    }
    return make_result("causal_dilated_conv1d", {t, cout}, std::move(out), {x.node(), w.node()},
                       [t, cin, k, cout, dilation](Node& self) {
                           auto& px = *self.parents[0];
                           auto& pw = *self.parents[1];
                           for (std::size_t tap = 0; tap < k; ++tap) {
                               const std::size_t lag = tap * dilation;
                               if (lag >= t) break;
                               const std::size_t rows = t - lag;
                               auto dy = cmap(self.grad, rows, cout, lag * cout);
                               if (px.requires_grad) {
                                   map(px.ensure_grad(), rows, cin).noalias() +=
                                       dy * cmap(pw.value, cin, cout, tap * cin * cout).transpose();
                               }
                               if (pw.requires_grad) {
                                   map(pw.ensure_grad(), cin, cout, tap * cin * cout).noalias() +=
                                       cmap(px.value, rows, cin).transpose() * dy;
                               }
                           }
                       });
}

Tensor masked_softmax(const Tensor& s, const AttentionMask& mask) {
    if (s.dim() < 1) throw ShapeError("masked_softmax: expected at least one axis");
    const std::size_t n = s.shape().back();
    const std::size_t rows = s.numel() / std::max<std::size_t>(n, 1);
    if (mask.causal && (s.dim() < 2 || s.shape()[s.dim() - 2] != n)) {
        throw ShapeError("masked_softmax: causal mask needs square trailing axes");
    }
    if (n == 0) throw ShapeError("masked_softmax: empty rows");
    const auto& sv = s.node()->value;
    std::vector<double> out(sv.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r % n;  // query index within the square block
        const std::size_t lo = mask.first(i), hi = mask.last(i, n);
        const double* row = sv.data() + r * n;
        double* o = out.data() + r * n;
        double mx = row[lo];
        for (std::size_t j = lo + 1; j < hi; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
            o[j] = std::exp(row[j] - mx);
            z += o[j];
        }
        for (std::size_t j = lo; j < hi; ++j) o[j] /= z;
    }
    return make_result("masked_softmax", s.shape(), std::move(out), {s.node()}, [rows, n, mask](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t i = r % n;
            const std::size_t lo = mask.first(i), hi = mask.last(i, n);
            const double* a = self.value.data() + r * n;
            const double* da = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = lo; j < hi; ++j) dot += a[j] * da[j];
            for (std::size_t j = lo; j < hi; ++j) g[r * n + j] += a[j] * (da[j] - dot);
        }
    });
}

Tensor softmax_rows(const Tensor& s) {
    if (s.dim() != 2) throw ShapeError("softmax_rows: expected [m, n] input");
    return masked_softmax(s, AttentionMask{});
}

Tensor multihead_scores(const Tensor& q, const Tensor& k, std::size_t heads, const AttentionMask& mask) {
    if (q.dim() != 3 || q.shape() != k.shape()) {
        throw ShapeError("multihead_scores: expected matching [B, N, C] inputs");
    }
    const std::size_t b = q.size(0), n = q.size(1), c = q.size(2);
    if (heads == 0 || c % heads != 0) throw ShapeError("multihead_scores: channels not divisible by heads");
    const std::size_t dk = c / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    const auto& qv = q.node()->value;
    const auto& kv = k.node()->value;
    std::vector<double> out(b * heads * n * n, 0.0);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                const double* qi = qv.data() + (bi * n + i) * c + h * dk;
                double* o = out.data() + ((bi * heads + h) * n + i) * n;
                for (std::size_t j = mask.first(i); j < mask.last(i, n); ++j) {
                    const double* kj = kv.data() + (bi * n + j) * c + h * dk;
                    double acc = 0.0;
                    for (std::size_t d = 0; d < dk; ++d) acc += qi[d] * kj[d];
                    o[j] = acc * inv;
                }
            }
    return make_result("multihead_scores", {b, heads, n, n}, std::move(out), {q.node(), k.node()},
                       [b, n, c, heads, dk, inv, mask](Node& self) {
                           auto& pq = *self.parents[0];
                           auto& pk = *self.parents[1];
                           std::vector<double>* gq = pq.requires_grad ? &pq.ensure_grad() : nullptr;
                           std::vector<double>* gk = pk.requires_grad ? &pk.ensure_grad() : nullptr;
                           for (std::size_t bi = 0; bi < b; ++bi)
                               for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double* de = self.grad.data() + ((bi * heads + h) * n + i) * n;
                                       const std::size_t qo = (bi * n + i) * c + h * dk;
                                       for (std::size_t j = mask.first(i); j < mask.last(i, n); ++j) {
                                           const double s = de[j] * inv;
                                           if (s == 0.0) continue;
                                           const std::size_t ko = (bi * n + j) * c + h * dk;
                                           for (std::size_t d = 0; d < dk; ++d) {
                                               if (gq) (*gq)[qo + d] += s * pk.value[ko + d];
                                               if (gk) (*gk)[ko + d] += s * pq.value[qo + d];
                                           }
                                       }
                                   }
                       });
}

Tensor multihead_mix(const Tensor& alpha, const Tensor& v, std::size_t heads) {
    if (v.dim() != 3 || alpha.dim() != 4) throw ShapeError("multihead_mix: expected alpha [B,H,N,N], v [B,N,C]");
    const std::size_t b = v.size(0), n = v.size(1), c = v.size(2);
    if (alpha.shape() != Shape{b, heads, n, n} || c % heads != 0) {
        throw ShapeError("multihead_mix: alpha " + shape_to_string(alpha.shape()) + " vs values " +
                         shape_to_string(v.shape()));
    }
    const std::size_t dk = c / heads;
    const auto& av = alpha.node()->value;
    const auto& vv = v.node()->value;
    std::vector<double> out(b * n * c, 0.0);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                const double* a = av.data() + ((bi * heads + h) * n + i) * n;
                double* o = out.data() + (bi * n + i) * c + h * dk;
                for (std::size_t j = 0; j < n; ++j) {
                    if (a[j] == 0.0) continue;
                    const double* vj = vv.data() + (bi * n + j) * c + h * dk;
                    for (std::size_t d = 0; d < dk; ++d) o[d] += a[j] * vj[d];
                }
            }
    return make_result("multihead_mix", {b, n, c}, std::move(out), {alpha.node(), v.node()},
                       [b, n, c, heads, dk](Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pv = *self.parents[1];
                           std::vector<double>* ga = pa.requires_grad ? &pa.ensure_grad() : nullptr;
                           std::vector<double>* gv = pv.requires_grad ? &pv.ensure_grad() : nullptr;
                           for (std::size_t bi = 0; bi < b; ++bi)
                               for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t arow = ((bi * heads + h) * n + i) * n;
                                       const double* dout = self.grad.data() + (bi * n + i) * c + h * dk;
                                       for (std::size_t j = 0; j < n; ++j) {
                                           const std::size_t vo = (bi * n + j) * c + h * dk;
                                           if (ga) {
                                               double acc = 0.0;
                                               for (std::size_t d = 0; d < dk; ++d) acc += dout[d] * pv.value[vo + d];
                                               (*ga)[arow + j] += acc;
                                           }
                                           const double a = pa.value[arow + j];
                                           if (gv && a != 0.0) {
                                               for (std::size_t d = 0; d < dk; ++d) (*gv)[vo + d] += a * dout[d];
                                           }
                                       }
                                   }
                       });
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode) {
    const std::size_t c = last_dim(x.shape());
    if (x.dim() < 2 || gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("batchnorm1d: parameters of length " + std::to_string(gamma.numel()) + " vs input " +
                         shape_to_string(x.shape()));
    }
    const std::size_t rows = x.numel() / c;
    const auto& xv = x.node()->value;
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (mode == Mode::train) {
        if (rows == 0) throw ShapeError("batchnorm1d: empty batch");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
        for (auto& m : mean) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = xv[r * c + j] - mean[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(rows);
        if (!stats.initialized) {
            stats.mean.assign(c, 0.0);
            stats.var.assign(c, 1.0);
            stats.initialized = true;
        }
        const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
        const double m = stats.cumulative ? 1.0 / static_cast<double>(++stats.averaged) : kBatchNormMomentum;
        for (std::size_t j = 0; j < c; ++j) {
            stats.mean[j] = (1.0 - m) * stats.mean[j] + m * mean[j];
            stats.var[j] = (1.0 - m) * stats.var[j] + m * var[j] * unbias;
        }
    } else {
        if (!stats.initialized || stats.mean.size() != c || stats.var.size() != c) {
            throw std::logic_error("batchnorm1d: eval mode requires initialized running statistics");
        }
        mean = stats.mean;
        var = stats.var;
    }
    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEps);
    std::vector<double> xhat(xv.size());
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            xhat[i] = (xv[i] - mean[j]) * inv_std[j];
            out[i] = gv[j] * xhat[i] + bv[j];
        }
    const bool batch_stats = mode == Mode::train;
    return make_result(
        "batchnorm1d", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
        [rows, c, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& dy = self.grad;
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    sum_dy[j] += dy[r * c + j];
                    sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
                }
            if (pg.requires_grad) {
                auto& g = pg.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy_xhat[j];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy[j];
            }
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                const double inv_rows = 1.0 / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = r * c + j;
                        const double scale = pg.value[j] * inv_std[j];
                        if (batch_stats) {
                            g[i] += scale * (dy[i] - inv_rows * sum_dy[j] - xhat[i] * inv_rows * sum_dy_xhat[j]);
                        } else {
                            g[i] += scale * dy[i];
                        }
                    }
            }
        });
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    std::vector<double> out = x.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_result("dropout", x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.numel();
    if (n == 0) throw ShapeError("mse_loss: empty input");
    const auto& pv = pred.node()->value;
    const auto& tv = target.node()->value;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pv[i] - tv[i];
        total += d * d;
    }
    return make_result("mse_loss", {}, {total / static_cast<double>(n)}, {pred.node(), target.node()}, [n](Node& self) {
        auto& pp = *self.parents[0];
        auto& pt = *self.parents[1];
        const double s = 2.0 * self.grad[0] / static_cast<double>(n);
        if (pp.requires_grad) {
            auto& g = pp.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += s * (pp.value[i] - pt.value[i]);
        }
        if (pt.requires_grad) {
            auto& g = pt.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] -= s * (pp.value[i] - pt.value[i]);
        }
    });
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.dim() != 2 || logits.size(0) != labels.size() || labels.empty()) {
        throw ShapeError("cross_entropy_loss: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = logits.size(0), c = logits.size(1);
    for (auto l : labels) {
        if (l >= c) throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(l) + " out of range");
    }
    const auto& lv = logits.node()->value;
    std::vector<double> prob(n * c);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = lv.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) prob[r * c + j] = std::exp(row[j] - log_z);
        total -= row[labels[r]] - log_z;
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return make_result("cross_entropy_loss", {}, {total / static_cast<double>(n)}, {logits.node()},
                       [n, c, prob = std::move(prob), lab = std::move(lab)](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           const double s = self.grad[0] / static_cast<double>(n);
                           for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t j = 0; j < c; ++j) {
                                   const double y = j == lab[r] ? 1.0 : 0.0;
                                   g[r * c + j] += s * (prob[r * c + j] - y);
                               }
                       });
}

// ---- grad_check ------------------------------------------------------------

double grad_check(const std::function<Tensor()>& fn, std::span<Tensor> inputs, const GradCheckOptions& options) {
    auto evaluate = [&fn]() {
        const Tensor out = fn();
        if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
        const double v = out.item();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
        return v;
    };
    for (auto& in : inputs) {
        if (!in.requires_grad()) throw std::invalid_argument("grad_check: inputs must require grad");
        in.mutable_grad();
        in.zero_grad();
    }
    const Tensor loss = fn();
    backward(loss);
    double worst = 0.0;
    for (auto& in : inputs) {
        const std::vector<double> analytic(in.grad().begin(), in.grad().end());
        auto values = in.mutable_data();
        const std::size_t n = values.size();
        const std::size_t stride =
            options.max_entries_per_input == 0 || n <= options.max_entries_per_input
                ? 1
                : (n + options.max_entries_per_input - 1) / options.max_entries_per_input;
        std::vector<std::pair<double, double>> pairs;
        double largest = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double plus = evaluate();
            values[i] = saved - options.step;
            const double minus = evaluate();
            values[i] = saved;
            pairs.emplace_back(analytic[i], (plus - minus) / (2.0 * options.step));
            largest = std::max(largest, std::abs(analytic[i]));
        }
        const double floor = std::max(1e-8, options.relative_floor * largest);
        for (const auto& [a, num] : pairs) {
            worst = std::max(worst, std::abs(a - num) / std::max(floor, std::abs(a) + std::abs(num)));
        }
    }
    return worst;
}

}  // namespace gtanet
