#include "cofinal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace cofinal {

namespace {

thread_local bool t_grad_enabled = true;

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_finite(const detail::Node& n, const char* op) {
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    if (!t_grad_enabled) return false;
    for (const Tensor* t : ts) {
        if (t->node()->requires_grad) return true;
    }
    return false;
}

// Attach parents and the backward closure only when some input needs
// gradients; otherwise the result is a detached constant.
Tensor finish(NodePtr out, std::initializer_list<const Tensor*> inputs,
              std::function<void()> backward_fn, const char* op) {
    check_finite(*out, op);
    if (any_requires_grad(inputs)) {
        out->requires_grad = true;
        for (const Tensor* t : inputs) out->parents.push_back(t->node());
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(a.shape()));
    }
}

}  // namespace

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw ConfigError("RngStream::next_below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double RngStream::next_normal() {
    const double u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_values(shape, std::vector<double>(shape_size(shape), 0.0),
                       requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    return from_values(shape, std::vector<double>(shape_size(shape), v),
                       requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
    if (values.size() != shape_size(shape)) {
        throw DimensionError("Tensor: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto n = make_node(std::move(shape), std::move(values));
    n->requires_grad = requires_grad;
    Tensor t(std::move(n));
    check_finite(*t.node(), "Tensor::from_values");
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_values({1}, {v}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1) {
        throw DimensionError("Tensor::item: tensor has " + std::to_string(size()) +
                             " entries, expected 1");
    }
    return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.size() != node_->value.size()) {
        throw Error("Tensor::grad: no gradient has been computed");
    }
    return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.assign(node_->value.size(), 0.0); }

void Tensor::backward() const {
    if (size() != 1) {
        throw DimensionError("backward: root must be a scalar tensor");
    }
    if (!node_->requires_grad) return;

    // Post-order DFS (iterative) to get a reverse topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// ---- elementwise binary ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::Node* o = out.get();
    return finish(out, {&a, &b},
                  [an, bn, o] {
                      if (an->requires_grad) {
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              an->grad[i] += o->grad[i];
                      }
                      if (bn->requires_grad) {
                          bn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              bn->grad[i] += o->grad[i];
                      }
                  },
                  "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::Node* o = out.get();
    return finish(out, {&a, &b},
                  [an, bn, o] {
                      if (an->requires_grad) {
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              an->grad[i] += o->grad[i];
                      }
                      if (bn->requires_grad) {
                          bn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              bn->grad[i] -= o->grad[i];
                      }
                  },
                  "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::Node* o = out.get();
    return finish(out, {&a, &b},
                  [an, bn, o] {
                      if (an->requires_grad) {
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              an->grad[i] += o->grad[i] * bn->value[i];
                      }
                      if (bn->requires_grad) {
                          bn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              bn->grad[i] += o->grad[i] * an->value[i];
                      }
                  },
                  "mul");
}

namespace {

// Shared skeleton for unary elementwise ops: dx += dy * dforward(x, y).
Tensor unary_op(const Tensor& a, const char* name,
                const std::function<double(double)>& fwd,
                const std::function<double(double, double)>& dfwd) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.values()[i]);
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o, dfwd] {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < o->grad.size(); ++i)
                          an->grad[i] += o->grad[i] * dfwd(an->value[i], o->value[i]);
                  },
                  name);
}

}  // namespace

Tensor neg(const Tensor& a) {
    return unary_op(a, "neg", [](double x) { return -x; },
                    [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
    return unary_op(a, "add_const", [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor exp_op(const Tensor& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
    return unary_op(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary_op(a, "square", [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Tensor pow_const(const Tensor& a, double p) {
    return unary_op(a, "pow_const", [p](double x) { return std::pow(x, p); },
                    [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor acos_clamped(const Tensor& a, double eps) {
    const double lo = -1.0 + eps, hi = 1.0 - eps;
    return unary_op(a, "acos_clamped",
                    [lo, hi](double x) { return std::acos(std::clamp(x, lo, hi)); },
                    [lo, hi](double x, double) {
                        if (x < lo || x > hi) return 0.0;
                        return -1.0 / std::sqrt(1.0 - x * x);
                    });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(a, "leaky_relu",
                    [slope](double x) { return x >= 0.0 ? x : slope * x; },
                    [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, "sigmoid",
                    [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor shifted_relu(const Tensor& a, double k) {
    return unary_op(a, "shifted_relu",
                    [k](double x) { return x > k ? x - k : 0.0; },
                    [k](double x, double) { return x > k ? 1.0 : 0.0; });
}

// ---- broadcast helpers ----

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    require_rank2(mat, "add_rowvec");
    if (vec.rank() != 1 || vec.shape()[0] != mat.shape()[1]) {
        throw DimensionError("add_rowvec: vector " + shape_str(vec.shape()) +
                             " does not match matrix " + shape_str(mat.shape()));
    }
    const std::size_t rows = mat.shape()[0], cols = mat.shape()[1];
    std::vector<double> v(mat.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            v[r * cols + c] = mat.values()[r * cols + c] + vec.values()[c];
    auto out = make_node(mat.shape(), std::move(v));
    auto mn = mat.node(), vn = vec.node();
    detail::Node* o = out.get();
    return finish(out, {&mat, &vec},
                  [mn, vn, o, rows, cols] {
                      if (mn->requires_grad) {
                          mn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              mn->grad[i] += o->grad[i];
                      }
                      if (vn->requires_grad) {
                          vn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c)
                                  vn->grad[c] += o->grad[r * cols + c];
                      }
                  },
                  "add_rowvec");
}

Tensor scale_rows(const Tensor& mat, const Tensor& vec) {
    require_rank2(mat, "scale_rows");
    if (vec.rank() != 1 || vec.shape()[0] != mat.shape()[0]) {
        throw DimensionError("scale_rows: vector " + shape_str(vec.shape()) +
                             " does not match matrix " + shape_str(mat.shape()));
    }
    const std::size_t rows = mat.shape()[0], cols = mat.shape()[1];
    std::vector<double> v(mat.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            v[r * cols + c] = mat.values()[r * cols + c] * vec.values()[r];
    auto out = make_node(mat.shape(), std::move(v));
    auto mn = mat.node(), vn = vec.node();
    detail::Node* o = out.get();
    return finish(out, {&mat, &vec},
                  [mn, vn, o, rows, cols] {
                      if (mn->requires_grad) {
                          mn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c)
                                  mn->grad[r * cols + c] +=
                                      o->grad[r * cols + c] * vn->value[r];
                      }
                      if (vn->requires_grad) {
                          vn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                              double acc = 0.0;
                              for (std::size_t c = 0; c < cols; ++c)
                                  acc += o->grad[r * cols + c] * mn->value[r * cols + c];
                              vn->grad[r] += acc;
                          }
                      }
                  },
                  "scale_rows");
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) {
        throw DimensionError("mul_scalar_tensor: scalar operand has size " +
                             std::to_string(s.size()));
    }
    const double sv = s.values()[0];
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * sv;
    auto out = make_node(x.shape(), std::move(v));
    auto xn = x.node(), sn = s.node();
    detail::Node* o = out.get();
    return finish(out, {&x, &s},
                  [xn, sn, o] {
                      if (xn->requires_grad) {
                          xn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              xn->grad[i] += o->grad[i] * sn->value[0];
                      }
                      if (sn->requires_grad) {
                          sn->ensure_grad();
                          double acc = 0.0;
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              acc += o->grad[i] * xn->value[i];
                          sn->grad[0] += acc;
                      }
                  },
                  "mul_scalar_tensor");
}

Tensor sub_scalar_tensor(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) {
        throw DimensionError("sub_scalar_tensor: scalar operand has size " +
                             std::to_string(s.size()));
    }
    const double sv = s.values()[0];
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] - sv;
    auto out = make_node(x.shape(), std::move(v));
    auto xn = x.node(), sn = s.node();
    detail::Node* o = out.get();
    return finish(out, {&x, &s},
                  [xn, sn, o] {
                      if (xn->requires_grad) {
                          xn->ensure_grad();
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              xn->grad[i] += o->grad[i];
                      }
                      if (sn->requires_grad) {
                          sn->ensure_grad();
                          double acc = 0.0;
                          for (std::size_t i = 0; i < o->grad.size(); ++i)
                              acc += o->grad[i];
                          sn->grad[0] -= acc;
                      }
                  },
                  "sub_scalar_tensor");
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> v(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
                v[i * n + j] += aip * bv[p * n + j];
        }
    auto out = make_node({m, n}, std::move(v));
    auto an = a.node(), bn = b.node();
    detail::Node* o = out.get();
    return finish(out, {&a, &b},
                  [an, bn, o, m, k, n] {
                      if (an->requires_grad) {
                          an->ensure_grad();
                          // dA += dC B^T
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                  double acc = 0.0;
                                  for (std::size_t j = 0; j < n; ++j)
                                      acc += o->grad[i * n + j] * bn->value[p * n + j];
                                  an->grad[i * k + p] += acc;
                              }
                      }
                      if (bn->requires_grad) {
                          bn->ensure_grad();
                          // dB += A^T dC
                          for (std::size_t p = 0; p < k; ++p)
                              for (std::size_t i = 0; i < m; ++i) {
                                  const double aip = an->value[i * k + p];
                                  for (std::size_t j = 0; j < n; ++j)
                                      bn->grad[p * n + j] += aip * o->grad[i * n + j];
                              }
                      }
                  },
                  "matmul");
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.values()[i * n + j];
    auto out = make_node({n, m}, std::move(v));
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o, m, n] {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                              an->grad[i * n + j] += o->grad[j * m + i];
                  },
                  "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                             " as " + shape_str(shape));
    }
    auto out = make_node(std::move(shape), a.values());
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o] {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < o->grad.size(); ++i)
                          an->grad[i] += o->grad[i];
                  },
                  "reshape");
}

// ---- gather / reductions ----

Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices) {
    std::vector<double> v(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.size()) {
            throw DimensionError("gather: index " + std::to_string(indices[i]) +
                                 " out of range for size " + std::to_string(a.size()));
        }
        v[i] = a.values()[indices[i]];
    }
    auto out = make_node({indices.size()}, std::move(v));
    auto an = a.node();
    detail::Node* o = out.get();
    auto idx = indices;
    return finish(out, {&a},
                  [an, o, idx] {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < idx.size(); ++i)
                          an->grad[idx[i]] += o->grad[i];
                  },
                  "gather");
}

namespace {

Tensor extremum(const Tensor& a, const char* name, bool want_max) {
    if (a.size() == 0) throw DimensionError(std::string(name) + ": empty tensor");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < a.size(); ++i) {
        const bool better = want_max ? a.values()[i] > a.values()[arg]
                                     : a.values()[i] < a.values()[arg];
        if (better) arg = i;
    }
    auto out = make_node({1}, {a.values()[arg]});
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o, arg] {
                      an->ensure_grad();
                      an->grad[arg] += o->grad[0];
                  },
                  name);
}

}  // namespace

Tensor reduce_min(const Tensor& a) { return extremum(a, "reduce_min", false); }
Tensor reduce_max(const Tensor& a) { return extremum(a, "reduce_max", true); }

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.values()) acc += x;
    auto out = make_node({1}, {acc});
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o] {
                      an->ensure_grad();
                      for (std::size_t i = 0; i < an->grad.size(); ++i)
                          an->grad[i] += o->grad[0];
                  },
                  "sum");
}

// ---- softmax / pooling ----

namespace {

// View a rank-1/2 tensor as `slices` independent lanes of length `len` with
// stride `stride`; softmax and pooling reduce along a lane.
struct AxisView {
    std::size_t slices, len, outer_stride, inner_stride;
};

AxisView axis_view(const Tensor& a, std::size_t axis, const char* op) {
    if (a.rank() == 1) {
        if (axis != 0)
            throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                                 " out of range for rank-1 tensor");
        return {1, a.shape()[0], 1, 1};
    }
    if (a.rank() == 2) {
        if (axis > 1)
            throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                                 " out of range for rank-2 tensor");
        const std::size_t rows = a.shape()[0], cols = a.shape()[1];
        if (axis == 0) return {cols, rows, 1, cols};  // reduce down each column
        return {rows, cols, cols, 1};                 // reduce across each row
    }
    throw DimensionError(std::string(op) + ": only rank 1 and 2 supported, got " +
                         shape_str(a.shape()));
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
    const AxisView view = axis_view(a, axis, "softmax");
    if (view.len == 0) throw DimensionError("softmax: empty axis");
    std::vector<double> v(a.size());
    for (std::size_t s = 0; s < view.slices; ++s) {
        const std::size_t base = s * view.outer_stride;
        double mx = a.values()[base];
        for (std::size_t i = 1; i < view.len; ++i)
            mx = std::max(mx, a.values()[base + i * view.inner_stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < view.len; ++i) {
            const std::size_t at = base + i * view.inner_stride;
            v[at] = std::exp(a.values()[at] - mx);
            z += v[at];
        }
        for (std::size_t i = 0; i < view.len; ++i) v[base + i * view.inner_stride] /= z;
    }
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o, view] {
                      an->ensure_grad();
                      for (std::size_t s = 0; s < view.slices; ++s) {
                          const std::size_t base = s * view.outer_stride;
                          double dot = 0.0;
                          for (std::size_t i = 0; i < view.len; ++i) {
                              const std::size_t at = base + i * view.inner_stride;
                              dot += o->grad[at] * o->value[at];
                          }
                          for (std::size_t i = 0; i < view.len; ++i) {
                              const std::size_t at = base + i * view.inner_stride;
                              an->grad[at] += o->value[at] * (o->grad[at] - dot);
                          }
                      }
                  },
                  "softmax");
}

Tensor avg_pool(const Tensor& a, std::size_t axis) {
    const AxisView view = axis_view(a, axis, "avg_pool");
    if (view.len == 0) throw DimensionError("avg_pool: zero-length axis");
    std::vector<double> v(view.slices);
    for (std::size_t s = 0; s < view.slices; ++s) {
        const std::size_t base = s * view.outer_stride;
        double acc = 0.0;
        for (std::size_t i = 0; i < view.len; ++i)
            acc += a.values()[base + i * view.inner_stride];
        v[s] = acc / static_cast<double>(view.len);
    }
    auto out = make_node({view.slices}, std::move(v));
    auto an = a.node();
    detail::Node* o = out.get();
    return finish(out, {&a},
                  [an, o, view] {
                      an->ensure_grad();
                      const double inv = 1.0 / static_cast<double>(view.len);
                      for (std::size_t s = 0; s < view.slices; ++s) {
                          const std::size_t base = s * view.outer_stride;
                          for (std::size_t i = 0; i < view.len; ++i)
                              an->grad[base + i * view.inner_stride] += o->grad[s] * inv;
                      }
                  },
                  "avg_pool");
}

// ---- composites ----

Tensor affine_map(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2(x, "affine_map");
    require_rank2(w, "affine_map");
    if (x.shape()[1] != w.shape()[0] || b.rank() != 1 ||
        b.shape()[0] != w.shape()[1]) {
        throw DimensionError("affine_map: incompatible shapes x" +
                             shape_str(x.shape()) + " W" + shape_str(w.shape()) +
                             " b" + shape_str(b.shape()));
    }
    return add_rowvec(matmul(x, w), b);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    require_rank2(q, "scaled_dot_attention");
    require_rank2(k, "scaled_dot_attention");
    require_rank2(v, "scaled_dot_attention");
    const std::size_t d = q.shape()[1];
    if (d == 0) throw DimensionError("scaled_dot_attention: key dimension is 0");
    if (k.shape()[1] != d) {
        throw DimensionError("scaled_dot_attention: Q/K dims disagree, " +
                             shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    }
    if (v.shape()[0] != k.shape()[0]) {
        throw DimensionError("scaled_dot_attention: K/V row counts disagree, " +
                             shape_str(k.shape()) + " vs " + shape_str(v.shape()));
    }
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax(scores, 1), v);
}

Tensor dropout(const Tensor& x, double p, RngStream& rng, bool training) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.next_double() < p ? 0.0 : keep_scale;
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * mask[i];
    auto out = make_node(x.shape(), std::move(v));
    auto xn = x.node();
    detail::Node* o = out.get();
    return finish(out, {&x},
                  [xn, o, mask] {
                      xn->ensure_grad();
                      for (std::size_t i = 0; i < o->grad.size(); ++i)
                          xn->grad[i] += o->grad[i] * mask[i];
                  },
                  "dropout");
}

// ---- optimizer / schedule ----

void sgd_momentum_step(Tensor& param, const std::vector<double>& grad,
                       std::vector<double>& velocity, double lr, double momentum,
                       double weight_decay) {
    auto& value = param.values_mut();
    if (grad.size() != value.size() || velocity.size() != value.size()) {
        throw DimensionError("sgd_momentum_step: param/grad/velocity sizes disagree");
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] + weight_decay * value[i];
        velocity[i] = momentum * velocity[i] + g;
        value[i] -= lr * velocity[i];
    }
}

double cosine_lr(std::size_t epoch, std::size_t total, double lr_max,
                 double lr_min) {
    if (total == 0) throw ConfigError("cosine_lr: total must be positive");
    if (epoch > total) {
        throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) +
                          " exceeds total " + std::to_string(total));
    }
    if (lr_min > lr_max) throw ConfigError("cosine_lr: lr_min exceeds lr_max");
    const double t = static_cast<double>(epoch) / static_cast<double>(total);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---- gradient verification ----

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& inputs, double eps) {
    Tensor base = f(inputs);
    if (base.size() != 1) throw DimensionError("grad_check: f must return a scalar");
    if (!std::isfinite(base.item())) throw NumericError("grad_check: f is not finite");
    for (auto& in : inputs) in.zero_grad();
    base.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        analytic.push_back(in.node()->grad.size() == in.size()
                               ? in.node()->grad
                               : std::vector<double>(in.size(), 0.0));
    }

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& value = inputs[t].values_mut();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + eps;
            const double up = f(inputs).item();
            value[i] = saved - eps;
            const double down = f(inputs).item();
            value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: f is not finite near the input");
            }
            const double fd = (up - down) / (2.0 * eps);
            const double err = std::abs(analytic[t][i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace cofinal
