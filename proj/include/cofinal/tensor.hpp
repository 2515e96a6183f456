#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "cofinal/errors.hpp"
#include "cofinal/rng.hpp"

namespace cofinal {

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // accumulates into parents' grads

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals with reverse-mode automatic
// differentiation.  A Tensor is a cheap handle onto a graph node; ops build
// the tape dynamically and backward() replays it in reverse topological
// order.  Every forward op verifies its output is finite and throws
// NumericError otherwise.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }
    // Direct write access to the buffer.  Only meaningful on leaf tensors
    // (parameters, optimizer updates); interior graph nodes are rebuilt on
    // every forward pass anyway.
    std::vector<double>& values_mut() { return node_->value; }

    double item() const;  // value of a size-1 tensor

    const std::vector<double>& grad() const;
    void zero_grad() const;

    // Reverse-mode sweep from a scalar root.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// While a guard is alive on a thread, ops skip tape construction entirely
// (pure value computation, used for evaluation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- elementwise and structural ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor square(const Tensor& a);
Tensor pow_const(const Tensor& a, double p);
// acos of the input clamped to [-1+eps, 1-eps]; gradient is zero where the
// clamp is active, finite everywhere.
Tensor acos_clamped(const Tensor& a, double eps = 1e-7);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor sigmoid(const Tensor& a);
// max(0, x - k)
Tensor shifted_relu(const Tensor& a, double k = 0.5);

// mat [m x n] + row vector [n], broadcast over rows.
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);
// mat [m x n] with row i scaled by vec[i].
Tensor scale_rows(const Tensor& mat, const Tensor& vec);
// x scaled by a size-1 tensor (broadcast scalar with gradient to both).
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);
// x minus a size-1 tensor broadcast over all entries.
Tensor sub_scalar_tensor(const Tensor& x, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Pick entries by flat index; repeated indices accumulate gradient.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices);
// Scalar min/max reductions; ties resolve to the lowest index.
Tensor reduce_min(const Tensor& a);
Tensor reduce_max(const Tensor& a);

Tensor sum(const Tensor& a);

// Numerically stable softmax along `axis` (max subtraction).  Rank 1 or 2.
Tensor softmax(const Tensor& a, std::size_t axis = 0);

// Arithmetic mean along `axis`; the output drops that axis.
Tensor avg_pool(const Tensor& a, std::size_t axis);

// y = x W + b for x [n x d_in], W [d_in x d_out], b [d_out].
Tensor affine_map(const Tensor& x, const Tensor& w, const Tensor& b);

// softmax(Q K^T / sqrt(d)) V for Q [m x d], K [n x d], V [n x v].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Training: zero each entry with probability p and scale survivors by
// 1/(1-p); inference: identity (consumes no draws).
Tensor dropout(const Tensor& x, double p, RngStream& rng, bool training);

// ---- optimizer and schedule ----

// g <- grad + weight_decay * param; v <- momentum * v + g;
// param <- param - lr * v.
void sgd_momentum_step(Tensor& param, const std::vector<double>& grad,
                       std::vector<double>& velocity, double lr,
                       double momentum, double weight_decay);

// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2
double cosine_lr(std::size_t epoch, std::size_t total, double lr_max,
                 double lr_min);

// ---- gradient verification ----

// Max over all entries of all inputs of
// |autodiff - central difference| / max(1, |central difference|).
// `f` must rebuild its graph from the current input values on every call and
// return a scalar tensor.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace cofinal
