#include "cofinal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cofinal/errors.hpp"
#include "cofinal/model.hpp"

namespace cofinal {

void LossWeights::validate() const {
    for (double l : {lambda_coarse, lambda_fine, lambda_reg}) {
        if (!(std::isfinite(l) && l >= 0.0)) {
            throw ConfigError("LossWeights: weights must be finite and >= 0");
        }
    }
}

Tensor score_loss(const std::vector<Tensor>& pred, const std::vector<double>& truth) {
    if (pred.empty()) throw DimensionError("score_loss: empty batch");
    if (pred.size() != truth.size()) {
        throw DimensionError("score_loss: batch sizes disagree");
    }
    Tensor acc;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Tensor term = square(add_const(pred[i], -truth[i]));
        acc = i == 0 ? term : add(acc, term);
    }
    return scale(acc, 0.5 / static_cast<double>(pred.size()));
}

Tensor coarse_loss(const std::vector<Tensor>& logits,
                   const std::vector<std::size_t>& grades) {
    if (logits.empty()) throw DimensionError("coarse_loss: empty batch");
    if (logits.size() != grades.size()) {
        throw DimensionError("coarse_loss: batch sizes disagree");
    }
    Tensor acc;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const Tensor& l = logits[i];
        if (grades[i] >= l.size()) {
            throw LabelError("coarse_loss: grade " + std::to_string(grades[i]) +
                             " out of range for " + std::to_string(l.size()) + " classes");
        }
        // -log softmax(l)[g] = logsumexp(l) - l[g]; the max shift is a
        // detached constant, which leaves value and gradient exact.
        const double mx = *std::max_element(l.values().begin(), l.values().end());
        const Tensor lse = add_const(log_op(sum(exp_op(add_const(l, -mx)))), mx);
        const Tensor term = sub(lse, gather(l, {grades[i]}));
        acc = i == 0 ? term : add(acc, term);
    }
    return scale(acc, 1.0 / static_cast<double>(logits.size()));
}

Tensor fine_loss(const std::vector<Tensor>& pooled_fine,
                 const std::vector<std::size_t>& targets, const EtfMatrix& etf) {
    if (pooled_fine.empty()) throw DimensionError("fine_loss: empty batch");
    if (pooled_fine.size() != targets.size()) {
        throw DimensionError("fine_loss: batch sizes disagree");
    }
    Tensor acc;
    for (std::size_t i = 0; i < pooled_fine.size(); ++i) {
        const Tensor& h = pooled_fine[i];
        if (h.size() != etf.d) {
            throw DimensionError("fine_loss: feature dim does not match the ETF");
        }
        if (targets[i] >= etf.k) {
            throw LabelError("fine_loss: sub-grade " + std::to_string(targets[i]) +
                             " out of range for " + std::to_string(etf.k) + " classes");
        }
        Tensor term;
        const Tensor norm_sq = sum(square(h));
        if (std::sqrt(norm_sq.item()) < 1e-12) {
            term = Tensor::scalar(1.0);  // (0 - 1)^2, no gradient
        } else {
            const Tensor unit = mul_scalar_tensor(h, pow_const(norm_sq, -0.5));
            const Tensor proto = Tensor::from_values(
                {etf.d},
                std::vector<double>(etf.row(targets[i]), etf.row(targets[i]) + etf.d));
            const Tensor dot = sum(mul(unit, proto));
            term = square(add_const(dot, -1.0));
        }
        acc = i == 0 ? term : add(acc, term);
    }
    return scale(acc, 0.5 / static_cast<double>(pooled_fine.size()));
}

std::vector<double> quality_distance_matrix(std::size_t grades) {
    std::vector<double> d(grades * grades);
    for (std::size_t i = 0; i < grades; ++i)
        for (std::size_t j = 0; j < grades; ++j)
            d[i * grades + j] = static_cast<double>(i > j ? i - j : j - i);
    return d;
}

Tensor graph_reg_loss(const Tensor& prototypes) {
    if (prototypes.rank() != 2) {
        throw DimensionError("graph_reg_loss: expected [G x D] prototype matrix");
    }
    const std::size_t g = prototypes.shape()[0];
    const std::size_t dim = prototypes.shape()[1];
    if (g < 2) throw ConfigError("graph_reg_loss: need at least 2 prototypes");
    for (std::size_t r = 0; r < g; ++r) {
        double norm_sq = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double x = prototypes.values()[r * dim + c];
            norm_sq += x * x;
        }
        if (norm_sq < 1e-24) {
            throw DegeneratePrototypeError("graph_reg_loss: prototype row " +
                                           std::to_string(r) + " has zero norm");
        }
    }

    // Unit rows, pairwise cosines, clamped angles over the off-diagonal.
    const Tensor row_sum_sq =
        scale(avg_pool(square(prototypes), 1), static_cast<double>(dim));
    const Tensor unit_rows = scale_rows(prototypes, pow_const(row_sum_sq, -0.5));
    const Tensor cosines = matmul(unit_rows, transpose(unit_rows));

    std::vector<std::size_t> off_diag;
    off_diag.reserve(g * g - g);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j)
            if (i != j) off_diag.push_back(i * g + j);
    const Tensor angles = acos_clamped(gather(cosines, off_diag));

    // Both matrices flatten to probability vectors over the off-diagonal.
    const std::vector<double> dist = quality_distance_matrix(g);
    std::vector<double> q(off_diag.size());
    double q_total = 0.0;
    for (std::size_t t = 0; t < off_diag.size(); ++t) q_total += dist[off_diag[t]];
    for (std::size_t t = 0; t < off_diag.size(); ++t) q[t] = dist[off_diag[t]] / q_total;
    std::vector<double> log_q(q.size());
    for (std::size_t t = 0; t < q.size(); ++t) log_q[t] = std::log(q[t]);

    const Tensor p = mul_scalar_tensor(angles, pow_const(sum(angles), -1.0));
    const Tensor log_q_const = Tensor::from_values({q.size()}, std::move(log_q));
    return sum(mul(p, sub(log_op(p), log_q_const)));
}

Tensor total_loss(const Tensor& score, const Tensor& coarse, const Tensor& fine,
                  const Tensor& reg, const LossWeights& w) {
    w.validate();
    for (const Tensor* part : {&score, &coarse, &fine, &reg}) {
        if (!std::isfinite(part->item())) {
            throw NumericError("total_loss: non-finite loss part");
        }
    }
    Tensor total = score;
    if (w.lambda_coarse != 0.0) total = add(total, scale(coarse, w.lambda_coarse));
    if (w.lambda_fine != 0.0) total = add(total, scale(fine, w.lambda_fine));
    if (w.lambda_reg != 0.0) total = add(total, scale(reg, w.lambda_reg));
    return total;
}

}  // namespace cofinal
