#pragma once

#include <cstddef>
#include <vector>

#include "cofinal/etf.hpp"
#include "cofinal/tensor.hpp"

namespace cofinal {

struct LossWeights {
    double lambda_coarse = 1.0;
    double lambda_fine = 1.0;
    double lambda_reg = 1.0;

    void validate() const;
};

// (1/2N) sum_i (s_i - s_hat_i)^2 over per-sample predicted-score scalars.
Tensor score_loss(const std::vector<Tensor>& pred, const std::vector<double>& truth);

// Mean cross-entropy of per-sample coarse logits against grade labels.
Tensor coarse_loss(const std::vector<Tensor>& logits,
                   const std::vector<std::size_t>& grades);

// (1/2N) sum_i (<h_bar_i, e_{t_i}> - 1)^2 where h_bar is the l2-normalized
// pooled fine feature.  A degenerate (zero) pooled feature contributes the
// constant 1/2 with no gradient.
Tensor fine_loss(const std::vector<Tensor>& pooled_fine,
                 const std::vector<std::size_t>& targets, const EtfMatrix& etf);

// G x G quality distances D_ij = |i - j|, row-major.
std::vector<double> quality_distance_matrix(std::size_t grades);

// KL divergence between the prototype angle structure and the quality
// distances: rows of the prototype matrix are unit-normalized, pairwise
// angles arccos(clamped cosine) are taken over the off-diagonal, and both
// the angle and distance off-diagonals are normalized into probability
// vectors before KL(angles || distances).
Tensor graph_reg_loss(const Tensor& prototypes);

// L_S + lambda_C L_C + lambda_F L_F + lambda_R L_R.  Terms with a zero
// weight are omitted from the graph so they contribute no gradient at all.
Tensor total_loss(const Tensor& score, const Tensor& coarse, const Tensor& fine,
                  const Tensor& reg, const LossWeights& w);

}  // namespace cofinal
