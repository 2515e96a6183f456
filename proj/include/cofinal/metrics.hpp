#pragma once

#include <vector>

namespace cofinal {

// 1-based fractional ranks; tied values receive the average of their
// positional ranks, so ranks always sum to N(N+1)/2.
std::vector<double> ranks(const std::vector<double>& values);

// Spearman rank correlation: the Pearson correlation coefficient between the
// two rank vectors.  Throws MetricError for N < 2 or a constant batch.
double srcc(const std::vector<double>& pred, const std::vector<double>& truth);

// tanh(mean(atanh(rho_i))).  |rho| == 1 is clamped to +-(1 - 1e-12) with a
// warning on stderr.
double fisher_z_average(const std::vector<double>& rhos);

}  // namespace cofinal
