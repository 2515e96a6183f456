#include "cofinal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "cofinal/errors.hpp"

namespace cofinal {

std::vector<double> ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    if (n < 2) throw MetricError("ranks: need at least 2 values");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> out(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // positions i..j (0-based) share the average of ranks i+1..j+1
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) out[order[t]] = avg;
        i = j + 1;
    }
    return out;
}

double srcc(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) {
        throw MetricError("srcc: batch sizes disagree");
    }
    const std::size_t n = pred.size();
    if (n < 2) throw MetricError("srcc: need at least 2 samples");

    const std::vector<double> p = ranks(pred);
    const std::vector<double> q = ranks(truth);
    const double mean = 0.5 * static_cast<double>(n + 1);  // mean of 1..N survives ties
    double spq = 0.0, spp = 0.0, sqq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = p[i] - mean;
        const double dq = q[i] - mean;
        spq += dp * dq;
        spp += dp * dp;
        sqq += dq * dq;
    }
    if (spp == 0.0 || sqq == 0.0) {
        throw MetricError("srcc: correlation undefined for a constant batch");
    }
    return spq / std::sqrt(spp * sqq);
}

double fisher_z_average(const std::vector<double>& rhos) {
    if (rhos.empty()) throw MetricError("fisher_z_average: empty input");
    double acc = 0.0;
    for (double rho : rhos) {
        if (!(rho >= -1.0 && rho <= 1.0)) {
            throw MetricError("fisher_z_average: correlation " + std::to_string(rho) +
                              " outside [-1, 1]");
        }
        if (std::abs(rho) == 1.0) {
            std::fprintf(stderr,
                         "fisher_z_average: clamping |rho|=1 to 1-1e-12\n");
            rho = std::copysign(1.0 - 1e-12, rho);
        }
        acc += std::atanh(rho);
    }
    return std::tanh(acc / static_cast<double>(rhos.size()));
}

}  // namespace cofinal
