#include "cofinal/etf.hpp"

#include <cmath>
#include <string>

#include "cofinal/errors.hpp"

namespace cofinal {

namespace {

// One modified Gram-Schmidt sweep over the K columns of the d x K
// column-major matrix `u`.
void mgs_pass(std::vector<double>& u, std::size_t d, std::size_t k) {
    for (std::size_t j = 0; j < k; ++j) {
        double* col_j = u.data() + j * d;
        for (std::size_t i = 0; i < j; ++i) {
            const double* col_i = u.data() + i * d;
            double proj = 0.0;
            for (std::size_t r = 0; r < d; ++r) proj += col_i[r] * col_j[r];
            for (std::size_t r = 0; r < d; ++r) col_j[r] -= proj * col_i[r];
        }
        double norm_sq = 0.0;
        for (std::size_t r = 0; r < d; ++r) norm_sq += col_j[r] * col_j[r];
        const double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) {
            throw NumericError("random_orthonormal: degenerate column after projection");
        }
        for (std::size_t r = 0; r < d; ++r) col_j[r] /= norm;
    }
}

}  // namespace

std::vector<double> random_orthonormal(std::size_t d, std::size_t k,
                                       RngStream& rng) {
    if (k < 2) throw ConfigError("random_orthonormal: need K >= 2, got " + std::to_string(k));
    if (d < k) {
        throw InfeasibleRotationError("random_orthonormal: need d >= K, got d=" +
                                      std::to_string(d) + " K=" + std::to_string(k));
    }
    std::vector<double> u(d * k);
    for (double& x : u) x = rng.next_normal();
    mgs_pass(u, d, k);
    mgs_pass(u, d, k);  // re-orthogonalize once
    return u;
}

EtfMatrix build_etf(std::size_t d, std::size_t k, RngStream& rng) {
    if (k < 2) throw ConfigError("build_etf: need K >= 2, got " + std::to_string(k));
    if (d < k) {
        throw InfeasibleRotationError("build_etf: need d >= K, got d=" +
                                      std::to_string(d) + " K=" + std::to_string(k));
    }
    const std::uint64_t seed = rng.state();
    const std::vector<double> u = random_orthonormal(d, k, rng);

    // E = sqrt(K/(K-1)) U (I - ones/K); column j of E becomes prototype row j.
    EtfMatrix etf;
    etf.k = k;
    etf.d = d;
    etf.seed = seed;
    etf.rows.assign(k * d, 0.0);
    const double kk = static_cast<double>(k);
    const double front = std::sqrt(kk / (kk - 1.0));
    // Column means of U, i.e. U * ones / K per output row.
    std::vector<double> u_row_mean(d, 0.0);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t r = 0; r < d; ++r) u_row_mean[r] += u[j * d + r];
    for (double& x : u_row_mean) x /= kk;
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t r = 0; r < d; ++r)
            etf.rows[j * d + r] = front * (u[j * d + r] - u_row_mean[r]);
    return etf;
}

double verify_etf(const EtfMatrix& etf) {
    const double kk = static_cast<double>(etf.k);
    double worst = 0.0;
    for (std::size_t i = 0; i < etf.k; ++i) {
        for (std::size_t j = i; j < etf.k; ++j) {
            double dot = 0.0;
            const double* ri = etf.row(i);
            const double* rj = etf.row(j);
            for (std::size_t r = 0; r < etf.d; ++r) dot += ri[r] * rj[r];
            // K/(K-1) * delta_ij - 1/(K-1): unit diagonal, -1/(K-1) off it.
            const double target = (i == j ? kk / (kk - 1.0) : 0.0) - 1.0 / (kk - 1.0);
            worst = std::max(worst, std::abs(dot - target));
        }
    }
    return worst;
}

}  // namespace cofinal
