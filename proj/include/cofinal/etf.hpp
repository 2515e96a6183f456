#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cofinal/rng.hpp"

namespace cofinal {

// Fixed simplex equiangular-tight-frame classifier: K unit-norm prototype
// rows e_1..e_K of dimension d with pairwise inner product -1/(K-1)
// (Gram matrix K/(K-1) delta_ij - 1/(K-1)).  Non-learnable; never
// registered with the optimizer.
struct EtfMatrix {
    std::size_t k = 0;         // class count
    std::size_t d = 0;         // feature dimension
    std::uint64_t seed = 0;    // seed of the random rotation
    std::vector<double> rows;  // K x d row-major, row j = prototype e_j

    const double* row(std::size_t j) const { return rows.data() + j * d; }
};

// Random d x K matrix with orthonormal columns (column-major storage),
// built by modified Gram-Schmidt on a standard-normal draw with one
// re-orthogonalization pass.  Requires d >= K.
std::vector<double> random_orthonormal(std::size_t d, std::size_t k,
                                       RngStream& rng);

// sqrt(K/(K-1)) * U * (I_K - ones/K), stored as K rows of dimension d.
EtfMatrix build_etf(std::size_t d, std::size_t k, RngStream& rng);

// Max absolute deviation of the Gram matrix from
// K/(K-1) * delta_ij - 1/(K-1).
double verify_etf(const EtfMatrix& etf);

}  // namespace cofinal
