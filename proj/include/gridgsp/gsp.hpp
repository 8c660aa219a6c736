#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/spectral.hpp"
#include "gridgsp/topology.hpp"

#include <cmath>
#include <ostream>
#include <vector>

namespace gridgsp {

/// Relative guard below which a vertex value counts as zero for the
/// local-smoothness division.
inline constexpr double kMaskEpsilonRel = 1e-9;

/// Per-vertex smoothness s(n) = (Lx)(n) / x(n); `defined_mask` is false
/// wherever |x(n)| falls under the guard.
struct LocalSmoothnessVector {
    Vector s;
    std::vector<bool> defined_mask;
};

/// Rayleigh quotient x'Lx / x'x.
inline double global_smoothness(const Matrix& laplacian, const Vector& x) {
    if (x.size() != laplacian.rows()) throw DimensionError("signal length does not match graph");
    double denom = x.squaredNorm();
    if (denom == 0.0) throw ValidationError("global smoothness is undefined for the zero signal");
    return x.dot(laplacian * x) / denom;
}

inline double global_smoothness(const GridGraph& g, const Vector& x) {
    return global_smoothness(g.laplacian, x);
}

inline LocalSmoothnessVector local_smoothness(const Matrix& laplacian, const Vector& x) {
    if (x.size() != laplacian.rows()) throw DimensionError("signal length does not match graph");
    LocalSmoothnessVector out;
    out.s = Vector::Zero(x.size());
    out.defined_mask.assign(static_cast<std::size_t>(x.size()), false);
    const double guard = kMaskEpsilonRel * x.cwiseAbs().maxCoeff();
    Vector lx = laplacian * x;
    for (Index n = 0; n < x.size(); ++n) {
        if (std::abs(x(n)) > guard) {
            out.s(n) = lx(n) / x(n);
            out.defined_mask[static_cast<std::size_t>(n)] = true;
        }
    }
    return out;
}

inline LocalSmoothnessVector local_smoothness(const GridGraph& g, const Vector& x) {
    return local_smoothness(g.laplacian, x);
}

/// Vertex-frequency energy distribution E(n,k) = x(n) u_k(n) X(lambda_k),
/// the rank-factorized form of the double sum over m.
struct EnergyDistribution {
    Matrix e;  // N x N, rows = vertices, cols = spectral indices
};

inline EnergyDistribution vfed(const SpectralBasis& basis, const Vector& x) {
    if (x.size() != basis.n()) throw DimensionError("signal length does not match basis");
    Vector spectrum = gft(basis, x);
    EnergyDistribution dist;
    dist.e = x.asDiagonal() * basis.eigenvectors * spectrum.asDiagonal();
    return dist;
}

/// m(n) = sum_k |E_after(n,k) - E_before(n,k)|; peaks at stressed vertices.
inline Vector vfed_difference_marginal(const EnergyDistribution& after,
                                       const EnergyDistribution& before) {
    if (after.e.rows() != before.e.rows() || after.e.cols() != before.e.cols())
        throw DimensionError("energy distributions have different shapes");
    return (after.e - before.e).cwiseAbs().rowwise().sum();
}

/// CSV export `n,k,energy` (1-based indices).
inline void write_energy_csv(std::ostream& out, const EnergyDistribution& dist) {
    out << "n,k,energy\n";
    for (Index n = 0; n < dist.e.rows(); ++n)
        for (Index k = 0; k < dist.e.cols(); ++k)
            out << (n + 1) << ',' << (k + 1) << ',' << format_double(dist.e(n, k)) << '\n';
}

}  // namespace gridgsp
