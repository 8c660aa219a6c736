#pragma once

#include "gridgsp/core.hpp"
#include "gridgsp/topology.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace gridgsp {

/// Vertex-indexed measurement vector living on one graph.
struct GraphSignal {
    Vector values;
    std::string units;            // "radians" for angles, "per-unit" for flows
    const GridGraph* graph = nullptr;  // non-owning; graphs outlive signals
};

/// Sorted eigenpairs of a Laplacian with deterministic signs: in every
/// eigenvector the first component with |value| > 1e-10 is positive. Ties in
/// eigenvalues are ordered by lexicographic comparison of the sign-fixed
/// eigenvectors, so the basis is a function of the matrix alone.
struct SpectralBasis {
    Vector eigenvalues;             // ascending
    Matrix eigenvectors;            // column k = u_k
    Vector normalized_frequencies;  // (lambda - min) / (max - min), in [0, 1]

    Index n() const { return eigenvalues.size(); }
};

namespace detail {

inline void fix_sign(Eigen::Ref<Vector> v) {
    for (Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-10) {
            if (v(i) < 0.0) v = -v;
            return;
        }
    }
}

inline bool lex_less(const Vector& a, const Vector& b) {
    for (Index i = 0; i < a.size(); ++i) {
        if (a(i) < b(i)) return true;
        if (a(i) > b(i)) return false;
    }
    return false;
}

}  // namespace detail

inline SpectralBasis eigendecompose(const Matrix& laplacian) {
    if (laplacian.rows() != laplacian.cols()) throw DimensionError("Laplacian must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
    if (solver.info() != Eigen::Success) {
        double residual = (laplacian * solver.eigenvectors() -
                           solver.eigenvectors() * solver.eigenvalues().asDiagonal())
                              .norm();
        throw NumericalError("eigendecomposition failed to converge", residual);
    }
    const Index n = laplacian.rows();
    SpectralBasis basis;
    basis.eigenvalues = solver.eigenvalues();
    basis.eigenvectors = solver.eigenvectors();
    for (Index k = 0; k < n; ++k) detail::fix_sign(basis.eigenvectors.col(k));

    // Deterministic order inside (numerically) degenerate groups.
    const double tie_tol = 1e-9 * std::max(1.0, std::abs(basis.eigenvalues(n - 1)));
    Index k = 0;
    while (k < n) {
        Index end = k + 1;
        while (end < n && basis.eigenvalues(end) - basis.eigenvalues(k) <= tie_tol) ++end;
        if (end - k > 1) {
            std::vector<Index> order(static_cast<std::size_t>(end - k));
            std::iota(order.begin(), order.end(), k);
            std::sort(order.begin(), order.end(), [&](Index a, Index b) {
                return detail::lex_less(basis.eigenvectors.col(a), basis.eigenvectors.col(b));
            });
            Matrix cols(n, end - k);
            Vector vals(end - k);
            for (Index t = 0; t < end - k; ++t) {
                cols.col(t) = basis.eigenvectors.col(order[static_cast<std::size_t>(t)]);
                vals(t) = basis.eigenvalues(order[static_cast<std::size_t>(t)]);
            }
            basis.eigenvectors.middleCols(k, end - k) = cols;
            basis.eigenvalues.segment(k, end - k) = vals;
        }
        k = end;
    }

    double residual = (laplacian * basis.eigenvectors -
                       basis.eigenvectors * basis.eigenvalues.asDiagonal())
                          .cwiseAbs()
                          .maxCoeff();
    if (residual > 1e-8)
        throw NumericalError("eigenpair residual exceeds contract", residual);

    basis.normalized_frequencies = Vector::Zero(n);
    double lo = basis.eigenvalues(0), hi = basis.eigenvalues(n - 1);
    if (hi - lo > 0.0)
        basis.normalized_frequencies = (basis.eigenvalues.array() - lo) / (hi - lo);
    return basis;
}

inline SpectralBasis eigendecompose(const GridGraph& g) { return eigendecompose(g.laplacian); }

/// Graph Fourier transform: spectrum(k) = sum_n x(n) u_k(n).
inline Vector gft(const SpectralBasis& basis, const Vector& x) {
    if (x.size() != basis.n()) throw DimensionError("signal length does not match basis");
    return basis.eigenvectors.transpose() * x;
}

inline Vector gft(const SpectralBasis& basis, const GraphSignal& x) { return gft(basis, x.values); }

/// Inverse graph Fourier transform: x(n) = sum_k spectrum(k) u_k(n).
inline Vector igft(const SpectralBasis& basis, const Vector& spectrum) {
    if (spectrum.size() != basis.n()) throw DimensionError("spectrum length does not match basis");
    return basis.eigenvectors * spectrum;
}

/// CSV export `k,lambda,lambda_hat,coefficient` (k is 1-based).
inline void write_spectrum_csv(std::ostream& out, const SpectralBasis& basis,
                               const Vector& spectrum) {
    if (spectrum.size() != basis.n()) throw DimensionError("spectrum length does not match basis");
    out << "k,lambda,lambda_hat,coefficient\n";
    for (Index k = 0; k < basis.n(); ++k)
        out << (k + 1) << ',' << format_double(basis.eigenvalues(k)) << ','
            << format_double(basis.normalized_frequencies(k)) << ','
            << format_double(spectrum(k)) << '\n';
}

}  // namespace gridgsp
