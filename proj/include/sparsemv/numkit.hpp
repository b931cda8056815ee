#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsemv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using MultiIndex = std::vector<int>;

// Thrown when two independent computations of the same quantity disagree.
class NumericalConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ThinSvd {
    Matrix U;                 // M x r, orthonormal columns
    Vector singular_values;   // length r, strictly positive, nonincreasing
    Matrix V;                 // N x r, orthonormal columns

    [[nodiscard]] Index rank() const { return singular_values.size(); }
};

// max(rows, cols) * 2.2e-16; multiplied by s_max to get the absolute cutoff.
[[nodiscard]] double default_rank_rtol(Index rows, Index cols);

void require_finite(const Matrix& a, const char* what);

[[nodiscard]] ThinSvd thin_svd(const Matrix& a);
[[nodiscard]] ThinSvd thin_svd(const Matrix& a, double rank_rtol);

[[nodiscard]] Matrix pinv(const Matrix& a);
[[nodiscard]] Matrix pinv(const Matrix& a, double rank_rtol);

// Rank with the same cutoff rule as thin_svd; 0 for the zero matrix.
[[nodiscard]] Index numerical_rank(const Matrix& a);

// c^T G^+ c for symmetric psd G.
[[nodiscard]] double gram_projection_sq_norm(const Vector& c, const Matrix& gram);
[[nodiscard]] double split_gram_projection_sq_norm(const Vector& c1, const Matrix& g1,
                                                   const Vector& c2, const Matrix& g2);

inline constexpr int kHermiteMaxOrder = 60;

// Probabilists' Hermite polynomial He_l(x).
[[nodiscard]] double hermite_prob(int l, double x);
// He_0(x) .. He_L(x).
[[nodiscard]] std::vector<double> hermite_prob_all(int max_order, double x);
// He_l(x) / sqrt(l!), orthonormal under the standard Gaussian weight; no overflow for large l.
[[nodiscard]] std::vector<double> hermite_normalized_all(int max_order, double x);

inline constexpr Index kBruteForceMaxColumns = 20;
inline constexpr int kRipMaxOrder = 6;

[[nodiscard]] Index spark(const Matrix& a);
[[nodiscard]] double coherence(const Matrix& a);

enum class RipConvention {
    squared_norm,      // (1-d)|z|^2 <= |H_I z|^2 <= (1+d)|z|^2
    singular_value,    // singular values of the block concatenation in [1-d, 1+d]
};

struct RipResult {
    double delta = 0.0;
    RipConvention convention = RipConvention::squared_norm;
    bool rank_deficient = false;
    std::vector<Index> worst_subset;

    [[nodiscard]] std::string convention_name() const;
};

// Columns of a plain matrix, squared-norm convention.
[[nodiscard]] RipResult rip_constant(const Matrix& a, int order);
// Block family H_k (M x r_k), singular-value convention; rank deficiency gives delta = 1.
[[nodiscard]] RipResult rip_constant(const std::vector<Matrix>& blocks, int order);

// H with C = H H^T from the thin eigendecomposition of a symmetric psd C.
[[nodiscard]] Matrix psd_factor(const Matrix& c);

// All k-subsets of {0..n-1} in lexicographic order.
void for_each_subset(Index n, Index k, const std::function<bool(const std::vector<Index>&)>& visit);

// Taylor coefficients d^p f(0) / p! of a smooth f on [-radius, radius]^dim, for all
// multi-indices with |p| <= max_order, from a tensor Chebyshev interpolant.
[[nodiscard]] std::map<MultiIndex, double> taylor_coefficients(
    const std::function<double(const Vector&)>& f, int dim, int max_order, double radius,
    int chebyshev_degree = 24);

[[nodiscard]] double factorial(int n);
[[nodiscard]] double multi_factorial(const MultiIndex& p);

}  // namespace sparsemv
