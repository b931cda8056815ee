#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sparsemv/models.hpp"

namespace sparsemv {

// Componentwise estimator acting on a single observation entry y_k.
struct DiagonalEstimator {
    enum class Kind { ls, ht };
    Kind kind = Kind::ls;
    double threshold = 0.0;

    static DiagonalEstimator ls() { return {Kind::ls, 0.0}; }
    static DiagonalEstimator ht(double t);

    [[nodiscard]] double operator()(double y) const {
        return kind == Kind::ht && std::abs(y) < threshold ? 0.0 : y;
    }
    [[nodiscard]] std::string name() const;
};

// Taylor coefficients m_l of a prescribed mean at `center`:
// gamma(x_k) = sum_l m_l / l! (x_k - center)^l.
struct HermiteSeries {
    std::vector<double> m;
    double sigma = 1.0;
    double center = 0.0;

    // sum_l m_l^2 sigma^{2l} / l!
    [[nodiscard]] double energy() const;
    // m_l^2 sigma^{2l} / l!, overflow-free
    [[nodiscard]] double energy_term(int l) const;
    [[nodiscard]] double mean_at(double xk) const;
    // m_l sigma^l / sqrt(l!): coefficients in the orthonormal Hermite basis
    [[nodiscard]] std::vector<double> orthonormal_coefficients() const;
    // Throws on non-finite coefficients, more than 61 of them, or a growing tail.
    void validate() const;
    // Last two retained energy terms below 1e-12 of the running sum.
    [[nodiscard]] bool tail_negligible() const;
};

// Drop trailing terms once two consecutive energy terms fall below 1e-12 of the
// running sum (a single small term can be an accident of parity).
[[nodiscard]] HermiteSeries truncate_series(HermiteSeries s);

inline constexpr double kSeriesTailRtol = 1e-12;

// E{f(Y)} for Y ~ N(mean, sigma^2) by adaptive Gauss-Kronrod on
// [mean - w sigma, mean + w sigma], split at the given breakpoints.
[[nodiscard]] double gaussian_expectation(const std::function<double(double)>& f, double mean,
                                          double sigma, const std::vector<double>& breaks,
                                          double half_width_sigmas = 10.0);

// ---- SLM / SSNM estimators ----------------------------------------------------

[[nodiscard]] Vector ls(const SlmProblem& p, const Vector& y);
[[nodiscard]] Vector omp(const SlmProblem& p, const Vector& y, int iterations);
[[nodiscard]] Vector ht_ssnm(const Vector& y, double threshold);
[[nodiscard]] Vector ml_ssnm(const Vector& y, int S);

// Index set used by the product formulas for t and h. Requires k outside the set.
[[nodiscard]] Support lmv_index_set(const Vector& x0, Index k, int S);
// |supp(x0) U {k}| == S + 1
[[nodiscard]] bool lmv_needs_correction(const Vector& x0, Index k, int S);

[[nodiscard]] double lmv_factor_t(const Vector& x0, Index k, int S, double sigma);
[[nodiscard]] double lmv_correction_h(const Vector& y, const Vector& x0, Index k, int S, double sigma);
[[nodiscard]] double lmv_from_diagonal(const DiagonalEstimator& base, const Vector& y,
                                       const Vector& x0, Index k, int S, double sigma);
[[nodiscard]] double lmv_hermite(const HermiteSeries& series, const Vector& y, const Vector& x0,
                                 Index k, int S);

// m_l = sigma^{-l} E{base(y) He_l((y - x0k)/sigma)}, y ~ N(x0k, sigma^2), l = 0..L.
[[nodiscard]] HermiteSeries hermite_coeffs_of_diagonal(const DiagonalEstimator& base, double x0k,
                                                       double sigma, int max_order);

// ---- covariance-model estimators -----------------------------------------------

[[nodiscard]] Vector sdpcm_unbiased(const SdpcmProblem& p, const Vector& y);
[[nodiscard]] Vector sdpcm_ht(const SdpcmProblem& p, const Vector& y, double threshold);
[[nodiscard]] Vector sdpcm_ml(const SdpcmProblem& p, const Vector& y, int S);

// -sum_k r_k [beta_k/(x_k + sigma^2) + log(x_k + sigma^2)]
[[nodiscard]] double sdpcm_ml_objective(const SdpcmProblem& p, const Vector& beta, const Vector& x);

struct MlSolution {
    Vector x;
    double objective = 0.0;
};
inline constexpr Index kMlBruteForceMaxN = 12;
inline constexpr int kMlBruteForceMaxS = 4;
[[nodiscard]] MlSolution sdpcm_ml_bruteforce(const SdpcmProblem& p, const Vector& y, int S);

// Locally minimum variance unbiased estimator of x_k for S = 1.
[[nodiscard]] double sdpcm_lmvu_s1(const SdpcmProblem& p, const Vector& y, const Vector& x0, Index k);

// ---- type-erased vector estimator ------------------------------------------------

struct NamedEstimator {
    std::string name;
    std::function<Vector(const Vector& y)> apply;
};

}  // namespace sparsemv
