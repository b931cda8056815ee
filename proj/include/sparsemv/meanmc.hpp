#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "sparsemv/estimators.hpp"
#include "sparsemv/models.hpp"

namespace sparsemv {

struct McConfig {
    std::int64_t trials = 10000;
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const;
};

// Sample moments of an estimator. Trial t always draws from RandomStream(seed, t),
// and partial sums are merged in a fixed tree over fixed-size blocks, so the
// result does not depend on the worker count.
struct McResult {
    Vector mean;
    Vector per_component_variance;  // (n-1)-normalized
    double variance_total = 0.0;
    Vector std_err;                 // of the mean: sample std / sqrt(trials)
    Vector variance_stderr;         // of the variance: sqrt((m4 - var^2) / trials)
    std::int64_t trials = 0;
    std::uint64_t seed = 0;
};

using EstimatorFn = std::function<Vector(const Vector& y)>;

// Trials per block; the merge order depends only on this and the trial count.
inline constexpr std::int64_t kMcBlockSize = 512;

[[nodiscard]] McResult mc_moments(const EstimatorFn& estimator, const SimModel& model, const Vector& x,
                                  const McConfig& cfg);

// Mean-function partials: partials(l, k) = d E{x_hat_k} / d x_l, so column k is the
// gradient of the k-th component mean.
// The estimator mean at x comes from the same trials.
struct GradResult {
    Matrix partials;
    Matrix std_err;
    Vector mean;
    Vector mean_std_err;
    std::int64_t trials = 0;
    std::uint64_t seed = 0;
};

// E{x_hat(y) (y - Hx)^T H e_l} / sigma^2
[[nodiscard]] GradResult mean_grad_slm_mc(const EstimatorFn& estimator, const SlmProblem& p,
                                          const Vector& x, const McConfig& cfg);
// E{x_hat_k s_l(y)} with s_l = r_l (beta_l / (x_l + sigma^2) - 1) / (2 (x_l + sigma^2))
[[nodiscard]] GradResult mean_grad_sdpcm_mc(const EstimatorFn& estimator, const SdpcmProblem& p,
                                            const Vector& x, const McConfig& cfg);

// Forward differences with common random numbers. The step along l is
// rel_step * max(1, |x_l|). Only the listed directions are computed (others are
// left at 0 with zero standard error); an empty list means every direction, which fails
// when x already has S nonzeros.
inline constexpr double kDefaultFdStep = 1e-3;
[[nodiscard]] GradResult mean_grad_fd(const EstimatorFn& estimator, const SimModel& model, const Vector& x,
                                      double rel_step, const McConfig& cfg,
                                      const std::vector<Index>& directions = {});

// Directions l for which x + step e_l stays in the parameter set: all l when
// ||x||_0 < S, otherwise supp(x).
[[nodiscard]] std::vector<Index> fd_directions(const SimModel& model, const Vector& x);

// Mean and variance of base(y), y ~ N(x_k, sigma^2), by adaptive quadrature on
// [x_k - 10 sigma, x_k + 10 sigma] split at the thresholds.
[[nodiscard]] std::pair<double, double> diag_mean_var_quadrature(const DiagonalEstimator& base, double xk,
                                                                 double sigma);
// d/dx_k of that mean: E{base(y) (y - x_k)} / sigma^2.
[[nodiscard]] double diag_mean_slope_quadrature(const DiagonalEstimator& base, double xk, double sigma);

}  // namespace sparsemv
