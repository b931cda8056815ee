#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsemv/estimators.hpp"
#include "sparsemv/models.hpp"

namespace sparsemv {

inline constexpr int kSumComponent = -1;

struct BoundReport {
    std::string kind;
    double value = 0.0;
    int component = kSumComponent;
    nlohmann::json params = nlohmann::json::object();
    bool floored = false;  // raw value was slightly negative and set to 0
};

// Prescribed mean gamma(x) = E{x_hat_k} for one component: its value at x0, and
// value and gradient at an anchor point (x0 itself or a projected point).
struct MeanModel {
    double gamma0 = 0.0;
    Vector anchor;
    double gamma_at_anchor = 0.0;
    Vector grad;
    std::function<double(const Vector&)> value;  // optional, for test-point bounds

    // gamma(x) = x_k, evaluated at x0 and anchor.
    static MeanModel unbiased(Index k, const Vector& x0, const Vector& anchor);
    static MeanModel unbiased(Index k, const Vector& x0) { return unbiased(k, x0, x0); }
    void validate(Index n) const;
};

// Values within this distance below zero are floored; anything lower throws.
inline constexpr double kFloorTolerance = 1e-9;

// ---- generic projection engine -------------------------------------------------

// c^T G^+ c - gamma0^2.
[[nodiscard]] BoundReport projection_bound(const Vector& c, const Matrix& gram, double gamma0);

// Barankin-type bound from test points: m^T V^+ m with
// V_{ll'} = R(x_l, x_l') - R(x_l, x0) - R(x0, x_l') + R(x0, x0) and m_l = gamma(x_l) - gamma0.
// `kernel` is the (L+1)x(L+1) kernel matrix over {x0, x_1, .., x_L} with x0 first.
inline constexpr int kMaxTestPoints = 16;
[[nodiscard]] BoundReport generic_hcrb(const Matrix& kernel, const Vector& mean_at_points, double gamma0);

using KernelFn = std::function<double(const Vector& x1, const Vector& x2)>;
[[nodiscard]] BoundReport generic_hcrb(const KernelFn& kernel, const Vector& x0,
                                       const std::vector<Vector>& points,
                                       const std::function<double(const Vector&)>& mean);

// b^T B^+ b with B_{ij} = d^{p_i}_{x1} d^{p_j}_{x2} R(x1, x2) at x1 = x2 = x0, from central
// differences (step grows with derivative order) and one Richardson level.
inline constexpr int kBhattacharyyaMaxOrder = 4;
[[nodiscard]] BoundReport generic_bhattacharyya(const KernelFn& kernel, const Vector& x0,
                                                const std::vector<MultiIndex>& indices,
                                                const Vector& mean_derivatives,
                                                double step = 1e-3);
// The matrix B alone.
[[nodiscard]] Matrix kernel_mixed_partials(const KernelFn& kernel, const Vector& x0,
                                           const std::vector<MultiIndex>& indices, double step = 1e-3);

// ---- sparse linear model -----------------------------------------------------------

[[nodiscard]] BoundReport crb_slm(const SlmProblem& p, const Vector& x0, const MeanModel& mean,
                                  int component = kSumComponent);
[[nodiscard]] BoundReport hcrb_ssnm(const SlmProblem& p, const Vector& x0, Index k);

// Point with support inside K closest to x0 after mapping through H: H x = P_K H x0.
[[nodiscard]] Vector tilde_x0(const SlmProblem& p, const Vector& x0, const Support& K);

[[nodiscard]] BoundReport rkhs_bound_a(const SlmProblem& p, const Vector& x0, const Support& K,
                                       const MeanModel& mean, int component = kSumComponent);
[[nodiscard]] BoundReport rkhs_bound_b(const SlmProblem& p, const Vector& x0, const Support& K,
                                       const MeanModel& mean, int component = kSumComponent);
[[nodiscard]] BoundReport rip_bound_cs(const SlmProblem& p, const Vector& x0, const Support& K,
                                       const MeanModel& mean, double delta_s,
                                       int component = kSumComponent);

// Index set K_k used per component: supp(x0) for k in the support, otherwise {k}
// (singleton) or {k} plus supp(x0) without its S-largest entry (swap_smallest).
enum class IndexSetRule { singleton, swap_smallest };
[[nodiscard]] Support default_index_set(const Vector& x0, Index k, int S, IndexSetRule rule);
[[nodiscard]] IndexSetRule parse_index_set_rule(const std::string& name);
[[nodiscard]] std::string index_set_rule_name(IndexSetRule rule);

// ---- SSNM Barankin bound for diagonal means ---------------------------------------

[[nodiscard]] BoundReport ssnm_barankin(const HermiteSeries& series, const Vector& x0, Index k, int S);
[[nodiscard]] BoundReport ssnm_barankin_from_estimator(double base_var_at_x0, double gamma0,
                                                       const Vector& x0, Index k, int S, double sigma);
// Same bound for y' = H(x + n): H only post-processes the SSNM observation.
[[nodiscard]] BoundReport ssnm_bound_for_transformed(const Matrix& h, const HermiteSeries& series,
                                                     const Vector& x0, Index k, int S);

// Truncated coefficient-sequence evaluation for a general mean on X_S (desk scale).
inline constexpr Index kBarankinNumericMaxN = 3;
inline constexpr int kBarankinNumericMaxS = 2;
inline constexpr int kBarankinNumericMaxOrder = 6;
[[nodiscard]] BoundReport ssnm_barankin_numeric(const std::function<double(const Vector&)>& mean,
                                                const Vector& x0, int S, double sigma, int max_order);

// ---- covariance models -----------------------------------------------------------

[[nodiscard]] Matrix spcm_fisher_matrix(const SpcmProblem& p, const Vector& x0);
[[nodiscard]] BoundReport spcm_fisher_bound(const SpcmProblem& p, const Vector& x0, const Vector& grad,
                                            int component = kSumComponent);
[[nodiscard]] BoundReport spcm_fisher_bound(const SdpcmProblem& p, const Vector& x0, const Vector& grad,
                                            int component = kSumComponent);

inline constexpr double kSpcmRipMaxDelta = 1.0 / 32.0;
[[nodiscard]] BoundReport spcm_rip_bound(const SpcmProblem& p, const Vector& x0, Index l, double b_l,
                                         double delta);
[[nodiscard]] BoundReport spcm_rip_bound(const SdpcmProblem& p, const Vector& x0, Index l, double b_l,
                                         double delta);

// Squared norm of the kernel-derivative function for multi-index `index` anchored at x0^K.
[[nodiscard]] double sdpcm_q_closed_form(const SdpcmProblem& p, const Vector& x0, const Support& K,
                                         const MultiIndex& index);
[[nodiscard]] double sdpcm_q_numeric(const SdpcmProblem& p, const Vector& x0, const Support& K,
                                     const MultiIndex& index);
inline constexpr double kQAgreementRtol = 1e-6;

// sum_l partial_l^2 / q_l - gamma0^2, partials of the mean taken at x0^K.
[[nodiscard]] BoundReport sdpcm_projection_bound(const SdpcmProblem& p, const Vector& x0,
                                                 const Support& K,
                                                 const std::vector<MultiIndex>& indices,
                                                 const Vector& partials, double gamma0,
                                                 int component = kSumComponent);

// b_l: derivative of the mean w.r.t. x_l at x0 restricted to K_l (see first_order_index_set).
[[nodiscard]] BoundReport sdpcm_first_order_bound(const SdpcmProblem& p, const Vector& x0, const Vector& b,
                                                  int component = kSumComponent);
[[nodiscard]] Support first_order_index_set(const Vector& x0, Index l, int S);
[[nodiscard]] BoundReport spectrum_bound(const SdpcmProblem& p, const Vector& x0, Index k);

// ---- aggregation ---------------------------------------------------------------------

[[nodiscard]] BoundReport sum_components(const std::vector<BoundReport>& reports);

}  // namespace sparsemv
