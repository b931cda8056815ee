#include "sparsemv/estimators.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sparsemv {

namespace {

// log(|m| sigma^l / sqrt(l!))
double log_scaled(double m, double sigma, int l) {
    return std::log(std::abs(m)) + l * std::log(sigma) - 0.5 * std::lgamma(l + 1.0);
}

std::vector<Index> by_decreasing_magnitude(const Vector& v) {
    std::vector<Index> order(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return std::abs(v(a)) > std::abs(v(b)); });
    return order;
}

}  // namespace

DiagonalEstimator DiagonalEstimator::ht(double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("HT threshold must be >= 0");
    return {Kind::ht, t};
}

std::string DiagonalEstimator::name() const {
    if (kind == Kind::ls) return "ls";
    char buf[32];
    std::snprintf(buf, sizeof buf, "ht_T%g", threshold);
    return buf;
}

// ---- Hermite series ----------------------------------------------------------

double HermiteSeries::energy_term(int l) const {
    const double ml = m[static_cast<std::size_t>(l)];
    if (ml == 0.0) return 0.0;
    return std::exp(2.0 * log_scaled(ml, sigma, l));
}

double HermiteSeries::energy() const {
    double acc = 0.0;
    for (int l = 0; l < static_cast<int>(m.size()); ++l) acc += energy_term(l);
    return acc;
}

double HermiteSeries::mean_at(double xk) const {
    double acc = 0.0;
    double power = 1.0;
    for (std::size_t l = 0; l < m.size(); ++l) {
        acc += m[l] * power / factorial(static_cast<int>(l));
        power *= xk - center;
    }
    return acc;
}

std::vector<double> HermiteSeries::orthonormal_coefficients() const {
    std::vector<double> c(m.size(), 0.0);
    for (std::size_t l = 0; l < m.size(); ++l)
        if (m[l] != 0.0) c[l] = std::copysign(std::exp(log_scaled(m[l], sigma, static_cast<int>(l))), m[l]);
    return c;
}

void HermiteSeries::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(center))
        throw std::invalid_argument("HermiteSeries: sigma must be positive");
    if (m.empty()) throw std::invalid_argument("HermiteSeries: empty coefficient sequence");
    if (m.size() > static_cast<std::size_t>(kHermiteMaxOrder) + 1)
        throw std::out_of_range("HermiteSeries: more than 61 coefficients exceeds the truncation cap");
    for (double v : m)
        if (!std::isfinite(v)) throw std::invalid_argument("HermiteSeries: non-finite coefficient");
    const double total = energy();
    if (!std::isfinite(total)) throw std::invalid_argument("HermiteSeries: divergent series");
    const int n = static_cast<int>(m.size());
    if (n >= 4) {
        const double a = energy_term(n - 3), b = energy_term(n - 2), c = energy_term(n - 1);
        if (a < b && b < c && c > 1e-3 * total)
            throw std::invalid_argument("HermiteSeries: divergent series (growing tail)");
    }
}

bool HermiteSeries::tail_negligible() const {
    const int n = static_cast<int>(m.size());
    if (n < 2) return true;
    const double total = energy();
    return energy_term(n - 1) <= kSeriesTailRtol * total && energy_term(n - 2) <= kSeriesTailRtol * total;
}

HermiteSeries truncate_series(HermiteSeries s) {
    double running = 0.0;
    const int n = static_cast<int>(s.m.size());
    for (int l = 0; l + 1 < n; ++l) {
        if (l > 0 && s.energy_term(l) < kSeriesTailRtol * running &&
            s.energy_term(l + 1) < kSeriesTailRtol * running) {
            // the rest must be negligible as well, otherwise keep going
            bool rest_small = true;
            for (int j = l + 2; j < n; ++j) rest_small = rest_small && s.energy_term(j) < kSeriesTailRtol * running;
            if (rest_small) {
                s.m.resize(static_cast<std::size_t>(l));
                return s;
            }
        }
        running += s.energy_term(l);
    }
    return s;
}

double gaussian_expectation(const std::function<double(double)>& f, double mean, double sigma,
                            const std::vector<double>& breaks, double half_width_sigmas) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_expectation: sigma must be positive");
    const double lo = mean - half_width_sigmas * sigma;
    const double hi = mean + half_width_sigmas * sigma;
    std::vector<double> pts{lo};
    for (double b : breaks)
        if (b > lo && b < hi) pts.push_back(b);
    pts.push_back(hi);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
    auto integrand = [&](double y) {
        const double u = (y - mean) / sigma;
        return f(y) * norm * std::exp(-0.5 * u * u);
    };
    double total = 0.0, err_total = 0.0, l1_total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        double err = 0.0, l1 = 0.0;
        total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            integrand, pts[i], pts[i + 1], 15, 1e-13, &err, &l1);
        err_total += err;
        l1_total += l1;
    }
    if (!std::isfinite(total) || err_total > std::max(1e-10, 1e-12 * l1_total))
        throw NumericalConsistencyError("gaussian_expectation: quadrature did not converge");
    return total;
}

HermiteSeries hermite_coeffs_of_diagonal(const DiagonalEstimator& base, double x0k, double sigma,
                                         int max_order) {
    if (max_order < 0 || max_order > kHermiteMaxOrder)
        throw std::out_of_range("hermite_coeffs_of_diagonal: order must lie in [0, 60]");
    if (!(sigma > 0.0)) throw std::invalid_argument("hermite_coeffs_of_diagonal: sigma must be positive");
    std::vector<double> breaks;
    if (base.kind == DiagonalEstimator::Kind::ht && base.threshold > 0.0)
        breaks = {-base.threshold, base.threshold};
    // high-order Hermite functions oscillate out to about 2 sqrt(l) standard deviations
    const double width = std::max(10.0, 2.0 * std::sqrt(static_cast<double>(max_order)) + 6.0);

    HermiteSeries s;
    s.sigma = sigma;
    s.center = x0k;
    s.m.assign(static_cast<std::size_t>(max_order) + 1, 0.0);
    for (int l = 0; l <= max_order; ++l) {
        const double c = gaussian_expectation(
            [&](double y) { return base(y) * hermite_normalized_all(l, (y - x0k) / sigma)[l]; }, x0k,
            sigma, breaks, width);
        // m_l = c_l sqrt(l!) / sigma^l
        if (c != 0.0)
            s.m[static_cast<std::size_t>(l)] =
                std::copysign(std::exp(std::log(std::abs(c)) + 0.5 * std::lgamma(l + 1.0) - l * std::log(sigma)), c);
    }
    return truncate_series(std::move(s));
}

// ---- SLM / SSNM estimators ----------------------------------------------------

Vector ls(const SlmProblem& p, const Vector& y) {
    if (y.size() != p.rows()) throw std::invalid_argument("ls: dimension mismatch");
    if (p.is_identity()) return y;
    Eigen::ColPivHouseholderQR<Matrix> qr(p.H());
    if (qr.rank() < p.dim()) throw std::invalid_argument("ls: H is rank deficient");
    return qr.solve(y);
}

Vector omp(const SlmProblem& p, const Vector& y, int iterations) {
    if (y.size() != p.rows()) throw std::invalid_argument("omp: dimension mismatch");
    if (iterations < 0 || iterations > std::min(p.rows(), p.dim()))
        throw std::invalid_argument("omp: iterations must lie in [0, min(M, N)]");
    const Matrix& h = p.H();
    std::vector<Index> selected;
    std::vector<bool> used(static_cast<std::size_t>(p.dim()), false);
    Vector residual = y;
    Vector coef;
    for (int it = 0; it < iterations; ++it) {
        const Vector corr = h.transpose() * residual;
        Index best = -1;
        double best_val = -1.0;
        for (Index j = 0; j < p.dim(); ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            if (std::abs(corr(j)) > best_val) {
                best_val = std::abs(corr(j));
                best = j;
            }
        }
        selected.push_back(best);
        used[static_cast<std::size_t>(best)] = true;
        Matrix sub(p.rows(), static_cast<Index>(selected.size()));
        for (std::size_t j = 0; j < selected.size(); ++j) sub.col(static_cast<Index>(j)) = h.col(selected[j]);
        Eigen::ColPivHouseholderQR<Matrix> qr(sub);
        if (qr.rank() < sub.cols()) throw std::invalid_argument("omp: selected columns are rank deficient");
        coef = qr.solve(y);
        residual = y - sub * coef;
    }
    Vector x = Vector::Zero(p.dim());
    for (std::size_t j = 0; j < selected.size(); ++j) x(selected[j]) = coef(static_cast<Index>(j));
    return x;
}

Vector ht_ssnm(const Vector& y, double threshold) {
    if (!(threshold >= 0.0)) throw std::invalid_argument("ht_ssnm: threshold must be >= 0");
    return y.unaryExpr([threshold](double v) { return std::abs(v) < threshold ? 0.0 : v; });
}

Vector ml_ssnm(const Vector& y, int S) {
    if (S < 0 || S > y.size()) throw std::invalid_argument("ml_ssnm: S must lie in [0, N]");
    const auto order = by_decreasing_magnitude(y);
    Vector x = Vector::Zero(y.size());
    for (int i = 0; i < S; ++i) x(order[static_cast<std::size_t>(i)]) = y(order[static_cast<std::size_t>(i)]);
    return x;
}

bool lmv_needs_correction(const Vector& x0, Index k, int S) {
    if (k < 0 || k >= x0.size()) throw std::out_of_range("lmv: component index out of range");
    const Index n = l0_norm(x0);
    return x0(k) == 0.0 && n == S;
}

Support lmv_index_set(const Vector& x0, Index k, int S) {
    Support supp = support_of(x0);
    if (static_cast<int>(supp.size()) > S) throw std::invalid_argument("lmv: x0 has more than S nonzeros");
    if (!contains(supp, k) && static_cast<int>(supp.size()) == S) return supp;
    Support set = without_index(supp, k);
    for (Index i = 0; i < x0.size() && static_cast<int>(set.size()) < S; ++i)
        if (i != k && !contains(set, i)) set = with_index(set, i);
    return set;
}

double lmv_factor_t(const Vector& x0, Index k, int S, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("lmv_factor_t: sigma must be positive");
    if (!lmv_needs_correction(x0, k, S)) return 1.0;
    const double s2 = sigma * sigma;
    double acc = 0.0, keep = 1.0;
    for (Index i : lmv_index_set(x0, k, S)) {
        const double e = std::exp(-x0(i) * x0(i) / s2);
        acc += e * keep;
        keep *= 1.0 - e;
    }
    return acc;
}

double lmv_correction_h(const Vector& y, const Vector& x0, Index k, int S, double sigma) {
    if (y.size() != x0.size()) throw std::invalid_argument("lmv_correction_h: dimension mismatch");
    if (!lmv_needs_correction(x0, k, S)) return 1.0;
    const double two_s2 = 2.0 * sigma * sigma;
    double acc = 0.0, keep = 1.0;
    for (Index i : lmv_index_set(x0, k, S)) {
        const double a = std::exp(-(x0(i) * x0(i) + 2.0 * y(i) * x0(i)) / two_s2);
        acc += a * keep;
        keep *= 1.0 - a;
    }
    return acc;
}

double lmv_from_diagonal(const DiagonalEstimator& base, const Vector& y, const Vector& x0, Index k,
                         int S, double sigma) {
    const double v = base(y(k));
    if (!lmv_needs_correction(x0, k, S)) return v;
    return v * lmv_correction_h(y, x0, k, S, sigma);
}

double lmv_hermite(const HermiteSeries& series, const Vector& y, const Vector& x0, Index k, int S) {
    series.validate();
    if (std::abs(series.center - x0(k)) > 1e-12 * std::max(1.0, std::abs(x0(k))))
        throw std::invalid_argument("lmv_hermite: series must be centred at x0_k");
    const auto c = series.orthonormal_coefficients();
    const auto h = hermite_normalized_all(static_cast<int>(c.size()) - 1, (y(k) - x0(k)) / series.sigma);
    double v = 0.0;
    for (std::size_t l = 0; l < c.size(); ++l) v += c[l] * h[l];
    if (!lmv_needs_correction(x0, k, S)) return v;
    return v * lmv_correction_h(y, x0, k, S, series.sigma);
}

// ---- covariance-model estimators -----------------------------------------------

Vector sdpcm_unbiased(const SdpcmProblem& p, const Vector& y) {
    return beta_energies(p, y).array() - p.sigma2();
}

Vector sdpcm_ht(const SdpcmProblem& p, const Vector& y, double threshold) {
    if (!(threshold >= 0.0)) throw std::invalid_argument("sdpcm_ht: threshold must be >= 0");
    if (y.size() != p.rows()) throw std::invalid_argument("sdpcm_ht: dimension mismatch");
    Vector x(p.dim());
    for (Index k = 0; k < p.dim(); ++k) {
        const Vector z = p.group(k).transpose() * y;
        double acc = 0.0;
        for (Index i = 0; i < z.size(); ++i)
            if (std::abs(z(i)) >= threshold) acc += z(i) * z(i);
        x(k) = acc / p.rank(k) - p.sigma2();
    }
    return x;
}

Vector sdpcm_ml(const SdpcmProblem& p, const Vector& y, int S) {
    if (S < 0 || S > p.dim()) throw std::invalid_argument("sdpcm_ml: S must lie in [0, N]");
    const Vector beta = beta_energies(p, y);
    const double s2 = p.sigma2();
    std::vector<Index> active;
    for (Index k = 0; k < p.dim(); ++k)
        if (beta(k) >= s2) active.push_back(k);
    auto score = [&](Index k) {
        const double ratio = beta(k) / s2;
        return p.rank(k) * (ratio - std::log(ratio) - 1.0);
    };
    std::stable_sort(active.begin(), active.end(), [&](Index a, Index b) { return score(a) > score(b); });
    Vector x = Vector::Zero(p.dim());
    const std::size_t keep = std::min(active.size(), static_cast<std::size_t>(S));
    for (std::size_t i = 0; i < keep; ++i) x(active[i]) = beta(active[i]) - s2;
    return x;
}

double sdpcm_ml_objective(const SdpcmProblem& p, const Vector& beta, const Vector& x) {
    double acc = 0.0;
    for (Index k = 0; k < p.dim(); ++k) {
        const double c = x(k) + p.sigma2();
        acc -= p.rank(k) * (beta(k) / c + std::log(c));
    }
    return acc;
}

MlSolution sdpcm_ml_bruteforce(const SdpcmProblem& p, const Vector& y, int S) {
    if (p.dim() > kMlBruteForceMaxN || S > kMlBruteForceMaxS)
        throw std::length_error("sdpcm_ml_bruteforce: budget exceeded (N <= 12, S <= 4)");
    if (S < 0) throw std::invalid_argument("sdpcm_ml_bruteforce: S must be >= 0");
    const Vector beta = beta_energies(p, y);
    MlSolution best{Vector::Zero(p.dim()), sdpcm_ml_objective(p, beta, Vector::Zero(p.dim()))};
    const Index size = std::min<Index>(S, p.dim());
    for_each_subset(p.dim(), size, [&](const std::vector<Index>& sel) {
        Vector x = Vector::Zero(p.dim());
        for (Index k : sel) x(k) = std::max(beta(k) - p.sigma2(), 0.0);
        const double obj = sdpcm_ml_objective(p, beta, x);
        if (obj > best.objective) best = {x, obj};
        return true;
    });
    return best;
}

double sdpcm_lmvu_s1(const SdpcmProblem& p, const Vector& y, const Vector& x0, Index k) {
    if (p.sparsity() != 1) throw std::invalid_argument("sdpcm_lmvu_s1: requires S = 1");
    p.check_param(x0);
    if (k < 0 || k >= p.dim()) throw std::out_of_range("sdpcm_lmvu_s1: component index out of range");
    const Vector beta = beta_energies(p, y);
    const double s2 = p.sigma2();
    const LargestEntry top = s_largest_entry(x0, 1);
    if (k == top.index) return beta(k) - s2;
    const double xi = top.value;
    const int rj = p.rank(top.index);
    const double a = std::pow((2.0 * xi + s2) / (xi + s2), 0.5 * rj);
    const double b = 0.5 * (1.0 / s2 - 1.0 / (xi + s2));
    return a * std::exp(-rj * b * beta(top.index)) * (beta(k) - s2);
}

}  // namespace sparsemv
