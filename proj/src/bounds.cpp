#include "sparsemv/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace sparsemv {

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

void require_length(const Vector& v, Index n, const char* what) {
    if (v.size() != n) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Floors tiny negatives, rejects real ones. `scale` is the size of the largest term
// that entered the difference.
BoundReport finish(BoundReport r, double raw, double scale) {
    if (!std::isfinite(raw)) throw NumericalConsistencyError(r.kind + ": non-finite bound value");
    const double tol = kFloorTolerance * std::max(1.0, std::abs(scale));
    if (raw < -tol)
        throw std::domain_error(r.kind + ": bound is negative (" + std::to_string(raw) +
                                "), mean data are inconsistent");
    r.params["raw_value"] = raw;
    if (raw < 0.0) {
        r.floored = true;
        raw = 0.0;
    }
    r.value = raw;
    return r;
}

Matrix columns(const Matrix& h, const Support& K) {
    Matrix out(h.rows(), static_cast<Index>(K.size()));
    for (std::size_t j = 0; j < K.size(); ++j) out.col(static_cast<Index>(j)) = h.col(K[j]);
    return out;
}

Vector entries(const Vector& v, const Support& K) {
    Vector out(static_cast<Index>(K.size()));
    for (std::size_t j = 0; j < K.size(); ++j) out(static_cast<Index>(j)) = v(K[j]);
    return out;
}

void check_index_set(const Support& K, Index n, int max_size, const char* what) {
    if (static_cast<int>(K.size()) > max_size)
        throw std::invalid_argument(std::string(what) + ": index set larger than S");
    std::set<Index> seen;
    for (Index i : K) {
        if (i < 0 || i >= n) throw std::out_of_range(std::string(what) + ": index out of range");
        if (!seen.insert(i).second) throw std::invalid_argument(std::string(what) + ": repeated index");
    }
}

// Pieces shared by the two RKHS bounds and the RIP bound.
struct ProjectedGeometry {
    Vector tilde;
    double residual_sq = 0.0;   // |(I - P_K) H x0|^2
    double gram_term = 0.0;     // r^T (H_K^T H_K)^{-1} r
};

ProjectedGeometry project_onto(const SlmProblem& p, const Vector& x0, const Support& K, const Vector* grad,
                               const char* what) {
    p.check_param(x0);
    check_index_set(K, p.dim(), p.sparsity(), what);
    ProjectedGeometry g;
    g.tilde = Vector::Zero(p.dim());
    const Vector hx0 = p.H() * x0;
    if (K.empty()) {
        g.residual_sq = hx0.squaredNorm();
        return g;
    }
    const Matrix hk = columns(p.H(), K);
    const ThinSvd svd = thin_svd(hk);
    if (svd.rank() < static_cast<Index>(K.size()))
        throw std::invalid_argument(std::string(what) + ": H_K is rank-deficient");
    const Vector coef = svd.V * (svd.singular_values.cwiseInverse().asDiagonal() * (svd.U.transpose() * hx0));
    for (std::size_t j = 0; j < K.size(); ++j) g.tilde(K[j]) = coef(static_cast<Index>(j));
    g.residual_sq = (hx0 - hk * coef).squaredNorm();
    if (grad) {
        const Vector r = entries(*grad, K);
        const Vector z = svd.singular_values.cwiseInverse().asDiagonal() * (svd.V.transpose() * r);
        g.gram_term = z.squaredNorm();
    }
    return g;
}

void check_anchor(const MeanModel& mean, const Vector& expected, const char* what) {
    const double scale = std::max(1.0, expected.cwiseAbs().maxCoeff());
    if (mean.anchor.size() != expected.size() || (mean.anchor - expected).cwiseAbs().maxCoeff() > 1e-9 * scale)
        throw std::invalid_argument(std::string(what) + ": mean data must be given at the projected point");
}

double binomial(int n, int k) {
    double b = 1.0;
    for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
    return b;
}

}  // namespace

// ---- MeanModel ---------------------------------------------------------------------

MeanModel MeanModel::unbiased(Index k, const Vector& x0, const Vector& anchor) {
    if (k < 0 || k >= x0.size() || anchor.size() != x0.size())
        throw std::invalid_argument("MeanModel::unbiased: bad component or dimension");
    MeanModel m;
    m.gamma0 = x0(k);
    m.anchor = anchor;
    m.gamma_at_anchor = anchor(k);
    m.grad = Vector::Unit(x0.size(), k);
    m.value = [k](const Vector& x) { return x(k); };
    return m;
}

void MeanModel::validate(Index n) const {
    if (anchor.size() != n || grad.size() != n) throw std::invalid_argument("MeanModel: dimension mismatch");
    if (!std::isfinite(gamma0) || !std::isfinite(gamma_at_anchor) || !grad.allFinite() || !anchor.allFinite())
        throw std::invalid_argument("MeanModel: non-finite entries");
}

// ---- generic engines -----------------------------------------------------------------

BoundReport projection_bound(const Vector& c, const Matrix& gram, double gamma0) {
    BoundReport r;
    r.kind = "projection";
    const double proj = gram_projection_sq_norm(c, gram);
    r.params["blocks"] = c.size();
    return finish(std::move(r), proj - gamma0 * gamma0, std::max(proj, gamma0 * gamma0));
}

BoundReport generic_hcrb(const Matrix& kernel, const Vector& mean_at_points, double gamma0) {
    const Index L = mean_at_points.size();
    if (kernel.rows() != L + 1 || kernel.cols() != L + 1)
        throw std::invalid_argument("generic_hcrb: kernel must be (L+1)x(L+1) with x0 first");
    if (L > kMaxTestPoints) throw std::invalid_argument("generic_hcrb: too many test points");
    BoundReport r;
    r.kind = "hcrb";
    r.params["test_points"] = L;
    if (L == 0) return finish(std::move(r), 0.0, 0.0);
    Matrix v(L, L);
    for (Index i = 0; i < L; ++i)
        for (Index j = 0; j < L; ++j)
            v(i, j) = kernel(i + 1, j + 1) - kernel(i + 1, 0) - kernel(0, j + 1) + kernel(0, 0);
    v = 0.5 * (v + v.transpose()).eval();
    const Vector m = mean_at_points.array() - gamma0;
    if (m.isZero(0.0)) return finish(std::move(r), 0.0, 0.0);
    const double val = m.dot(pinv(v) * m);
    return finish(std::move(r), val, val);
}

BoundReport generic_hcrb(const KernelFn& kernel, const Vector& x0, const std::vector<Vector>& points,
                         const std::function<double(const Vector&)>& mean) {
    std::vector<Vector> all{x0};
    all.insert(all.end(), points.begin(), points.end());
    const Index n = static_cast<Index>(all.size());
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) k(i, j) = kernel(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    Vector m(n - 1);
    for (Index i = 1; i < n; ++i) m(i - 1) = mean(all[static_cast<std::size_t>(i)]);
    return generic_hcrb(k, m, mean(x0));
}

namespace {

// Mixed partial of f over the listed (variable, order) pairs by a tensor central stencil.
double tensor_central_difference(const std::function<double(const Vector&)>& f, const Vector& at,
                                 const std::vector<std::pair<Index, int>>& orders, double h) {
    std::vector<int> pos(orders.size(), 0);
    double acc = 0.0;
    while (true) {
        Vector x = at;
        double w = 1.0;
        for (std::size_t d = 0; d < orders.size(); ++d) {
            const int n = orders[d].second, j = pos[d];
            x(orders[d].first) += (j - 0.5 * n) * h;
            w *= ((n - j) % 2 ? -1.0 : 1.0) * binomial(n, j) / std::pow(h, n);
        }
        acc += w * f(x);
        std::size_t d = 0;
        for (; d < orders.size(); ++d) {
            if (++pos[d] <= orders[d].second) break;
            pos[d] = 0;
        }
        if (d == orders.size()) break;
    }
    return acc;
}

}  // namespace

Matrix kernel_mixed_partials(const KernelFn& kernel, const Vector& x0, const std::vector<MultiIndex>& indices,
                             double step) {
    const Index n = x0.size();
    for (const auto& p : indices) {
        if (static_cast<Index>(p.size()) != n) throw std::invalid_argument("bhattacharyya: multi-index length");
        int order = 0;
        for (int e : p) {
            if (e < 0) throw std::invalid_argument("bhattacharyya: negative multi-index entry");
            order += e;
        }
        if (order == 0 || order > kBhattacharyyaMaxOrder)
            throw std::invalid_argument("bhattacharyya: multi-index order must be in 1..4");
    }
    const std::function<double(const Vector&)> joint = [&](const Vector& z) {
        return kernel(z.head(n), z.tail(n));
    };
    Vector at(2 * n);
    at << x0, x0;
    const auto L = static_cast<Index>(indices.size());
    Matrix b(L, L);
    for (Index i = 0; i < L; ++i) {
        for (Index j = i; j < L; ++j) {
            std::vector<std::pair<Index, int>> orders;
            int total = 0;
            for (Index c = 0; c < n; ++c) {
                const int a1 = indices[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
                const int a2 = indices[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
                if (a1) orders.emplace_back(c, a1);
                if (a2) orders.emplace_back(n + c, a2);
                total += a1 + a2;
            }
            const double h = step * std::pow(2.0, std::max(0, total - 2));
            const double coarse = tensor_central_difference(joint, at, orders, h);
            const double fine = tensor_central_difference(joint, at, orders, 0.5 * h);
            const double v = (4.0 * fine - coarse) / 3.0;
            if (!std::isfinite(v)) throw NumericalConsistencyError("bhattacharyya: non-finite kernel derivative");
            b(i, j) = b(j, i) = v;
        }
    }
    return b;
}

BoundReport generic_bhattacharyya(const KernelFn& kernel, const Vector& x0, const std::vector<MultiIndex>& indices,
                                  const Vector& mean_derivatives, double step) {
    if (mean_derivatives.size() != static_cast<Index>(indices.size()))
        throw std::invalid_argument("bhattacharyya: one mean derivative per multi-index");
    BoundReport r;
    r.kind = "bhattacharyya";
    r.params["indices"] = indices;
    r.params["step"] = step;
    if (indices.empty()) return finish(std::move(r), 0.0, 0.0);
    const Matrix b = kernel_mixed_partials(kernel, x0, indices, step);
    const double v = mean_derivatives.dot(pinv(b) * mean_derivatives);
    return finish(std::move(r), v, v);
}

// ---- sparse linear model -----------------------------------------------------------

BoundReport crb_slm(const SlmProblem& p, const Vector& x0, const MeanModel& mean, int component) {
    p.check_param(x0);
    mean.validate(p.dim());
    check_anchor(mean, x0, "crb_slm");
    BoundReport r;
    r.kind = "crb";
    r.component = component;
    double v;
    if (l0_norm(x0) < p.sparsity()) {
        const Matrix hth = p.H().transpose() * p.H();
        v = p.sigma2() * mean.grad.dot(pinv(hth) * mean.grad);
        r.params["restricted"] = false;
    } else {
        const Support supp = support_of(x0);
        const Matrix hs = columns(p.H(), supp);
        const Vector bs = entries(mean.grad, supp);
        v = p.sigma2() * bs.dot(pinv(Matrix(hs.transpose() * hs)) * bs);
        r.params["restricted"] = true;
        r.params["support"] = supp;
    }
    return finish(std::move(r), v, v);
}

BoundReport hcrb_ssnm(const SlmProblem& p, const Vector& x0, Index k) {
    if (!p.is_identity()) throw std::invalid_argument("hcrb_ssnm: requires H = I");
    p.check_param(x0);
    if (k < 0 || k >= p.dim()) throw std::out_of_range("hcrb_ssnm: component out of range");
    const int S = p.sparsity();
    const Support supp = support_of(x0);
    BoundReport r;
    r.kind = "hcrb_ssnm";
    r.component = static_cast<int>(k);
    const bool full = !contains(supp, k) && static_cast<int>(supp.size()) == S;
    double v = p.sigma2();
    if (full) {
        const LargestEntry xi = s_largest_entry(x0, S);
        const double n = static_cast<double>(p.dim());
        v = p.sigma2() * (n - S - 1) / (n - S) * std::exp(-xi.value * xi.value / p.sigma2());
        r.params["xi0"] = xi.value;
        r.params["j0"] = xi.index;
    }
    r.params["case"] = full ? 2 : 1;
    return finish(std::move(r), v, v);
}

Vector tilde_x0(const SlmProblem& p, const Vector& x0, const Support& K) {
    return project_onto(p, x0, K, nullptr, "tilde_x0").tilde;
}

namespace {

void record_common(BoundReport& r, const Support& K, const ProjectedGeometry& g, const Vector& x0) {
    r.params["K"] = K;
    r.params["x0"] = to_std(x0);
    r.params["anchor"] = to_std(g.tilde);
    r.params["residual_sq"] = g.residual_sq;
}

}  // namespace

BoundReport rkhs_bound_a(const SlmProblem& p, const Vector& x0, const Support& K, const MeanModel& mean,
                         int component) {
    mean.validate(p.dim());
    const ProjectedGeometry g = project_onto(p, x0, K, &mean.grad, "rkhs_bound_a");
    check_anchor(mean, g.tilde, "rkhs_bound_a");
    BoundReport r;
    r.kind = "rkhs_a";
    r.component = component;
    record_common(r, K, g, x0);
    const double pos = std::exp(-g.residual_sq / p.sigma2()) *
                       (p.sigma2() * g.gram_term + mean.gamma_at_anchor * mean.gamma_at_anchor);
    const double neg = mean.gamma0 * mean.gamma0;
    return finish(std::move(r), pos - neg, std::max(pos, neg));
}

BoundReport rkhs_bound_b(const SlmProblem& p, const Vector& x0, const Support& K, const MeanModel& mean,
                         int component) {
    mean.validate(p.dim());
    const ProjectedGeometry g = project_onto(p, x0, K, &mean.grad, "rkhs_bound_b");
    check_anchor(mean, g.tilde, "rkhs_bound_b");
    BoundReport r;
    r.kind = "rkhs_b";
    r.component = component;
    record_common(r, K, g, x0);
    const double v = std::exp(-g.residual_sq / p.sigma2()) * p.sigma2() * g.gram_term;
    return finish(std::move(r), v, v);
}

BoundReport rip_bound_cs(const SlmProblem& p, const Vector& x0, const Support& K, const MeanModel& mean,
                         double delta_s, int component) {
    if (!(delta_s >= 0.0) || !(delta_s < 1.0)) throw std::invalid_argument("rip_bound_cs: need 0 <= delta_S < 1");
    mean.validate(p.dim());
    const ProjectedGeometry g = project_onto(p, x0, K, &mean.grad, "rip_bound_cs");
    check_anchor(mean, g.tilde, "rip_bound_cs");
    double outside = 0.0;
    for (Index i : support_of(x0))
        if (!contains(K, i)) outside += x0(i) * x0(i);
    BoundReport r;
    r.kind = "rip_cs";
    r.component = component;
    record_common(r, K, g, x0);
    r.params["delta_s"] = delta_s;
    const double v = std::exp(-(1.0 + delta_s) * outside / p.sigma2()) * p.sigma2() * g.gram_term;
    return finish(std::move(r), v, v);
}

Support default_index_set(const Vector& x0, Index k, int S, IndexSetRule rule) {
    const Support supp = support_of(x0);
    if (static_cast<int>(supp.size()) > S) throw std::invalid_argument("default_index_set: x0 not S-sparse");
    if (k < 0 || k >= x0.size()) throw std::out_of_range("default_index_set: component out of range");
    if (contains(supp, k)) return supp;
    if (rule == IndexSetRule::singleton) return {k};
    Support K = supp;
    if (static_cast<int>(supp.size()) == S) K = without_index(K, s_largest_entry(x0, S).index);
    return with_index(K, k);
}

IndexSetRule parse_index_set_rule(const std::string& name) {
    if (name == "singleton") return IndexSetRule::singleton;
    if (name == "swap_smallest") return IndexSetRule::swap_smallest;
    throw std::invalid_argument("unknown index set rule: " + name);
}

std::string index_set_rule_name(IndexSetRule rule) {
    return rule == IndexSetRule::singleton ? "singleton" : "swap_smallest";
}

// ---- SSNM Barankin ---------------------------------------------------------------------

BoundReport ssnm_barankin(const HermiteSeries& series, const Vector& x0, Index k, int S) {
    series.validate();
    if (k < 0 || k >= x0.size()) throw std::out_of_range("ssnm_barankin: component out of range");
    if (l0_norm(x0) > S) throw std::invalid_argument("ssnm_barankin: x0 not S-sparse");
    if (std::abs(series.center - x0(k)) > 1e-12 * std::max(1.0, std::abs(x0(k))))
        throw std::invalid_argument("ssnm_barankin: series must be centred at x0_k");
    const bool corrected = lmv_needs_correction(x0, k, S);
    const double t = lmv_factor_t(x0, k, S, series.sigma);
    const double gamma0 = series.m.empty() ? 0.0 : series.m[0];
    const double energy = series.energy();
    BoundReport r;
    r.kind = "ssnm_barankin";
    r.component = static_cast<int>(k);
    r.params["case"] = corrected ? 2 : 1;
    r.params["t"] = t;
    r.params["terms"] = series.m.size();
    r.params["sigma"] = series.sigma;
    return finish(std::move(r), t * energy - gamma0 * gamma0, std::max(t * energy, gamma0 * gamma0));
}

BoundReport ssnm_barankin_from_estimator(double base_var_at_x0, double gamma0, const Vector& x0, Index k, int S,
                                         double sigma) {
    if (!(base_var_at_x0 >= 0.0) || !std::isfinite(base_var_at_x0))
        throw std::invalid_argument("ssnm_barankin_from_estimator: variance must be finite and nonnegative");
    const double t = lmv_factor_t(x0, k, S, sigma);
    BoundReport r;
    r.kind = "ssnm_barankin";
    r.component = static_cast<int>(k);
    r.params["case"] = lmv_needs_correction(x0, k, S) ? 2 : 1;
    r.params["t"] = t;
    r.params["base_variance"] = base_var_at_x0;
    const double v = base_var_at_x0 * t + (t - 1.0) * gamma0 * gamma0;
    return finish(std::move(r), v, std::max(base_var_at_x0, gamma0 * gamma0));
}

BoundReport ssnm_bound_for_transformed(const Matrix& h, const HermiteSeries& series, const Vector& x0, Index k,
                                       int S) {
    if (h.cols() != x0.size()) throw std::invalid_argument("ssnm_bound_for_transformed: H has wrong width");
    BoundReport r = ssnm_barankin(series, x0, k, S);
    r.kind = "ssnm_transformed";
    r.params["rows"] = h.rows();
    return r;
}

BoundReport ssnm_barankin_numeric(const std::function<double(const Vector&)>& mean, const Vector& x0, int S,
                                  double sigma, int max_order) {
    const Index n = x0.size();
    if (n > kBarankinNumericMaxN || S > kBarankinNumericMaxS || max_order > kBarankinNumericMaxOrder ||
        max_order < 0 || S < 1 || n < 1)
        throw std::invalid_argument("ssnm_barankin_numeric: budget exceeded (N <= 3, S <= 2, P <= 6)");
    if (!(sigma > 0.0)) throw std::invalid_argument("ssnm_barankin_numeric: sigma must be positive");
    if (l0_norm(x0) > S) throw std::invalid_argument("ssnm_barankin_numeric: x0 not S-sparse");
    const double log_nu0 = -x0.squaredNorm() / (2.0 * sigma * sigma);
    const auto face_dim = static_cast<Index>(std::min<Index>(S, n));

    // gamma(sigma x) nu_{x0}(x) is only needed on X_S: expand it on each coordinate face.
    std::map<MultiIndex, double> coef;
    for_each_subset(n, face_dim, [&](const std::vector<Index>& face) {
        const auto f = [&](const Vector& u) {
            Vector x = Vector::Zero(n);
            for (std::size_t j = 0; j < face.size(); ++j) x(face[j]) = u(static_cast<Index>(j));
            return mean(sigma * x) * std::exp(log_nu0 + x.dot(x0) / sigma);
        };
        for (const auto& [q, c] : taylor_coefficients(f, static_cast<int>(face.size()), max_order, 1.0)) {
            MultiIndex full(static_cast<std::size_t>(n), 0);
            for (std::size_t j = 0; j < face.size(); ++j) full[static_cast<std::size_t>(face[j])] = q[j];
            coef.emplace(full, c);
        }
        return true;
    });
    double sum = 0.0;
    for (const auto& [q, c] : coef) sum += c * c * multi_factorial(q);  // a[p] = c_p sqrt(p!)
    const double g0 = mean(x0);
    BoundReport r;
    r.kind = "ssnm_barankin_numeric";
    r.params["max_order"] = max_order;
    r.params["coefficients"] = coef.size();
    r.params["x0"] = to_std(x0);
    return finish(std::move(r), sum - g0 * g0, std::max(sum, g0 * g0));
}

// ---- covariance models ---------------------------------------------------------------

Matrix spcm_fisher_matrix(const SpcmProblem& p, const Vector& x0) {
    p.check_param(x0);
    const Eigen::LLT<Matrix> llt(spcm_cov(p, x0));
    if (llt.info() != Eigen::Success) throw NumericalConsistencyError("spcm_fisher_matrix: covariance not pd");
    std::vector<Matrix> a;
    for (Index k = 0; k < p.dim(); ++k) a.push_back(llt.solve(p.basis()[static_cast<std::size_t>(k)]));
    Matrix j(p.dim(), p.dim());
    for (Index m = 0; m < p.dim(); ++m)
        for (Index q = m; q < p.dim(); ++q)
            j(m, q) = j(q, m) =
                0.5 * (a[static_cast<std::size_t>(m)].array() * a[static_cast<std::size_t>(q)].transpose().array()).sum();
    return j;
}

BoundReport spcm_fisher_bound(const SpcmProblem& p, const Vector& x0, const Vector& grad, int component) {
    require_length(grad, p.dim(), "spcm_fisher_bound");
    const Matrix j = spcm_fisher_matrix(p, x0);
    BoundReport r;
    r.kind = "spcm_fisher";
    r.component = component;
    double v;
    if (l0_norm(x0) < p.sparsity()) {
        v = gram_projection_sq_norm(grad, j);
        r.params["restricted"] = false;
    } else {
        const Support supp = support_of(x0);
        Matrix js(supp.size(), supp.size());
        for (std::size_t a = 0; a < supp.size(); ++a)
            for (std::size_t b = 0; b < supp.size(); ++b)
                js(static_cast<Index>(a), static_cast<Index>(b)) = j(supp[a], supp[b]);
        v = gram_projection_sq_norm(entries(grad, supp), js);
        r.params["restricted"] = true;
        r.params["support"] = supp;
    }
    return finish(std::move(r), v, v);
}

BoundReport spcm_fisher_bound(const SdpcmProblem& p, const Vector& x0, const Vector& grad, int component) {
    return spcm_fisher_bound(to_spcm(p), x0, grad, component);
}

namespace {

BoundReport spcm_rip_impl(const std::vector<int>& ranks, double sigma2, const Vector& x0, Index l, double b_l,
                          double delta) {
    if (!(delta >= 0.0) || !(delta < kSpcmRipMaxDelta))
        throw std::invalid_argument("spcm_rip_bound: need 0 <= delta_{S+1} < 1/32");
    if (l < 0 || l >= x0.size()) throw std::out_of_range("spcm_rip_bound: index out of range");
    if (x0(l) != 0.0) throw std::invalid_argument("spcm_rip_bound: l must lie outside supp(x0)");
    const double d = delta;
    const double beta = (2.0 - std::pow((1.0 + d) / (1.0 - d), 4)) / ((1.0 + d) * (1.0 + d));
    const double rl = ranks[static_cast<std::size_t>(l)];
    double q = rl;
    double log_v = std::log(2.0 * sigma2 * sigma2 * b_l * b_l / rl);
    const double inflated = sigma2 * (1.0 + 5.0 * d);
    for (Index k : support_of(x0)) {
        q += ranks[static_cast<std::size_t>(k)];
        log_v -= 0.5 * ranks[static_cast<std::size_t>(k)] * std::log(x0(k) + inflated);
    }
    log_v += 0.5 * q * std::log(sigma2 * beta) - 0.5 * rl * std::log(inflated) + 2.0 * std::log(beta);
    const double e = 12.0 * d;
    const double bracket = rl * e * e / 2.0 + e * e + beta * (6.0 * d + 1.0);
    BoundReport r;
    r.kind = "spcm_rip";
    r.component = static_cast<int>(l);
    r.params["delta"] = delta;
    r.params["beta"] = beta;
    r.params["Q"] = q;
    const double v = b_l == 0.0 ? 0.0 : std::exp(log_v) / bracket;
    return finish(std::move(r), v, v);
}

}  // namespace

BoundReport spcm_rip_bound(const SpcmProblem& p, const Vector& x0, Index l, double b_l, double delta) {
    p.check_param(x0);
    std::vector<int> ranks;
    for (Index k = 0; k < p.dim(); ++k) ranks.push_back(p.rank(k));
    return spcm_rip_impl(ranks, p.sigma2(), x0, l, b_l, delta);
}

BoundReport spcm_rip_bound(const SdpcmProblem& p, const Vector& x0, Index l, double b_l, double delta) {
    p.check_param(x0);
    return spcm_rip_impl(p.ranks(), p.sigma2(), x0, l, b_l, delta);
}

namespace {

void check_projection_inputs(const SdpcmProblem& p, const Vector& x0, const Support& K, const MultiIndex& index) {
    p.check_param(x0);
    check_index_set(K, p.dim(), p.sparsity(), "sdpcm_projection_bound");
    if (static_cast<Index>(index.size()) != p.dim())
        throw std::invalid_argument("sdpcm_projection_bound: multi-index length must be N");
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] < 0) throw std::invalid_argument("sdpcm_projection_bound: negative multi-index entry");
        if (index[k] > 0 && !contains(K, static_cast<Index>(k)))
            throw std::invalid_argument("sdpcm_projection_bound: multi-index support must lie inside K");
    }
}

}  // namespace

double sdpcm_q_closed_form(const SdpcmProblem& p, const Vector& x0, const Support& K, const MultiIndex& index) {
    check_projection_inputs(p, x0, K, index);
    const double s2 = p.sigma2();
    double log_q = 0.0;
    for (Index k = 0; k < p.dim(); ++k) {
        const int pk = index[static_cast<std::size_t>(k)];
        const double a = x0(k) + s2;
        const double r = p.rank(k);
        if (pk > 0) {
            double log_c = 0.0;
            for (int l = 1; l <= pk; ++l) log_c += std::log(r / 2.0 + (l - 1));
            log_q += log_c + std::lgamma(pk + 1.0) - 2.0 * pk * std::log(a);
        }
        if (x0(k) != 0.0 && !contains(K, k))
            log_q += r * std::log(a) - 0.5 * r * std::log(a * a - x0(k) * x0(k));
    }
    return std::exp(log_q);
}

double sdpcm_q_numeric(const SdpcmProblem& p, const Vector& x0, const Support& K, const MultiIndex& index) {
    check_projection_inputs(p, x0, K, index);
    const Vector xk = restrict_to(x0, K);
    const double r0 = sdpcm_kernel(p, x0, xk, xk);
    // The kernel is a product over coordinates, so each differentiated coordinate
    // contributes its own two-variable mixed partial, read off a Chebyshev expansion.
    double q = r0;
    for (Index k = 0; k < p.dim(); ++k) {
        const int pk = index[static_cast<std::size_t>(k)];
        if (pk == 0) continue;
        const double radius = 0.5 * (x0(k) + p.sigma2());
        const auto f = [&](const Vector& uv) {
            Vector x1 = xk, x2 = xk;
            x1(k) += uv(0);
            x2(k) += uv(1);
            return sdpcm_kernel(p, x0, x1, x2);
        };
        const auto coef = taylor_coefficients(f, 2, 2 * pk, radius, 2 * pk + 10);
        const double fact = factorial(pk);
        q *= coef.at(MultiIndex{pk, pk}) * fact * fact / r0;
    }
    return q;
}

BoundReport sdpcm_projection_bound(const SdpcmProblem& p, const Vector& x0, const Support& K,
                                   const std::vector<MultiIndex>& indices, const Vector& partials, double gamma0,
                                   int component) {
    if (partials.size() != static_cast<Index>(indices.size()))
        throw std::invalid_argument("sdpcm_projection_bound: one partial per multi-index");
    if (std::set<MultiIndex>(indices.begin(), indices.end()).size() != indices.size())
        throw std::invalid_argument("sdpcm_projection_bound: multi-indices must be distinct");
    if (static_cast<int>(K.size()) != p.sparsity())
        throw std::invalid_argument("sdpcm_projection_bound: |K| must equal S");
    double sum = 0.0;
    std::vector<double> qs;
    for (std::size_t l = 0; l < indices.size(); ++l) {
        const double qc = sdpcm_q_closed_form(p, x0, K, indices[l]);
        const double qn = sdpcm_q_numeric(p, x0, K, indices[l]);
        if (!(std::abs(qc - qn) <= kQAgreementRtol * std::abs(qc)))
            throw NumericalConsistencyError("sdpcm_projection_bound: closed-form and numeric q disagree (" +
                                            std::to_string(qc) + " vs " + std::to_string(qn) + ")");
        qs.push_back(qc);
        const double d = partials(static_cast<Index>(l));
        sum += d * d / qc;
    }
    BoundReport r;
    r.kind = "sdpcm_projection";
    r.component = component;
    r.params["K"] = K;
    r.params["indices"] = indices;
    r.params["q"] = qs;
    r.params["x0"] = to_std(x0);
    return finish(std::move(r), sum - gamma0 * gamma0, std::max(sum, gamma0 * gamma0));
}

Support first_order_index_set(const Vector& x0, Index l, int S) {
    const Support supp = support_of(x0);
    if (contains(supp, l)) return supp;
    return with_index(without_index(supp, s_largest_entry(x0, S).index), l);
}

namespace {

// [1 - xi0^2/(xi0 + sigma^2)^2]^{r_j0 / 2}
double outside_support_factor(const SdpcmProblem& p, const Vector& x0, nlohmann::json& params) {
    const LargestEntry xi = s_largest_entry(x0, p.sparsity());
    const double s2 = p.sigma2();
    const double ratio = xi.value / (xi.value + s2);
    params["xi0"] = xi.value;
    params["j0"] = xi.index;
    return std::pow(1.0 - ratio * ratio, 0.5 * p.rank(xi.index));
}

}  // namespace

BoundReport sdpcm_first_order_bound(const SdpcmProblem& p, const Vector& x0, const Vector& b, int component) {
    p.check_param(x0);
    require_length(b, p.dim(), "sdpcm_first_order_bound");
    BoundReport r;
    r.kind = "sdpcm_first_order";
    r.component = component;
    const double s2 = p.sigma2();
    const double factor = outside_support_factor(p, x0, r.params);
    double inside = 0.0, outside = 0.0;
    for (Index l = 0; l < p.dim(); ++l) {
        if (x0(l) != 0.0) {
            const double a = x0(l) + s2;
            inside += a * a * b(l) * b(l) / p.rank(l);
        } else {
            outside += b(l) * b(l) / p.rank(l);
        }
    }
    const double v = 2.0 * inside + 2.0 * s2 * s2 * factor * outside;
    return finish(std::move(r), v, v);
}

BoundReport spectrum_bound(const SdpcmProblem& p, const Vector& x0, Index k) {
    p.check_param(x0);
    if (k < 0 || k >= p.dim()) throw std::out_of_range("spectrum_bound: component out of range");
    BoundReport r;
    r.kind = "spectrum";
    r.component = static_cast<int>(k);
    const double s2 = p.sigma2();
    double v;
    if (x0(k) != 0.0) {
        const double a = x0(k) + s2;
        v = 2.0 * a * a / p.rank(k);
    } else {
        v = 2.0 * s2 * s2 / p.rank(k) * outside_support_factor(p, x0, r.params);
    }
    return finish(std::move(r), v, v);
}

// ---- aggregation ---------------------------------------------------------------------

BoundReport sum_components(const std::vector<BoundReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("sum_components: no reports");
    if (reports.size() == 1) return reports.front();
    std::set<int> seen;
    BoundReport out;
    out.kind = reports.front().kind;
    out.params["components"] = nlohmann::json::array();
    for (const auto& r : reports) {
        if (r.component == kSumComponent) throw std::invalid_argument("sum_components: report is already a sum");
        if (!seen.insert(r.component).second) throw std::invalid_argument("sum_components: duplicate component");
        if (r.kind != out.kind) out.kind = "mixed";
        out.value += r.value;
        out.floored = out.floored || r.floored;
        nlohmann::json entry = r.params;
        entry["component"] = r.component;
        entry["kind"] = r.kind;
        entry["value"] = r.value;
        out.params["components"].push_back(entry);
    }
    out.component = kSumComponent;
    return out;
}

}  // namespace sparsemv
