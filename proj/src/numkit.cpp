#include "sparsemv/numkit.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace sparsemv {

namespace {

constexpr double kMachineEps = 2.2e-16;
constexpr double kSymmetryTol = 1e-10;

double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

void require_symmetric(const Matrix& g, const char* what) {
    if (g.rows() != g.cols()) {
        throw std::invalid_argument(std::string(what) + ": matrix is not square");
    }
    const double scale = std::max(1.0, max_abs(g));
    if (max_abs(g - g.transpose()) > kSymmetryTol * scale) {
        throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
    }
}

// Eigen-decomposition of the symmetrized matrix; rejects clearly indefinite input.
Eigen::SelfAdjointEigenSolver<Matrix> psd_eigen(const Matrix& g, const char* what) {
    require_symmetric(g, what);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (g + g.transpose()));
    if (eig.info() != Eigen::Success) {
        throw NumericalConsistencyError(std::string(what) + ": eigendecomposition failed");
    }
    const Vector& lam = eig.eigenvalues();
    if (lam.size() > 0) {
        const double top = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
        if (lam.minCoeff() < -1e-9 * top) {
            throw std::invalid_argument(std::string(what) + ": matrix is not positive semidefinite");
        }
    }
    return eig;
}

}  // namespace

double default_rank_rtol(Index rows, Index cols) {
    return static_cast<double>(std::max(rows, cols)) * kMachineEps;
}

void require_finite(const Matrix& a, const char* what) {
    if (!a.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

ThinSvd thin_svd(const Matrix& a) { return thin_svd(a, default_rank_rtol(a.rows(), a.cols())); }

ThinSvd thin_svd(const Matrix& a, double rank_rtol) {
    if (!(rank_rtol >= 0.0 && rank_rtol < 1.0)) {
        throw std::invalid_argument("thin_svd: rank_rtol must lie in [0, 1)");
    }
    require_finite(a, "thin_svd");
    if (a.size() == 0 || max_abs(a) == 0.0) {
        throw std::invalid_argument("thin_svd: zero-rank matrix");
    }
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double cutoff = rank_rtol * s(0);
    Index r = 0;
    while (r < s.size() && s(r) > cutoff && s(r) > 0.0) ++r;

    ThinSvd out;
    out.U = svd.matrixU().leftCols(r);
    out.singular_values = s.head(r);
    out.V = svd.matrixV().leftCols(r);
    return out;
}

Matrix pinv(const Matrix& a) { return pinv(a, default_rank_rtol(a.rows(), a.cols())); }

Matrix pinv(const Matrix& a, double rank_rtol) {
    require_finite(a, "pinv");
    if (a.size() == 0 || max_abs(a) == 0.0) return Matrix::Zero(a.cols(), a.rows());
    const ThinSvd f = thin_svd(a, rank_rtol);
    return f.V * f.singular_values.cwiseInverse().asDiagonal() * f.U.transpose();
}

Index numerical_rank(const Matrix& a) {
    if (a.size() == 0 || max_abs(a) == 0.0) return 0;
    return thin_svd(a).rank();
}

double gram_projection_sq_norm(const Vector& c, const Matrix& gram) {
    if (c.size() != gram.rows()) {
        throw std::invalid_argument("gram_projection_sq_norm: dimension mismatch");
    }
    if (c.size() == 0) return 0.0;
    const auto eig = psd_eigen(gram, "gram_projection_sq_norm");
    const Vector& lam = eig.eigenvalues();
    const double top = lam.cwiseAbs().maxCoeff();
    if (top == 0.0) return 0.0;
    const double cutoff = default_rank_rtol(gram.rows(), gram.cols()) * top;
    const Vector coords = eig.eigenvectors().transpose() * c;
    double acc = 0.0;
    for (Index i = 0; i < lam.size(); ++i) {
        if (lam(i) > cutoff) acc += coords(i) * coords(i) / lam(i);
    }
    return acc;
}

double split_gram_projection_sq_norm(const Vector& c1, const Matrix& g1, const Vector& c2,
                                     const Matrix& g2) {
    return gram_projection_sq_norm(c1, g1) + gram_projection_sq_norm(c2, g2);
}

std::vector<double> hermite_prob_all(int max_order, double x) {
    if (max_order < 0) throw std::invalid_argument("hermite_prob: negative order");
    if (max_order > kHermiteMaxOrder) {
        throw std::out_of_range("hermite_prob: order exceeds truncation cap of 60");
    }
    std::vector<double> h(static_cast<std::size_t>(max_order) + 1);
    h[0] = 1.0;
    if (max_order >= 1) h[1] = x;
    for (int l = 1; l < max_order; ++l) h[l + 1] = x * h[l] - l * h[l - 1];
    return h;
}

double hermite_prob(int l, double x) { return hermite_prob_all(l, x).back(); }

std::vector<double> hermite_normalized_all(int max_order, double x) {
    if (max_order < 0) throw std::invalid_argument("hermite_normalized: negative order");
    if (max_order > kHermiteMaxOrder) {
        throw std::out_of_range("hermite_normalized: order exceeds truncation cap of 60");
    }
    std::vector<double> h(static_cast<std::size_t>(max_order) + 1);
    h[0] = 1.0;
    if (max_order >= 1) h[1] = x;
    for (int l = 1; l < max_order; ++l)
        h[l + 1] = (x * h[l] - std::sqrt(static_cast<double>(l)) * h[l - 1]) / std::sqrt(l + 1.0);
    return h;
}

void for_each_subset(Index n, Index k, const std::function<bool(const std::vector<Index>&)>& visit) {
    if (k < 0 || k > n) return;
    std::vector<Index> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), Index{0});
    while (true) {
        if (!visit(idx)) return;
        Index i = k - 1;
        while (i >= 0 && idx[i] == n - k + i) --i;
        if (i < 0) return;
        ++idx[i];
        for (Index j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

namespace {

Matrix columns(const Matrix& a, const std::vector<Index>& sel) {
    Matrix out(a.rows(), static_cast<Index>(sel.size()));
    for (std::size_t j = 0; j < sel.size(); ++j) out.col(static_cast<Index>(j)) = a.col(sel[j]);
    return out;
}

}  // namespace

Index spark(const Matrix& a) {
    require_finite(a, "spark");
    const Index n = a.cols();
    if (n > kBruteForceMaxColumns) {
        throw std::length_error("spark: more than 20 columns exceeds the brute-force budget");
    }
    for (Index k = 1; k <= n; ++k) {
        if (k > a.rows()) return k;
        bool dependent = false;
        for_each_subset(n, k, [&](const std::vector<Index>& sel) {
            dependent = numerical_rank(columns(a, sel)) < k;
            return !dependent;
        });
        if (dependent) return k;
    }
    return n;
}

double coherence(const Matrix& a) {
    if (a.cols() < 2) throw std::invalid_argument("coherence: need at least two columns");
    const Matrix g = a.transpose() * a;
    double mu = 0.0;
    for (Index i = 0; i < g.rows(); ++i)
        for (Index j = i + 1; j < g.cols(); ++j) mu = std::max(mu, std::abs(g(i, j)));
    return mu;
}

std::string RipResult::convention_name() const {
    return convention == RipConvention::squared_norm ? "squared_norm" : "singular_value";
}

RipResult rip_constant(const Matrix& a, int order) {
    require_finite(a, "rip_constant");
    if (a.cols() > kBruteForceMaxColumns || order > kRipMaxOrder) {
        throw std::length_error("rip_constant: brute-force budget exceeded (N <= 20, K <= 6)");
    }
    if (order < 1 || order > a.cols()) throw std::invalid_argument("rip_constant: bad order");
    RipResult res;
    res.convention = RipConvention::squared_norm;
    res.delta = -1.0;
    for_each_subset(a.cols(), order, [&](const std::vector<Index>& sel) {
        const Matrix sub = columns(a, sel);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(sub.transpose() * sub, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (lo <= default_rank_rtol(sub.rows(), sub.cols()) * hi) res.rank_deficient = true;
        const double d = std::max(hi - 1.0, 1.0 - lo);
        if (d > res.delta) {
            res.delta = d;
            res.worst_subset = sel;
        }
        return true;
    });
    res.delta = std::max(res.delta, 0.0);
    return res;
}

RipResult rip_constant(const std::vector<Matrix>& blocks, int order) {
    const auto n = static_cast<Index>(blocks.size());
    if (n > kBruteForceMaxColumns || order > kRipMaxOrder) {
        throw std::length_error("rip_constant: brute-force budget exceeded (N <= 20, K <= 6)");
    }
    if (order < 1 || order > n) throw std::invalid_argument("rip_constant: bad order");
    const Index m = blocks.front().rows();
    for (const auto& b : blocks) {
        if (b.rows() != m || b.cols() < 1) throw std::invalid_argument("rip_constant: block shape");
        require_finite(b, "rip_constant");
    }
    RipResult res;
    res.convention = RipConvention::singular_value;
    res.delta = -1.0;
    for_each_subset(n, order, [&](const std::vector<Index>& sel) {
        Index width = 0;
        for (Index k : sel) width += blocks[k].cols();
        Matrix cat(m, width);
        Index at = 0;
        for (Index k : sel) {
            cat.middleCols(at, blocks[k].cols()) = blocks[k];
            at += blocks[k].cols();
        }
        bool deficient = width > m;
        double d = 1.0;
        if (!deficient) {
            Eigen::JacobiSVD<Matrix> svd(cat);
            const Vector& s = svd.singularValues();
            const double hi = s(0);
            const double lo = s(s.size() - 1);
            deficient = lo <= default_rank_rtol(m, width) * hi;
            if (!deficient) d = std::max(hi - 1.0, 1.0 - lo);
        }
        if (deficient) {
            if (!res.rank_deficient) res.worst_subset = sel;
            res.rank_deficient = true;
        } else if (!res.rank_deficient && d > res.delta) {
            res.delta = d;
            res.worst_subset = sel;
        }
        return true;
    });
    res.delta = res.rank_deficient ? 1.0 : std::max(res.delta, 0.0);
    return res;
}

Matrix psd_factor(const Matrix& c) {
    require_finite(c, "psd_factor");
    const auto eig = psd_eigen(c, "psd_factor");
    const Vector& lam = eig.eigenvalues();
    const double top = lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0;
    const double cutoff = default_rank_rtol(c.rows(), c.cols()) * top;
    std::vector<Index> keep;
    // eigenvalues come ascending; emit the factor with the largest first
    for (Index i = lam.size() - 1; i >= 0; --i)
        if (top > 0.0 && lam(i) > cutoff) keep.push_back(i);
    Matrix h(c.rows(), static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
        h.col(static_cast<Index>(j)) = eig.eigenvectors().col(keep[j]) * std::sqrt(lam(keep[j]));
    return h;
}

double factorial(int n) {
    if (n < 0) throw std::invalid_argument("factorial: negative argument");
    return std::tgamma(n + 1.0);
}

double multi_factorial(const MultiIndex& p) {
    double f = 1.0;
    for (int v : p) f *= factorial(v);
    return f;
}

std::map<MultiIndex, double> taylor_coefficients(const std::function<double(const Vector&)>& f,
                                                 int dim, int max_order, double radius,
                                                 int chebyshev_degree) {
    if (dim < 1 || max_order < 0 || !(radius > 0.0) || chebyshev_degree < max_order) {
        throw std::invalid_argument("taylor_coefficients: bad arguments");
    }
    const int n = chebyshev_degree + 1;
    std::size_t total = 1;
    for (int d = 0; d < dim; ++d) {
        total *= static_cast<std::size_t>(n);
        if (total > 2'000'000) throw std::length_error("taylor_coefficients: grid too large");
    }

    std::vector<double> nodes(n);
    for (int i = 0; i < n; ++i) nodes[i] = std::cos(std::numbers::pi * (i + 0.5) / n);
    // cheb(j, i) = T_j(node_i)
    Matrix cheb(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) cheb(j, i) = std::cos(j * std::numbers::pi * (i + 0.5) / n);

    // sample on the tensor grid, flat index with dimension 0 fastest
    std::vector<double> vals(total);
    Vector pt(dim);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (int d = 0; d < dim; ++d) {
            pt(d) = radius * nodes[rem % n];
            rem /= n;
        }
        vals[flat] = f(pt);
    }

    // discrete Chebyshev transform along each dimension in turn
    std::size_t stride = 1;
    std::vector<double> line(n);
    for (int d = 0; d < dim; ++d) {
        for (std::size_t base = 0; base < total; ++base) {
            if ((base / stride) % n != 0) continue;
            for (int i = 0; i < n; ++i) line[i] = vals[base + i * stride];
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += cheb(j, i) * line[i];
                vals[base + j * stride] = s * (j == 0 ? 1.0 : 2.0) / n;
            }
        }
        stride *= n;
    }

    // monomial coefficients of T_j: mono(j, q) = [u^q] T_j(u)
    Matrix mono = Matrix::Zero(n, n);
    mono(0, 0) = 1.0;
    if (n > 1) mono(1, 1) = 1.0;
    for (int j = 1; j + 1 < n; ++j) {
        for (int q = 0; q < n; ++q) {
            double v = -mono(j - 1, q);
            if (q > 0) v += 2.0 * mono(j, q - 1);
            mono(j + 1, q) = v;
        }
    }

    std::map<MultiIndex, double> out;
    MultiIndex p(dim, 0);
    std::function<void(int, int)> enumerate = [&](int d, int budget) {
        if (d == dim) {
            // only Chebyshev indices j_d >= p_d with matching parity contribute
            double acc = 0.0;
            std::size_t s2 = 1;
            std::vector<std::size_t> strides(dim);
            for (int e = 0; e < dim; ++e) {
                strides[e] = s2;
                s2 *= n;
            }
            for (std::size_t flat = 0; flat < total; ++flat) {
                double w = vals[flat];
                if (w == 0.0) continue;
                std::size_t rem = flat;
                for (int e = 0; e < dim && w != 0.0; ++e) {
                    const int j = static_cast<int>(rem % n);
                    rem /= n;
                    w *= mono(j, p[e]);
                }
                acc += w;
            }
            int order = 0;
            for (int v : p) order += v;
            out[p] = acc / std::pow(radius, order);
            return;
        }
        for (int v = 0; v <= budget; ++v) {
            p[d] = v;
            enumerate(d + 1, budget - v);
        }
        p[d] = 0;
    };
    enumerate(0, max_order);
    return out;
}

}  // namespace sparsemv
