#include "sparsemv/models.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace sparsemv {

namespace {

constexpr double kOrthoTol = 1e-10;
constexpr double kPdRtol = 1e-12;

void require_length(const Vector& v, Index n, const char* what) {
    if (v.size() != n) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

void check_sparse(const Vector& x, Index n, int s, bool nonneg, const char* what) {
    require_length(x, n, what);
    if (!x.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite parameter");
    if (nonneg && (x.array() < 0.0).any())
        throw std::invalid_argument(std::string(what) + ": negative entry in covariance parameter");
    if (l0_norm(x) > s)
        throw std::invalid_argument(std::string(what) + ": parameter has more than S nonzeros");
}

void check_noise(double sigma2, const char* what) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw std::invalid_argument(std::string(what) + ": sigma2 must be positive and finite");
}

// min eigenvalue > 1e-12 * spectral norm
bool positive_definite(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
    const Vector& lam = eig.eigenvalues();
    const double top = lam.cwiseAbs().maxCoeff();
    return top > 0.0 && lam.minCoeff() > kPdRtol * top;
}

Matrix spd_inverse(const Matrix& c) {
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) throw std::domain_error("outside restricted domain");
    return llt.solve(Matrix::Identity(c.rows(), c.cols()));
}

double spd_logdet(const Matrix& c) {
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) throw std::domain_error("outside restricted domain");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

Support support_of(const Vector& x) {
    Support s;
    for (Index i = 0; i < x.size(); ++i)
        if (x(i) != 0.0) s.push_back(i);
    return s;
}

Index l0_norm(const Vector& x) { return static_cast<Index>((x.array() != 0.0).count()); }

LargestEntry s_largest_entry(const Vector& x, int S) {
    if (S < 1 || S > x.size()) throw std::invalid_argument("s_largest_entry: S out of range");
    std::vector<Index> order(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return std::abs(x(a)) > std::abs(x(b)); });
    const Index j0 = order[static_cast<std::size_t>(S - 1)];
    return {std::abs(x(j0)), j0};
}

Vector restrict_to(const Vector& x, const Support& keep) {
    Vector out = Vector::Zero(x.size());
    for (Index k : keep) out(k) = x(k);
    return out;
}

bool contains(const Support& set, Index k) { return std::find(set.begin(), set.end(), k) != set.end(); }

Support with_index(Support set, Index k) {
    if (!contains(set, k)) {
        set.push_back(k);
        std::sort(set.begin(), set.end());
    }
    return set;
}

Support without_index(Support set, Index k) {
    set.erase(std::remove(set.begin(), set.end(), k), set.end());
    return set;
}

// ---- SLM ---------------------------------------------------------------------

SlmProblem::SlmProblem(Matrix h, double sigma2, int sparsity)
    : h_(std::move(h)), sigma2_(sigma2), s_(sparsity) {
    check_noise(sigma2_, "SlmProblem");
    if (h_.size() == 0) throw std::invalid_argument("SlmProblem: empty system matrix");
    require_finite(h_, "SlmProblem");
    if (s_ < 1 || s_ > h_.cols()) throw std::invalid_argument("SlmProblem: S must lie in [1, N]");
    identity_ = h_.rows() == h_.cols() && h_ == Matrix::Identity(h_.rows(), h_.cols());
    if (!identity_ && h_.cols() <= kBruteForceMaxColumns && numerical_rank(h_) < h_.cols() &&
        spark(h_) <= s_) {
        throw std::invalid_argument("SlmProblem: spark(H) must exceed S");
    }
}

SlmProblem SlmProblem::ssnm(Index n, double sigma2, int sparsity) {
    return {Matrix::Identity(n, n), sigma2, sparsity};
}

void SlmProblem::check_param(const Vector& x) const { check_sparse(x, dim(), s_, false, "SLM"); }

Vector slm_sample(const SlmProblem& p, const Vector& x, RandomStream& rng) {
    require_length(x, p.dim(), "slm_sample");
    Vector y = rng.normal_vector(p.rows()) * p.sigma();
    if (p.is_identity())
        y += x;
    else
        y += p.H() * x;
    return y;
}

double slm_logpdf(const SlmProblem& p, const Vector& y, const Vector& x) {
    require_length(y, p.rows(), "slm_logpdf");
    require_length(x, p.dim(), "slm_logpdf");
    const double m = static_cast<double>(p.rows());
    return -0.5 * m * std::log(2.0 * std::numbers::pi * p.sigma2()) -
           (y - p.H() * x).squaredNorm() / (2.0 * p.sigma2());
}

double slm_kernel(const SlmProblem& p, const Vector& x0, const Vector& x1, const Vector& x2) {
    for (const Vector* v : {&x0, &x1, &x2}) require_length(*v, p.dim(), "slm_kernel");
    const Vector d1 = p.H() * (x1 - x0);
    const Vector d2 = p.H() * (x2 - x0);
    return std::exp(d1.dot(d2) / p.sigma2());
}

// ---- SDPCM / SPCM ------------------------------------------------------------

SdpcmProblem::SdpcmProblem(std::vector<Matrix> groups, double sigma2, int sparsity)
    : groups_(std::move(groups)), sigma2_(sigma2), s_(sparsity), m_(0) {
    check_noise(sigma2_, "SdpcmProblem");
    if (groups_.empty()) throw std::invalid_argument("SdpcmProblem: no basis groups");
    m_ = groups_.front().rows();
    Index total = 0;
    for (const auto& u : groups_) {
        if (u.rows() != m_ || u.cols() < 1)
            throw std::invalid_argument("SdpcmProblem: every group needs M rows and rank >= 1");
        require_finite(u, "SdpcmProblem");
        total += u.cols();
    }
    if (total > m_) throw std::invalid_argument("SdpcmProblem: sum of ranks exceeds M");
    if (s_ < 1 || s_ > dim()) throw std::invalid_argument("SdpcmProblem: S must lie in [1, N]");
    Matrix cat(m_, total);
    Index at = 0;
    for (const auto& u : groups_) {
        cat.middleCols(at, u.cols()) = u;
        at += u.cols();
    }
    if ((cat.transpose() * cat - Matrix::Identity(total, total)).cwiseAbs().maxCoeff() > kOrthoTol)
        throw std::invalid_argument("SdpcmProblem: group columns are not jointly orthonormal");
}

SdpcmProblem SdpcmProblem::coordinate(const std::vector<int>& ranks, double sigma2, int sparsity) {
    Index m = 0;
    for (int r : ranks) {
        if (r < 1) throw std::invalid_argument("SdpcmProblem: ranks must be >= 1");
        m += r;
    }
    std::vector<Matrix> groups;
    std::vector<Index> first;
    Index row = 0;
    for (int r : ranks) {
        Matrix u = Matrix::Zero(m, r);
        u.block(row, 0, r, r).setIdentity();
        groups.push_back(std::move(u));
        first.push_back(row);
        row += r;
    }
    SdpcmProblem p(std::move(groups), sigma2, sparsity);
    p.coordinate_ = true;
    p.first_row_ = std::move(first);
    return p;
}

std::vector<int> SdpcmProblem::ranks() const {
    std::vector<int> r;
    for (const auto& u : groups_) r.push_back(static_cast<int>(u.cols()));
    return r;
}

void SdpcmProblem::check_param(const Vector& x) const { check_sparse(x, dim(), s_, true, "SDPCM"); }

SpcmProblem::SpcmProblem(std::vector<Matrix> basis, double sigma2, int sparsity)
    : basis_(std::move(basis)), sigma2_(sigma2), s_(sparsity), m_(0) {
    check_noise(sigma2_, "SpcmProblem");
    if (basis_.empty()) throw std::invalid_argument("SpcmProblem: no basis matrices");
    m_ = basis_.front().rows();
    for (const auto& c : basis_) {
        if (c.rows() != m_ || c.cols() != m_)
            throw std::invalid_argument("SpcmProblem: basis matrices must be M x M");
        Matrix h = psd_factor(c);  // validates symmetry and semidefiniteness
        if (h.cols() == 0) throw std::invalid_argument("SpcmProblem: zero basis matrix");
        factors_.push_back(std::move(h));
    }
    if (s_ < 1 || s_ > dim()) throw std::invalid_argument("SpcmProblem: S must lie in [1, N]");
}

void SpcmProblem::check_param(const Vector& x) const { check_sparse(x, dim(), s_, true, "SPCM"); }

SpcmProblem to_spcm(const SdpcmProblem& p) {
    std::vector<Matrix> basis;
    for (const auto& u : p.groups()) basis.push_back(u * u.transpose());
    return {std::move(basis), p.sigma2(), p.sparsity()};
}

Matrix sdpcm_cov(const SdpcmProblem& p, const Vector& x) {
    p.check_param(x);
    Matrix c = p.sigma2() * Matrix::Identity(p.rows(), p.rows());
    for (Index k = 0; k < p.dim(); ++k)
        if (x(k) != 0.0) c.noalias() += x(k) * p.group(k) * p.group(k).transpose();
    return c;
}

Matrix spcm_cov(const SpcmProblem& p, const Vector& x) {
    p.check_param(x);
    Matrix c = p.sigma2() * Matrix::Identity(p.rows(), p.rows());
    for (Index k = 0; k < p.dim(); ++k)
        if (x(k) != 0.0) c += x(k) * p.basis()[static_cast<std::size_t>(k)];
    return c;
}

Vector sdpcm_sample(const SdpcmProblem& p, const Vector& x, RandomStream& rng) {
    require_length(x, p.dim(), "sdpcm_sample");
    const double sigma = std::sqrt(p.sigma2());
    Vector y = rng.normal_vector(p.rows());
    if (p.coordinate_) {
        y *= sigma;
        for (Index k = 0; k < p.dim(); ++k)
            if (x(k) != 0.0)
                y.segment(p.first_row_[static_cast<std::size_t>(k)], p.rank(k)) *=
                    std::sqrt(x(k) + p.sigma2()) / sigma;
        return y;
    }
    Vector out = sigma * y;
    for (Index k = 0; k < p.dim(); ++k) {
        if (x(k) == 0.0) continue;
        const Matrix& u = p.group(k);
        out.noalias() += u * ((std::sqrt(x(k) + p.sigma2()) - sigma) * (u.transpose() * y));
    }
    return out;
}

Vector spcm_sample(const SpcmProblem& p, const Vector& x, RandomStream& rng) {
    Eigen::LLT<Matrix> llt(spcm_cov(p, x));
    if (llt.info() != Eigen::Success) throw NumericalConsistencyError("spcm_sample: Cholesky failed");
    return llt.matrixL() * rng.normal_vector(p.rows());
}

Vector beta_energies(const SdpcmProblem& p, const Vector& y) {
    require_length(y, p.rows(), "beta_energies");
    Vector beta(p.dim());
    for (Index k = 0; k < p.dim(); ++k) {
        const double r = p.rank(k);
        if (p.coordinate_)
            beta(k) = y.segment(p.first_row_[static_cast<std::size_t>(k)], p.rank(k)).squaredNorm() / r;
        else
            beta(k) = (p.group(k).transpose() * y).squaredNorm() / r;
    }
    return beta;
}

double sdpcm_kernel(const SdpcmProblem& p, const Vector& x0, const Vector& x1, const Vector& x2) {
    for (const Vector* v : {&x0, &x1, &x2}) require_length(*v, p.dim(), "sdpcm_kernel");
    double log_r = 0.0;
    for (Index k = 0; k < p.dim(); ++k) {
        const double a0 = x0(k) + p.sigma2();
        const double base = a0 * a0 - (x1(k) - x0(k)) * (x2(k) - x0(k));
        if (!(a0 > 0.0) || !(base > 0.0)) throw std::domain_error("outside restricted domain");
        log_r += p.rank(k) * (std::log(a0) - 0.5 * std::log(base));
    }
    return std::exp(log_r);
}

double spcm_kernel(const SpcmProblem& p, const Vector& x0, const Vector& x1, const Vector& x2) {
    for (const Vector* v : {&x0, &x1, &x2}) require_length(*v, p.dim(), "spcm_kernel");
    auto cov = [&](const Vector& x) {
        Matrix c = p.sigma2() * Matrix::Identity(p.rows(), p.rows());
        for (Index k = 0; k < p.dim(); ++k)
            if (x(k) != 0.0) c += x(k) * p.basis()[static_cast<std::size_t>(k)];
        return c;
    };
    const Matrix c0 = cov(x0), c1 = cov(x1), c2 = cov(x2);
    // det(C1 + C2 - C1 C0^-1 C2) = det C1 det C2 det(C1^-1 + C2^-1 - C0^-1)
    Matrix middle = spd_inverse(c1) + spd_inverse(c2) - spd_inverse(c0);
    middle = 0.5 * (middle + middle.transpose());
    if (!positive_definite(middle)) throw std::domain_error("outside restricted domain");
    const double log_r =
        0.5 * (spd_logdet(c0) - spd_logdet(c1) - spd_logdet(c2) - spd_logdet(middle));
    return std::exp(log_r);
}

bool restriction_holds(const SpcmProblem& p, const Vector& x0, const Vector& x) {
    const Matrix d = 2.0 * spd_inverse(spcm_cov(p, x)) - spd_inverse(spcm_cov(p, x0));
    return positive_definite(d);
}

bool restriction_holds(const SdpcmProblem& p, const Vector& x0, const Vector& x) {
    const Matrix d = 2.0 * spd_inverse(sdpcm_cov(p, x)) - spd_inverse(sdpcm_cov(p, x0));
    return positive_definite(d);
}

bool dzero_contains(const SdpcmProblem& p, const Vector& x0, const Vector& x) {
    require_length(x0, p.dim(), "dzero_contains");
    require_length(x, p.dim(), "dzero_contains");
    return ((x.array() - 2.0 * x0.array()) < p.sigma2()).all();
}

SimModel make_model(const SlmProblem& p) {
    auto shared = std::make_shared<const SlmProblem>(p);
    return {p.is_identity() ? "ssnm" : "slm", p.dim(), p.sparsity(), false,
            [shared](const Vector& x, RandomStream& rng) { return slm_sample(*shared, x, rng); }};
}

SimModel make_model(const SdpcmProblem& p) {
    auto shared = std::make_shared<const SdpcmProblem>(p);
    return {"sdpcm", p.dim(), p.sparsity(), true,
            [shared](const Vector& x, RandomStream& rng) { return sdpcm_sample(*shared, x, rng); }};
}

SimModel make_model(const SpcmProblem& p) {
    auto shared = std::make_shared<const SpcmProblem>(p);
    return {"spcm", p.dim(), p.sparsity(), true,
            [shared](const Vector& x, RandomStream& rng) { return spcm_sample(*shared, x, rng); }};
}

}  // namespace sparsemv
