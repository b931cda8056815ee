#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sparsemv/numkit.hpp"
#include "sparsemv/random_stream.hpp"

namespace sparsemv {

// ---- sparse parameter helpers ------------------------------------------------

using Support = std::vector<Index>;

// Indices of the nonzero entries (exact-zero test), ascending.
[[nodiscard]] Support support_of(const Vector& x);
[[nodiscard]] Index l0_norm(const Vector& x);

// Value and index of the S-largest entry in magnitude. Entries are ranked by
// decreasing |x_i|, ties toward the smaller index; when ||x||_0 < S the value is 0.
struct LargestEntry {
    double value = 0.0;
    Index index = 0;
};
[[nodiscard]] LargestEntry s_largest_entry(const Vector& x, int S);

// x restricted to the index set (other entries zeroed).
[[nodiscard]] Vector restrict_to(const Vector& x, const Support& keep);
[[nodiscard]] bool contains(const Support& set, Index k);
[[nodiscard]] Support with_index(Support set, Index k);
[[nodiscard]] Support without_index(Support set, Index k);

// ---- sparse linear model -----------------------------------------------------

class SlmProblem {
public:
    SlmProblem(Matrix h, double sigma2, int sparsity);
    // Sparse signal in noise: H = I_N.
    static SlmProblem ssnm(Index n, double sigma2, int sparsity);

    [[nodiscard]] const Matrix& H() const { return h_; }
    [[nodiscard]] double sigma2() const { return sigma2_; }
    [[nodiscard]] double sigma() const { return std::sqrt(sigma2_); }
    [[nodiscard]] int sparsity() const { return s_; }
    [[nodiscard]] Index rows() const { return h_.rows(); }
    [[nodiscard]] Index dim() const { return h_.cols(); }
    [[nodiscard]] bool is_identity() const { return identity_; }

    // Throws unless x has length N and at most S nonzeros.
    void check_param(const Vector& x) const;

private:
    Matrix h_;
    double sigma2_;
    int s_;
    bool identity_ = false;
};

[[nodiscard]] Vector slm_sample(const SlmProblem& p, const Vector& x, RandomStream& rng);
[[nodiscard]] double slm_logpdf(const SlmProblem& p, const Vector& y, const Vector& x);
[[nodiscard]] double slm_kernel(const SlmProblem& p, const Vector& x0, const Vector& x1,
                                const Vector& x2);

// ---- covariance models -------------------------------------------------------

class SdpcmProblem {
public:
    SdpcmProblem(std::vector<Matrix> groups, double sigma2, int sparsity);
    // Groups of consecutive unit vectors, M = sum of ranks; ranks all 1 gives C_k = e_k e_k^T.
    static SdpcmProblem coordinate(const std::vector<int>& ranks, double sigma2, int sparsity);

    [[nodiscard]] const std::vector<Matrix>& groups() const { return groups_; }
    [[nodiscard]] const Matrix& group(Index k) const { return groups_[static_cast<std::size_t>(k)]; }
    [[nodiscard]] int rank(Index k) const { return static_cast<int>(group(k).cols()); }
    [[nodiscard]] std::vector<int> ranks() const;
    [[nodiscard]] double sigma2() const { return sigma2_; }
    [[nodiscard]] int sparsity() const { return s_; }
    [[nodiscard]] Index rows() const { return m_; }
    [[nodiscard]] Index dim() const { return static_cast<Index>(groups_.size()); }

    void check_param(const Vector& x) const;

private:
    std::vector<Matrix> groups_;
    double sigma2_;
    int s_;
    Index m_;
    bool coordinate_ = false;
    std::vector<Index> first_row_;  // coordinate layout only

    friend Vector beta_energies(const SdpcmProblem&, const Vector&);
    friend Vector sdpcm_sample(const SdpcmProblem&, const Vector&, RandomStream&);
};

class SpcmProblem {
public:
    SpcmProblem(std::vector<Matrix> basis, double sigma2, int sparsity);

    [[nodiscard]] const std::vector<Matrix>& basis() const { return basis_; }
    [[nodiscard]] const Matrix& factor(Index k) const { return factors_[static_cast<std::size_t>(k)]; }
    [[nodiscard]] int rank(Index k) const { return static_cast<int>(factor(k).cols()); }
    [[nodiscard]] double sigma2() const { return sigma2_; }
    [[nodiscard]] int sparsity() const { return s_; }
    [[nodiscard]] Index rows() const { return m_; }
    [[nodiscard]] Index dim() const { return static_cast<Index>(basis_.size()); }

    void check_param(const Vector& x) const;

private:
    std::vector<Matrix> basis_;
    std::vector<Matrix> factors_;
    double sigma2_;
    int s_;
    Index m_;
};

[[nodiscard]] SpcmProblem to_spcm(const SdpcmProblem& p);

[[nodiscard]] Matrix sdpcm_cov(const SdpcmProblem& p, const Vector& x);
[[nodiscard]] Matrix spcm_cov(const SpcmProblem& p, const Vector& x);

[[nodiscard]] Vector sdpcm_sample(const SdpcmProblem& p, const Vector& x, RandomStream& rng);
[[nodiscard]] Vector spcm_sample(const SpcmProblem& p, const Vector& x, RandomStream& rng);

// beta_k(y) = |U_k^T y|^2 / r_k
[[nodiscard]] Vector beta_energies(const SdpcmProblem& p, const Vector& y);

[[nodiscard]] double sdpcm_kernel(const SdpcmProblem& p, const Vector& x0, const Vector& x1,
                                  const Vector& x2);
[[nodiscard]] double spcm_kernel(const SpcmProblem& p, const Vector& x0, const Vector& x1,
                                 const Vector& x2);

// min eig(2 C^-1(x) - C^-1(x0)) > 0
[[nodiscard]] bool restriction_holds(const SpcmProblem& p, const Vector& x0, const Vector& x);
[[nodiscard]] bool restriction_holds(const SdpcmProblem& p, const Vector& x0, const Vector& x);
// x_i < 2 x0_i + sigma^2 for all i
[[nodiscard]] bool dzero_contains(const SdpcmProblem& p, const Vector& x0, const Vector& x);

// ---- type-erased sampler used by the Monte Carlo layer -----------------------

struct SimModel {
    std::string family;
    Index dim = 0;
    int sparsity = 0;
    bool nonnegative = false;
    std::function<Vector(const Vector& x, RandomStream& rng)> sample;
};

[[nodiscard]] SimModel make_model(const SlmProblem& p);
[[nodiscard]] SimModel make_model(const SdpcmProblem& p);
[[nodiscard]] SimModel make_model(const SpcmProblem& p);

}  // namespace sparsemv
