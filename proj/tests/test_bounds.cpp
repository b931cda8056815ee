#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "sparsemv/bounds.hpp"
#include "test_support.hpp"

using namespace sparsemv;
using testsupport::gaussian_matrix;
using testsupport::ht_mean;
using testsupport::ht_var;
using testsupport::normal_cdf;
using testsupport::normal_pdf;
using testsupport::orthonormal_columns;
using testsupport::random_sparse;
using testsupport::sample_moments;
using testsupport::uniform;
using testsupport::vec;

namespace {

Matrix submatrix_cols(const Matrix& h, const Support& K) {
    Matrix out(h.rows(), static_cast<Index>(K.size()));
    for (std::size_t j = 0; j < K.size(); ++j) out.col(static_cast<Index>(j)) = h.col(K[j]);
    return out;
}

}  // namespace

TEST_CASE("projection bound") {
    SUBCASE("normalization functional alone gives zero") {
        const auto r = projection_bound(vec({1.7}), Matrix::Identity(1, 1), 1.7);
        CHECK(r.value == doctest::Approx(0.0));
    }
    SUBCASE("diagonal Gram") {
        const Vector c = vec({1.0, 2.0, -0.5});
        const Vector g = vec({2.0, 4.0, 0.25});
        const double oracle = 1.0 / 2.0 + 4.0 / 4.0 + 0.25 / 0.25 - 0.3 * 0.3;
        CHECK(projection_bound(c, g.asDiagonal().toDenseMatrix(), 0.3).value == doctest::Approx(oracle));
    }
    SUBCASE("nested blocks never decrease the value") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const Matrix a = gaussian_matrix(8, 6, seed);
            const Matrix gram = a.transpose() * a;
            const Vector c = gaussian_matrix(6, 1, seed + 100).col(0);
            double prev = -1.0;
            for (Index n = 1; n <= 6; ++n) {
                const double v = projection_bound(c.head(n), gram.topLeftCorner(n, n), 0.0).value;
                CHECK(v >= prev - 1e-10);
                prev = v;
            }
        }
    }
    SUBCASE("asymmetric Gram is rejected") {
        Matrix g{{1.0, 0.5}, {0.0, 1.0}};
        CHECK_THROWS(projection_bound(vec({1.0, 1.0}), g, 0.0));
    }
    SUBCASE("tiny negatives are floored, large ones rejected") {
        const auto r = projection_bound(vec({1.0}), Matrix::Identity(1, 1), 1.0 + 1e-12);
        CHECK(r.value == 0.0);
        CHECK(r.floored);
        CHECK_THROWS_AS((void)projection_bound(vec({1.0}), Matrix::Identity(1, 1), 1.1), std::domain_error);
    }
}

TEST_CASE("CRB for the sparse linear model") {
    SUBCASE("unbiased, H = I, ||x0||_0 < S") {
        const auto p = SlmProblem::ssnm(5, 0.7, 2);
        const Vector x0 = vec({0.0, 1.5, 0.0, 0.0, 0.0});
        for (Index k = 0; k < 5; ++k)
            CHECK(crb_slm(p, x0, MeanModel::unbiased(k, x0)).value == doctest::Approx(0.7));
    }
    SUBCASE("two-dimensional example: 0 for a > 0, sigma^2 at a = 0") {
        const auto p = SlmProblem::ssnm(2, 1.0, 1);
        for (double a : {0.01, 0.5, 3.0}) {
            const Vector x0 = vec({a, 0.0});
            CHECK(crb_slm(p, x0, MeanModel::unbiased(1, x0)).value == doctest::Approx(0.0));
        }
        const Vector zero = Vector::Zero(2);
        CHECK(crb_slm(p, zero, MeanModel::unbiased(1, zero)).value == doctest::Approx(1.0));
    }
    SUBCASE("general H matches sigma^2 [(H^T H)^-1]_kk") {
        const Matrix h = gaussian_matrix(8, 5, 3);
        const SlmProblem p(h, 0.4, 3);
        const Vector x0 = vec({0.0, 1.0, 0.0, -2.0, 0.0});
        const Matrix inv = (h.transpose() * h).inverse();
        for (Index k = 0; k < 5; ++k)
            CHECK(crb_slm(p, x0, MeanModel::unbiased(k, x0)).value == doctest::Approx(0.4 * inv(k, k)).epsilon(1e-10));
        // ||x0||_0 = S: restricted to the support
        const Vector full = vec({0.5, 1.0, 0.0, -2.0, 0.0});
        const Support supp{0, 1, 3};
        const Matrix hs = submatrix_cols(h, supp);
        const Matrix invs = (hs.transpose() * hs).inverse();
        CHECK(crb_slm(p, full, MeanModel::unbiased(1, full)).value == doctest::Approx(0.4 * invs(1, 1)).epsilon(1e-10));
        CHECK(crb_slm(p, full, MeanModel::unbiased(2, full)).value == doctest::Approx(0.0));
    }
    SUBCASE("mean data at the wrong point is rejected") {
        const auto p = SlmProblem::ssnm(2, 1.0, 1);
        const Vector x0 = vec({1.0, 0.0});
        CHECK_THROWS(crb_slm(p, x0, MeanModel::unbiased(1, x0, Vector::Zero(2))));
    }
}

TEST_CASE("HCRB for the SSNM") {
    SUBCASE("case 1 gives sigma^2") {
        const auto p = SlmProblem::ssnm(6, 1.3, 2);
        CHECK(hcrb_ssnm(p, vec({1.0, 0.0, 0.0, 0.0, 0.0, 0.0}), 4).value == doctest::Approx(1.3));
        CHECK(hcrb_ssnm(p, vec({1.0, 2.0, 0.0, 0.0, 0.0, 0.0}), 1).value == doctest::Approx(1.3));
    }
    SUBCASE("case 2 with vanishing xi0: (N-S-1)/(N-S)") {
        const auto p = SlmProblem::ssnm(50, 1.0, 5);
        Vector x0 = Vector::Zero(50);
        for (Index i = 0; i < 4; ++i) x0(i) = 2.0;
        x0(4) = 1e-9;
        CHECK(hcrb_ssnm(p, x0, 10).value == doctest::Approx(44.0 / 45.0).epsilon(1e-12));
    }
    SUBCASE("decreases monotonically to zero in xi0") {
        const auto p = SlmProblem::ssnm(4, 1.0, 1);
        double prev = 1.0;
        for (double xi = 0.1; xi < 10.0; xi += 0.3) {
            const double v = hcrb_ssnm(p, vec({0.0, xi, 0.0, 0.0}), 0).value;
            CHECK(v < prev);
            prev = v;
        }
        CHECK(prev < 1e-30);
    }
    SUBCASE("H != I is rejected") {
        const SlmProblem p(gaussian_matrix(4, 3, 1), 1.0, 1);
        CHECK_THROWS_AS((void)hcrb_ssnm(p, Vector::Zero(3), 0), std::invalid_argument);
    }
}

TEST_CASE("RKHS bounds a and b") {
    const Matrix h = gaussian_matrix(10, 6, 7);
    const SlmProblem p(h, 0.5, 3);

    SUBCASE("x0 = 0: Gram term only") {
        const Vector x0 = Vector::Zero(6);
        const Support K{1, 2, 4};
        const Matrix hk = submatrix_cols(h, K);
        const Matrix inv = (hk.transpose() * hk).inverse();
        const auto mean = MeanModel::unbiased(2, x0, tilde_x0(p, x0, K));
        const double a = rkhs_bound_a(p, x0, K, mean).value;
        const double b = rkhs_bound_b(p, x0, K, mean).value;
        CHECK(a == doctest::Approx(0.5 * inv(1, 1)).epsilon(1e-10));
        CHECK(b == doctest::Approx(a).epsilon(1e-12));
    }
    SUBCASE("K = supp(x0): no exponential attenuation") {
        const Vector x0 = vec({0.0, 1.2, 0.0, 0.0, -0.8, 0.0});
        const Support K{1, 4};
        const Vector xt = tilde_x0(p, x0, K);
        CHECK((xt - x0).norm() < 1e-12);
        const auto r = rkhs_bound_b(p, x0, K, MeanModel::unbiased(1, x0, xt));
        CHECK(r.params["residual_sq"].get<double>() < 1e-20);
        const Matrix hk = submatrix_cols(h, K);
        CHECK(r.value == doctest::Approx(0.5 * (hk.transpose() * hk).inverse()(0, 0)).epsilon(1e-10));
    }
    SUBCASE("projected point solves H x = P_K H x0") {
        const Vector x0 = vec({0.3, 1.2, 0.0, 0.0, -0.8, 0.0});
        const Support K{0, 2};
        const Vector xt = tilde_x0(p, x0, K);
        const Matrix hk = submatrix_cols(h, K);
        const Matrix proj = hk * (hk.transpose() * hk).inverse() * hk.transpose();
        CHECK((h * xt - proj * h * x0).norm() < 1e-10);
        CHECK(xt(1) == 0.0);
        CHECK(xt(4) == 0.0);
    }
    SUBCASE("wrong anchor is rejected") {
        const Vector x0 = vec({0.3, 1.2, 0.0, 0.0, -0.8, 0.0});
        CHECK_THROWS(rkhs_bound_a(p, x0, Support{0, 2}, MeanModel::unbiased(0, x0)));
    }
    SUBCASE("SSNM form: exp(-|x0 outside K|^2 / sigma^2) sigma^2 r^T r") {
        const auto q = SlmProblem::ssnm(6, 0.8, 3);
        RandomStream rng(5, 0);
        for (int trial = 0; trial < 50; ++trial) {
            const Vector x0 = random_sparse(rng, 6, 3, 0.1, 2.0);
            const Index k = static_cast<Index>(rng() % 6);
            const Support K = default_index_set(x0, k, 3, IndexSetRule::swap_smallest);
            const Vector xt = tilde_x0(q, x0, K);
            double outside = 0.0;
            for (Index i = 0; i < 6; ++i)
                if (!contains(K, i)) outside += x0(i) * x0(i);
            const double oracle = std::exp(-outside / 0.8) * 0.8;  // r = e_k restricted to K, k in K
            CHECK(rkhs_bound_b(q, x0, K, MeanModel::unbiased(k, x0, xt)).value == doctest::Approx(oracle).epsilon(1e-12));
        }
    }
    SUBCASE("bound a dominates the HCRB on the SSNM") {
        const auto q = SlmProblem::ssnm(8, 1.0, 3);
        RandomStream rng(11, 0);
        for (int trial = 0; trial < 200; ++trial) {
            const Vector x0 = random_sparse(rng, 8, 1 + static_cast<int>(rng() % 3), 0.05, 3.0);
            const Index k = static_cast<Index>(rng() % 8);
            const Support K = default_index_set(x0, k, 3, IndexSetRule::swap_smallest);
            const auto mean = MeanModel::unbiased(k, x0, tilde_x0(q, x0, K));
            CHECK(rkhs_bound_a(q, x0, K, mean).value >= hcrb_ssnm(q, x0, k).value - 1e-9);
        }
    }
    SUBCASE("bound b minus bound a equals gamma(x0)^2 - exp(-res) gamma(tilde x0)^2") {
        const Matrix hq = orthonormal_columns(12, 6, 21) + 0.05 * gaussian_matrix(12, 6, 22);
        const SlmProblem q(hq, 0.6, 2);
        RandomStream rng(3, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x0 = random_sparse(rng, 6, 2, 0.1, 2.0);
            const Index k = static_cast<Index>(rng() % 6);
            const Support K = default_index_set(x0, k, 2, IndexSetRule::swap_smallest);
            const Vector xt = tilde_x0(q, x0, K);
            const auto mean = MeanModel::unbiased(k, x0, xt);
            const auto a = rkhs_bound_a(q, x0, K, mean);
            const double res = a.params["residual_sq"].get<double>();
            const double diff = x0(k) * x0(k) - std::exp(-res / 0.6) * xt(k) * xt(k);
            CHECK(rkhs_bound_b(q, x0, K, mean).value - a.value == doctest::Approx(diff).epsilon(1e-9));
        }
    }
    SUBCASE("bound b dominates bound a for unbiased estimation with orthonormal H_K") {
        const SlmProblem q(orthonormal_columns(12, 6, 23), 0.6, 2);
        RandomStream rng(4, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x0 = random_sparse(rng, 6, 2, 0.1, 2.0);
            const Index k = static_cast<Index>(rng() % 6);
            const Support K = default_index_set(x0, k, 2, IndexSetRule::swap_smallest);
            const auto mean = MeanModel::unbiased(k, x0, tilde_x0(q, x0, K));
            CHECK(rkhs_bound_b(q, x0, K, mean).value >= rkhs_bound_a(q, x0, K, mean).value - 1e-9);
        }
    }
}

TEST_CASE("RIP-based bound for compressed sensing") {
    SUBCASE("delta = 0 and orthonormal columns: equals bound b") {
        const SlmProblem p(orthonormal_columns(9, 6, 4), 0.9, 2);
        RandomStream rng(8, 0);
        for (int trial = 0; trial < 30; ++trial) {
            const Vector x0 = random_sparse(rng, 6, 2, 0.1, 2.0);
            const Index k = static_cast<Index>(rng() % 6);
            const Support K = default_index_set(x0, k, 2, IndexSetRule::singleton);
            const auto mean = MeanModel::unbiased(k, x0, tilde_x0(p, x0, K));
            CHECK(rip_bound_cs(p, x0, K, mean, 0.0).value ==
                  doctest::Approx(rkhs_bound_b(p, x0, K, mean).value).epsilon(1e-10));
        }
    }
    SUBCASE("K containing the support: no attenuation") {
        const SlmProblem p(gaussian_matrix(9, 6, 4), 0.9, 3);
        const Vector x0 = vec({0.0, 1.0, 0.0, 2.0, 0.0, 0.0});
        const Support K{1, 3, 5};
        const auto mean = MeanModel::unbiased(5, x0, tilde_x0(p, x0, K));
        const auto a = rip_bound_cs(p, x0, K, mean, 0.3).value;
        const Matrix hk = submatrix_cols(p.H(), K);
        CHECK(a == doctest::Approx(0.9 * (hk.transpose() * hk).inverse()(2, 2)).epsilon(1e-10));
    }
    SUBCASE("never above bound b when the RIP constant is exact") {
        Matrix h = orthonormal_columns(20, 8, 12) + 0.1 * gaussian_matrix(20, 8, 13);
        h.colwise().normalize();
        const SlmProblem p(h, 0.5, 2);
        const double delta = rip_constant(h, 2).delta;
        REQUIRE(delta < 1.0);
        RandomStream rng(9, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x0 = random_sparse(rng, 8, 2, 0.1, 2.0);
            const Index k = static_cast<Index>(rng() % 8);
            for (auto rule : {IndexSetRule::singleton, IndexSetRule::swap_smallest}) {
                const Support K = default_index_set(x0, k, 2, rule);
                const auto mean = MeanModel::unbiased(k, x0, tilde_x0(p, x0, K));
                CHECK(rip_bound_cs(p, x0, K, mean, delta).value <= rkhs_bound_b(p, x0, K, mean).value + 1e-12);
            }
        }
    }
    SUBCASE("delta >= 1 is rejected") {
        const auto p = SlmProblem::ssnm(3, 1.0, 1);
        const Vector x0 = Vector::Zero(3);
        CHECK_THROWS(rip_bound_cs(p, x0, Support{0}, MeanModel::unbiased(0, x0), 1.0));
    }
}

TEST_CASE("index set conventions") {
    const Vector x0 = vec({0.0, 3.0, 0.0, -1.0, 2.0});
    CHECK(default_index_set(x0, 1, 3, IndexSetRule::singleton) == Support{1, 3, 4});
    CHECK(default_index_set(x0, 0, 3, IndexSetRule::singleton) == Support{0});
    CHECK(default_index_set(x0, 0, 3, IndexSetRule::swap_smallest) == Support{0, 1, 4});
    CHECK(default_index_set(x0, 0, 4, IndexSetRule::swap_smallest) == Support{0, 1, 3, 4});
    CHECK(parse_index_set_rule(index_set_rule_name(IndexSetRule::swap_smallest)) == IndexSetRule::swap_smallest);
    CHECK_THROWS(parse_index_set_rule("nearest"));
}

TEST_CASE("SSNM Barankin bound from Hermite coefficients") {
    const double s2 = 0.8, sigma = std::sqrt(s2);
    SUBCASE("unbiased, case 1") {
        const Vector x0 = vec({1.5, 0.0, 0.0});
        for (Index k : {Index{0}, Index{1}}) {
            const HermiteSeries unbiased{{x0(k), 1.0}, sigma, x0(k)};
            CHECK(ssnm_barankin(unbiased, x0, k, 2).value == doctest::Approx(s2));
        }
    }
    SUBCASE("unbiased, case 2 with S = 1") {
        for (double a : {0.3, 1.0, 2.5}) {
            const Vector x0 = vec({a, 0.0});
            const HermiteSeries unbiased{{0.0, 1.0}, sigma, 0.0};
            CHECK(ssnm_barankin(unbiased, x0, 1, 1).value == doctest::Approx(s2 * std::exp(-a * a / s2)));
        }
    }
    SUBCASE("high SNR: sum over components tends to S sigma^2") {
        const Vector x0 = vec({40.0, -35.0, 0.0, 0.0, 0.0});
        std::vector<BoundReport> parts;
        for (Index k = 0; k < 5; ++k)
            parts.push_back(ssnm_barankin(HermiteSeries{{x0(k), 1.0}, sigma, x0(k)}, x0, k, 2));
        CHECK(sum_components(parts).value == doctest::Approx(2.0 * s2).epsilon(1e-12));
    }
    SUBCASE("divergent series is rejected") {
        HermiteSeries bad{{}, 1.0, 0.0};
        for (int l = 0; l <= 30; ++l) bad.m.push_back(std::pow(3.0, l) * std::sqrt(factorial(l)));
        CHECK_THROWS(ssnm_barankin(bad, Vector::Zero(2), 0, 1));
    }
    SUBCASE("series must be centred at x0_k") {
        CHECK_THROWS(ssnm_barankin(HermiteSeries{{0.0, 1.0}, sigma, 0.0}, vec({1.0, 0.0}), 0, 1));
    }
    SUBCASE("transformed observation delegates unchanged") {
        const Vector x0 = vec({0.7, 0.0, 0.0});
        const HermiteSeries s{{0.0, 1.0}, sigma, 0.0};
        const auto direct = ssnm_barankin(s, x0, 2, 1);
        const auto tr = ssnm_bound_for_transformed(gaussian_matrix(2, 3, 1), s, x0, 2, 1);
        CHECK(tr.value == doctest::Approx(direct.value));
        CHECK_THROWS(ssnm_bound_for_transformed(gaussian_matrix(2, 4, 1), s, x0, 2, 1));
    }
}

TEST_CASE("SSNM Barankin bound from the base estimator variance") {
    SUBCASE("case 1: the base variance is returned") {
        const auto r = ssnm_barankin_from_estimator(0.37, 0.2, vec({0.4, 0.0}), 0, 1, 1.0);
        CHECK(r.value == doctest::Approx(0.37));
    }
    SUBCASE("agrees with the Hermite series for LS and small-threshold HT") {
        for (double a : {0.5, 1.0, 2.0}) {
            const Vector x0 = vec({a, 0.0});
            for (double T : {0.0, 0.01}) {
                const auto base = T == 0.0 ? DiagonalEstimator::ls() : DiagonalEstimator::ht(T);
                const HermiteSeries s = truncate_series(hermite_coeffs_of_diagonal(base, 0.0, 1.0, 60));
                const double v = T == 0.0 ? 1.0 : ht_var(0.0, T);
                const double from_series = ssnm_barankin(s, x0, 1, 1).value;
                const double from_var = ssnm_barankin_from_estimator(v, 0.0, x0, 1, 1, 1.0).value;
                CHECK(std::abs(from_series - from_var) < 1e-6);
            }
        }
    }
    SUBCASE("nonnegative for HT across anchors and thresholds") {
        RandomStream rng(2, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x0 = random_sparse(rng, 4, 2, 0.05, 4.0);
            const double T = uniform(rng, 0.1, 4.0);
            for (Index k = 0; k < 4; ++k) {
                const double v = ht_var(x0(k), T);
                const double g = ht_mean(x0(k), T);
                CHECK(ssnm_barankin_from_estimator(v, g, x0, k, 2, 1.0).value >= 0.0);
            }
        }
    }
    SUBCASE("achieved by the LMV estimator built from LS") {
        const auto p = SlmProblem::ssnm(2, 1.0, 1);
        const Vector x0 = vec({0.8, 0.0});
        const auto m = sample_moments(40000, 17, [&](RandomStream& rng) {
            return lmv_from_diagonal(DiagonalEstimator::ls(), slm_sample(p, x0, rng), x0, 1, 1, 1.0);
        });
        const double bound = ssnm_barankin_from_estimator(1.0, 0.0, x0, 1, 1, 1.0).value;
        CHECK(bound == doctest::Approx(std::exp(-0.64)));
        CHECK(std::abs(m.var - bound) < 4.0 * m.se_var);
        CHECK(std::abs(m.mean) < 4.0 * m.se_mean);
    }
    SUBCASE("achieved by the LMV estimator built from HT") {
        const auto p = SlmProblem::ssnm(3, 1.0, 2);
        const Vector x0 = vec({1.1, -0.6, 0.0});
        const double T = 0.8;
        const auto m = sample_moments(40000, 23, [&](RandomStream& rng) {
            return lmv_from_diagonal(DiagonalEstimator::ht(T), slm_sample(p, x0, rng), x0, 2, 2, 1.0);
        });
        const double bound = ssnm_barankin_from_estimator(ht_var(0.0, T), 0.0, x0, 2, 2, 1.0).value;
        CHECK(std::abs(m.var - bound) < 4.0 * m.se_var);
    }
}

TEST_CASE("truncated coefficient-sequence evaluation") {
    SUBCASE("constant mean at x0 = 0 gives 0") {
        const auto r = ssnm_barankin_numeric([](const Vector&) { return 2.5; }, Vector::Zero(3), 2, 1.0, 4);
        CHECK(std::abs(r.value) < 1e-10);
    }
    SUBCASE("unbiased at x0 = 0 gives sigma^2") {
        const double s = 0.9;
        const auto r = ssnm_barankin_numeric([](const Vector& x) { return x(1); }, Vector::Zero(2), 1, s, 6);
        CHECK(r.value == doctest::Approx(s * s).epsilon(1e-4));
    }
    SUBCASE("HT mean matches the variance formula") {
        const double T = 0.1;
        const auto mean = [T](const Vector& x) { return ht_mean(x(1), T); };
        for (const Vector& x0 : {vec({0.0, 0.0}), vec({0.0, 0.5}), vec({1.0, 0.0})}) {
            const auto r = ssnm_barankin_numeric(mean, x0, 1, 1.0, 6);
            const double oracle = ssnm_barankin_from_estimator(ht_var(x0(1), T), ht_mean(x0(1), T), x0, 1, 1, 1.0).value;
            CHECK(std::abs(r.value - oracle) < 1e-3);
            CHECK(r.value <= oracle + 1e-9);
        }
    }
    SUBCASE("non-odd mean: the corollary formula is below the exact value by (1-t) m0^2") {
        const double c = 0.3, a = 0.5;
        const Vector x0 = vec({a, 0.0});
        const auto exact = ssnm_barankin_numeric([c](const Vector& x) { return c + x(1); }, x0, 1, 1.0, 6).value;
        const double t = std::exp(-a * a);
        CHECK(exact == doctest::Approx(t).epsilon(1e-8));
        const auto corollary = ssnm_barankin(HermiteSeries{{c, 1.0}, 1.0, 0.0}, x0, 1, 1).value;
        CHECK(exact - corollary == doctest::Approx((1.0 - t) * c * c).epsilon(1e-6));
    }
    SUBCASE("budget is enforced") {
        const auto f = [](const Vector& x) { return x(0); };
        CHECK_THROWS(ssnm_barankin_numeric(f, Vector::Zero(4), 1, 1.0, 4));
        CHECK_THROWS(ssnm_barankin_numeric(f, Vector::Zero(3), 3, 1.0, 4));
        CHECK_THROWS(ssnm_barankin_numeric(f, Vector::Zero(3), 2, 1.0, 7));
    }
}

TEST_CASE("test-point bound") {
    const double s2 = 0.7;
    const auto p = SlmProblem::ssnm(6, s2, 2);
    SUBCASE("single test point along e_k") {
        const Vector x0 = vec({1.0, 0.0, 0.0, 0.0, 0.0, 0.0});
        const KernelFn kern = [&](const Vector& a, const Vector& b) { return slm_kernel(p, x0, a, b); };
        for (double t : {1.0, 0.3, 1e-3}) {
            Vector x1 = x0;
            x1(2) += t;
            const auto r = generic_hcrb(kern, x0, {x1}, [](const Vector& x) { return x(2); });
            CHECK(r.value == doctest::Approx(t * t / std::expm1(t * t / s2)).epsilon(1e-10));
        }
    }
    SUBCASE("test point equal to x0 gives 0") {
        const Vector x0 = vec({1.0, 0.0, 0.0, 0.0, 0.0, 0.0});
        const KernelFn kern = [&](const Vector& a, const Vector& b) { return slm_kernel(p, x0, a, b); };
        CHECK(generic_hcrb(kern, x0, {x0}, [](const Vector& x) { return x(0); }).value == 0.0);
    }
    SUBCASE("shifted test-point family reproduces the two-case HCRB") {
        const Vector x0 = vec({1.0, 0.7, 0.0, 0.0, 0.0, 0.0});
        const KernelFn kern = [&](const Vector& a, const Vector& b) { return slm_kernel(p, x0, a, b); };
        const double t = 0.01;
        std::vector<Vector> points;
        for (Index l = 0; l < 6; ++l) {
            Vector x = x0;
            if (x0(l) == 0.0) x(1) = 0.0;  // drop the S-largest entry for l outside the support
            x(l) += t;
            points.push_back(x);
        }
        const auto r = generic_hcrb(kern, x0, points, [](const Vector& x) { return x(2); });
        CHECK(r.value == doctest::Approx(hcrb_ssnm(p, x0, 2).value).epsilon(1e-3));
    }
    SUBCASE("too many test points") {
        CHECK_THROWS(generic_hcrb(Matrix::Identity(18, 18), Vector::Zero(17), 0.0));
    }
}

TEST_CASE("Bhattacharyya bound") {
    const Matrix h = gaussian_matrix(6, 4, 31);
    const SlmProblem p(h, 0.6, 3);
    const Vector x0 = vec({0.0, 0.8, 0.0, -0.4});
    const KernelFn kern = [&](const Vector& a, const Vector& b) { return slm_kernel(p, x0, a, b); };
    std::vector<MultiIndex> first{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    SUBCASE("first order equals the CRB") {
        for (Index k = 0; k < 4; ++k) {
            const Vector b = Vector::Unit(4, k);
            const double bh = generic_bhattacharyya(kern, x0, first, b).value;
            CHECK(bh == doctest::Approx(crb_slm(p, x0, MeanModel::unbiased(k, x0)).value).epsilon(1e-4));
        }
    }
    SUBCASE("empty index set gives 0") {
        CHECK(generic_bhattacharyya(kern, x0, {}, Vector()).value == 0.0);
    }
    SUBCASE("adding indices never decreases the value") {
        // mean gamma(x) = x_1 + 0.3 x_1^2 x_2: derivatives at x0
        const auto deriv = [&](const MultiIndex& q) {
            const double a = x0(0), b = x0(1);
            if (q == MultiIndex{1, 0, 0, 0}) return 1.0 + 0.6 * a * b;
            if (q == MultiIndex{0, 1, 0, 0}) return 0.3 * a * a;
            if (q == MultiIndex{2, 0, 0, 0}) return 0.6 * b;
            if (q == MultiIndex{1, 1, 0, 0}) return 0.6 * a;
            if (q == MultiIndex{2, 1, 0, 0}) return 0.6;
            return 0.0;
        };
        std::vector<MultiIndex> set = first;
        const std::vector<MultiIndex> extra{{2, 0, 0, 0}, {1, 1, 0, 0}, {2, 1, 0, 0}};
        double prev = -1.0;
        for (std::size_t n = 0; n <= extra.size(); ++n) {
            if (n > 0) set.push_back(extra[n - 1]);
            Vector b(static_cast<Index>(set.size()));
            for (std::size_t i = 0; i < set.size(); ++i) b(static_cast<Index>(i)) = deriv(set[i]);
            const double v = generic_bhattacharyya(kern, x0, set, b).value;
            CHECK(v >= prev - 1e-6 * std::max(1.0, prev));
            prev = v;
        }
    }
    SUBCASE("Gaussian kernel mixed partials match the closed form") {
        // d^p_1 d^q_2 exp((x1-x0)^T A (x2-x0)/s2) at x0 for A = H^T H.
        const Matrix a = h.transpose() * h / 0.6;
        const Matrix b = kernel_mixed_partials(kern, x0, {{1, 0, 0, 0}, {2, 0, 0, 0}, {1, 1, 0, 0}});
        CHECK(b(0, 0) == doctest::Approx(a(0, 0)).epsilon(1e-6));
        CHECK(b(1, 1) == doctest::Approx(2.0 * a(0, 0) * a(0, 0)).epsilon(1e-5));
        CHECK(b(2, 2) == doctest::Approx(a(0, 0) * a(1, 1) + a(0, 1) * a(0, 1)).epsilon(1e-5));
        CHECK(std::abs(b(0, 1)) < 1e-6);
    }
    SUBCASE("order above 4 is rejected") {
        CHECK_THROWS(generic_bhattacharyya(kern, x0, {{5, 0, 0, 0}}, vec({1.0})));
    }
}

TEST_CASE("Fisher-information bound for covariance models") {
    const double s2 = 0.9;
    SUBCASE("coordinate SDPCM: 2 sigma^4 off the support, 0 at full support") {
        const auto p = SdpcmProblem::coordinate({1, 1, 1, 1}, s2, 2);
        const Vector partial = vec({1.5, 0.0, 0.0, 0.0});
        const Vector full = vec({1.5, 0.0, 2.0, 0.0});
        const Vector e3 = Vector::Unit(4, 3);
        CHECK(spcm_fisher_bound(p, partial, e3).value == doctest::Approx(2.0 * s2 * s2));
        CHECK(spcm_fisher_bound(p, full, e3).value == doctest::Approx(0.0));
    }
    SUBCASE("SDPCM closed form 2 sum (x0_l + s2)^2 b_l^2 / r_l") {
        const auto p = SdpcmProblem::coordinate({1, 3, 2, 2, 1}, s2, 3);
        RandomStream rng(4, 0);
        for (int trial = 0; trial < 50; ++trial) {
            const Vector x0 = random_sparse(rng, 5, static_cast<int>(rng() % 4), 0.1, 3.0, true);
            const Vector b = gaussian_matrix(5, 1, static_cast<std::uint64_t>(trial) + 40).col(0);
            double oracle = 0.0;
            const bool full = l0_norm(x0) == 3;
            for (Index l = 0; l < 5; ++l)
                if (!full || x0(l) != 0.0) oracle += 2.0 * std::pow(x0(l) + s2, 2) * b(l) * b(l) / p.rank(l);
            CHECK(spcm_fisher_bound(p, x0, b).value == doctest::Approx(oracle).epsilon(1e-10));
        }
    }
    SUBCASE("general SPCM: Fisher matrix by explicit traces and the kernel Hessian") {
        std::vector<Matrix> basis;
        for (std::uint64_t k = 0; k < 3; ++k) {
            const Matrix f = gaussian_matrix(5, 2, 60 + k);
            basis.push_back(f * f.transpose());
        }
        const SpcmProblem p(basis, 0.5, 2);
        const Vector x0 = vec({0.4, 0.0, 0.0});
        Matrix c = 0.5 * Matrix::Identity(5, 5) + 0.4 * basis[0];
        const Matrix ci = c.inverse();
        const Matrix j = spcm_fisher_matrix(p, x0);
        for (int m = 0; m < 3; ++m)
            for (int n = 0; n < 3; ++n)
                CHECK(j(m, n) == doctest::Approx(0.5 * (ci * basis[m] * ci * basis[n]).trace()).epsilon(1e-10));
        const KernelFn kern = [&](const Vector& a, const Vector& b) { return spcm_kernel(p, x0, a, b); };
        const Vector grad = vec({0.2, 1.0, -0.5});
        const double bh = generic_bhattacharyya(kern, x0, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, grad).value;
        CHECK(bh == doctest::Approx(spcm_fisher_bound(p, x0, grad).value).epsilon(1e-4));
    }
}

TEST_CASE("RIP-based bound for the SPCM") {
    const double s2 = 0.8;
    SUBCASE("delta = 0 by direct substitution") {
        const auto p = SdpcmProblem::coordinate({2, 1, 3}, s2, 2);
        const Vector x0 = vec({1.2, 0.0, 0.5});
        const double b = 0.7;
        const double q = 2 + 3 + 1;
        const double oracle = 2.0 * s2 * s2 * b * b / 1.0 * std::pow(s2, q / 2.0) * std::pow(s2, -0.5) /
                              (std::pow(1.2 + s2, 1.0) * std::pow(0.5 + s2, 1.5));
        CHECK(spcm_rip_bound(p, x0, 1, b, 0.0).value == doctest::Approx(oracle).epsilon(1e-12));
    }
    SUBCASE("x0 = 0 and delta = 0 reduce to 2 sigma^4 b^2 / r_l") {
        const auto p = SdpcmProblem::coordinate({2, 3}, s2, 1);
        CHECK(spcm_rip_bound(p, Vector::Zero(2), 1, 1.5, 0.0).value == doctest::Approx(2.0 * s2 * s2 * 2.25 / 3.0));
    }
    SUBCASE("looser than the Fisher term on random inputs") {
        RandomStream rng(13, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const std::vector<int> ranks{1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 3),
                                         1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 3)};
            const auto p = SdpcmProblem::coordinate(ranks, s2, 2);
            Vector x0 = random_sparse(rng, 4, static_cast<int>(rng() % 3), 0.1, 3.0, true);
            Index l = 0;
            while (x0(l) != 0.0) ++l;
            const double b = uniform(rng, -2.0, 2.0);
            const double delta = uniform(rng, 0.0, 0.03);
            CHECK(spcm_rip_bound(p, x0, l, b, delta).value <= 2.0 * s2 * s2 * b * b / ranks[static_cast<std::size_t>(l)] + 1e-12);
        }
    }
    SUBCASE("preconditions") {
        const auto p = SdpcmProblem::coordinate({1, 1}, s2, 1);
        CHECK_THROWS(spcm_rip_bound(p, Vector::Zero(2), 0, 1.0, 1.0 / 32.0));
        CHECK_THROWS(spcm_rip_bound(p, vec({1.0, 0.0}), 0, 1.0, 0.0));
    }
}

TEST_CASE("SDPCM projection bound") {
    const double s2 = 0.7;
    const auto p = SdpcmProblem::coordinate({1, 2, 3, 2}, s2, 2);
    const Vector x0 = vec({1.3, 0.0, 2.1, 0.0});

    SUBCASE("first-order q inside the support") {
        const Support K{0, 2};
        CHECK(sdpcm_q_closed_form(p, x0, K, {0, 0, 1, 0}) == doctest::Approx(3.0 / (2.0 * std::pow(2.1 + s2, 2))));
        CHECK(sdpcm_q_closed_form(p, x0, K, {0, 0, 0, 0}) == doctest::Approx(1.0));
    }
    SUBCASE("closed form and kernel derivatives agree up to order 4") {
        const Support K{0, 1};
        for (const MultiIndex& q : {MultiIndex{0, 0, 0, 0}, MultiIndex{1, 0, 0, 0}, MultiIndex{2, 1, 0, 0},
                                    MultiIndex{3, 1, 0, 0}, MultiIndex{4, 0, 0, 0}, MultiIndex{0, 4, 0, 0}}) {
            const double a = sdpcm_q_closed_form(p, x0, K, q);
            const double b = sdpcm_q_numeric(p, x0, K, q);
            CHECK(std::abs(a - b) <= kQAgreementRtol * a);
        }
    }
    SUBCASE("multi-index outside K is rejected") {
        CHECK_THROWS(sdpcm_q_closed_form(p, x0, Support{0, 1}, {0, 0, 1, 0}));
        CHECK_THROWS(sdpcm_projection_bound(p, x0, Support{0, 1}, {{0, 0, 1, 0}}, vec({1.0}), 0.0));
    }
    SUBCASE("constant functional plus e_k reproduces the spectrum bound") {
        for (Index k = 0; k < 4; ++k) {
            const Support K = first_order_index_set(x0, k, 2);
            MultiIndex ek(4, 0);
            ek[static_cast<std::size_t>(k)] = 1;
            const Vector xk = restrict_to(x0, K);
            const auto r = sdpcm_projection_bound(p, x0, K, {MultiIndex(4, 0), ek}, vec({xk(k), 1.0}), x0(k));
            CHECK(r.value == doctest::Approx(spectrum_bound(p, x0, k).value).epsilon(1e-10));
        }
    }
    SUBCASE("adding multi-indices never decreases the value") {
        // g(x) = x_0 + 0.2 x_0^2 x_1, partials at x0^K with K = {0, 1}
        const Support K{0, 1};
        const double a = x0(0);
        const std::vector<MultiIndex> idx{{0, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}, {1, 1, 0, 0}, {2, 1, 0, 0}};
        const std::vector<double> d{a, 1.0, 0.2 * a * a, 0.4 * a, 0.4};
        double prev = -1e300;
        for (std::size_t n = 2; n <= idx.size(); ++n) {
            const std::vector<MultiIndex> sub(idx.begin(), idx.begin() + static_cast<long>(n));
            Vector part(static_cast<Index>(n));
            for (std::size_t i = 0; i < n; ++i) part(static_cast<Index>(i)) = d[i];
            const double v = sdpcm_projection_bound(p, x0, K, sub, part, a).value;
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
    }
    SUBCASE("repeated multi-index is rejected") {
        CHECK_THROWS(sdpcm_projection_bound(p, x0, Support{0, 2}, {{1, 0, 0, 0}, {1, 0, 0, 0}}, vec({1.0, 1.0}), 0.0));
    }
}

TEST_CASE("first-order SDPCM bound and spectrum bound") {
    SUBCASE("worked example: 2 sqrt(7/16)") {
        const auto p = SdpcmProblem::coordinate({1, 1, 1}, 1.0, 1);
        CHECK(sdpcm_first_order_bound(p, vec({3.0, 0.0, 0.0}), Vector::Unit(3, 1)).value ==
              doctest::Approx(2.0 * std::sqrt(7.0 / 16.0)));
        CHECK(spectrum_bound(p, vec({3.0, 0.0, 0.0}), 1).value == doctest::Approx(2.0 * std::sqrt(7.0 / 16.0)));
    }
    SUBCASE("x0 = 0 reduces to the Fisher bound") {
        const auto p = SdpcmProblem::coordinate({2, 1, 3}, 0.6, 2);
        const Vector b = vec({0.3, -1.0, 2.0});
        CHECK(sdpcm_first_order_bound(p, Vector::Zero(3), b).value ==
              doctest::Approx(spcm_fisher_bound(p, Vector::Zero(3), b).value).epsilon(1e-10));
    }
    SUBCASE("at least the Fisher bound on random x0") {
        RandomStream rng(19, 0);
        const auto p = SdpcmProblem::coordinate({1, 2, 3, 1, 2}, 0.5, 2);
        for (int trial = 0; trial < 200; ++trial) {
            const Vector x0 = random_sparse(rng, 5, static_cast<int>(rng() % 3), 0.05, 5.0, true);
            const Index k = static_cast<Index>(rng() % 5);
            const Vector e = Vector::Unit(5, k);
            CHECK(sdpcm_first_order_bound(p, x0, e).value >= spcm_fisher_bound(p, x0, e).value - 1e-9);
        }
    }
    SUBCASE("spectrum bound inside the support") {
        const auto p = SdpcmProblem::coordinate({1, 1}, 1.0, 1);
        CHECK(spectrum_bound(p, vec({3.0, 0.0}), 0).value == doctest::Approx(32.0));
    }
    SUBCASE("spectrum bound at xi0 = 0 matches the unbiased estimator") {
        const auto p = SdpcmProblem::coordinate({2, 1, 3}, 0.8, 2);
        const Vector x0 = vec({1.0, 0.0, 0.0});
        const double bound = spectrum_bound(p, x0, 2).value;
        CHECK(bound == doctest::Approx(2.0 * 0.64 / 3.0));
        const auto m = sample_moments(40000, 29, [&](RandomStream& rng) {
            return sdpcm_unbiased(p, sdpcm_sample(p, x0, rng))(2);
        });
        CHECK(std::abs(m.var - bound) < 4.0 * m.se_var);
    }
    SUBCASE("LMVU estimator for S = 1 attains the spectrum bound") {
        const auto p = SdpcmProblem::coordinate({2, 1, 2}, 1.0, 1);
        const Vector x0 = vec({0.0, 2.0, 0.0});
        const double bound = spectrum_bound(p, x0, 0).value;
        const auto m = sample_moments(40000, 31, [&](RandomStream& rng) {
            return sdpcm_lmvu_s1(p, sdpcm_sample(p, x0, rng), x0, 0);
        });
        CHECK(std::abs(m.var - bound) < 4.0 * m.se_var);
    }
    SUBCASE("polynomial decay off the support") {
        const auto p = SdpcmProblem::coordinate({1, 2}, 1.0, 1);
        // [1 - xi^2/(xi+1)^2]^{r/2} ~ (2/xi)^{r/2} with r = 2
        double prev = 0.0;
        for (double xi : {1e2, 1e3, 1e4, 1e5}) {
            const double scaled = spectrum_bound(p, vec({0.0, xi}), 0).value * xi;
            if (prev > 0.0) CHECK(std::abs(scaled - prev) < 0.1 * prev);
            prev = scaled;
        }
        CHECK(prev == doctest::Approx(4.0).epsilon(1e-3));
    }
}

TEST_CASE("summing per-component bounds") {
    const auto p = SlmProblem::ssnm(5, 0.6, 3);
    const Vector x0 = vec({1.0, 0.0, 0.0, 0.0, 0.0});
    std::vector<BoundReport> parts;
    for (Index k = 0; k < 5; ++k) parts.push_back(hcrb_ssnm(p, x0, k));
    SUBCASE("single report unchanged") {
        CHECK(sum_components({parts[2]}).value == parts[2].value);
    }
    SUBCASE("N case-1 components give N sigma^2") {
        const auto s = sum_components(parts);
        CHECK(s.value == doctest::Approx(3.0));
        CHECK(s.component == kSumComponent);
        CHECK(s.params["components"].size() == 5);
    }
    SUBCASE("duplicate component") {
        CHECK_THROWS(sum_components({parts[0], parts[1], parts[0]}));
    }
}

TEST_CASE("ordering of SSNM bounds for unbiased estimation") {
    const double s2 = 1.0;
    const int S = 3;
    const auto p = SlmProblem::ssnm(8, s2, S);
    RandomStream rng(37, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const Vector x0 = random_sparse(rng, 8, 1 + static_cast<int>(rng() % S), 0.05, 3.0);
        for (Index k = 0; k < 8; ++k) {
            const double barankin = ssnm_barankin(HermiteSeries{{x0(k), 1.0}, 1.0, x0(k)}, x0, k, S).value;
            const Support K = default_index_set(x0, k, S, IndexSetRule::swap_smallest);
            const double b = rkhs_bound_b(p, x0, K, MeanModel::unbiased(k, x0, tilde_x0(p, x0, K))).value;
            const double hcrb = hcrb_ssnm(p, x0, k).value;
            CHECK(barankin >= b - 1e-9);
            CHECK(b >= hcrb - 1e-9);
        }
    }
}
