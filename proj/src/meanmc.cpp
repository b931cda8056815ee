#include "sparsemv/meanmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace sparsemv {

namespace {

// Central moment sums of a block of vector samples, mergeable in any fixed order.
struct Moments {
    double n = 0.0;
    Eigen::ArrayXd mean, m2, m3, m4;

    static Moments of_block(const std::vector<Vector>& samples) {
        Moments out;
        out.n = static_cast<double>(samples.size());
        const Index d = samples.front().size();
        out.mean = Eigen::ArrayXd::Zero(d);
        for (const auto& s : samples) out.mean += s.array();
        out.mean /= out.n;
        out.m2 = out.m3 = out.m4 = Eigen::ArrayXd::Zero(d);
        for (const auto& s : samples) {
            const Eigen::ArrayXd c = s.array() - out.mean;
            const Eigen::ArrayXd c2 = c * c;
            out.m2 += c2;
            out.m3 += c2 * c;
            out.m4 += c2 * c2;
        }
        return out;
    }

    static Moments merge(const Moments& a, const Moments& b) {
        if (a.mean.size() != b.mean.size())
            throw std::invalid_argument("mc: estimator output length changed between trials");
        Moments out;
        const double na = a.n, nb = b.n, n = na + nb;
        out.n = n;
        const Eigen::ArrayXd d = b.mean - a.mean;
        const Eigen::ArrayXd d2 = d * d;
        out.mean = a.mean + d * (nb / n);
        out.m2 = a.m2 + b.m2 + d2 * (na * nb / n);
        out.m3 = a.m3 + b.m3 + d2 * d * (na * nb * (na - nb) / (n * n)) +
                 3.0 * d * (na * b.m2 - nb * a.m2) / n;
        out.m4 = a.m4 + b.m4 + d2 * d2 * (na * nb * (na * na - na * nb + nb * nb) / (n * n * n)) +
                 6.0 * d2 * (na * na * b.m2 + nb * nb * a.m2) / (n * n) +
                 4.0 * d * (na * b.m3 - nb * a.m3) / n;
        return out;
    }
};

Moments merge_range(const std::vector<Moments>& blocks, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return blocks[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    return Moments::merge(merge_range(blocks, lo, mid), merge_range(blocks, mid, hi));
}

using TrialFn = std::function<Vector(std::int64_t trial)>;

Moments run_trials(const TrialFn& trial, const McConfig& cfg) {
    cfg.validate();
    const std::int64_t nblocks = (cfg.trials + kMcBlockSize - 1) / kMcBlockSize;
    std::vector<Moments> blocks(static_cast<std::size_t>(nblocks));
    std::atomic<std::int64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto work = [&] {
        std::vector<Vector> samples;
        for (;;) {
            const std::int64_t b = next.fetch_add(1);
            if (b >= nblocks) return;
            const std::int64_t lo = b * kMcBlockSize;
            const std::int64_t hi = std::min(cfg.trials, lo + kMcBlockSize);
            samples.clear();
            try {
                for (std::int64_t t = lo; t < hi; ++t) {
                    samples.push_back(trial(t));
                    if (samples.back().size() != samples.front().size())
                        throw std::invalid_argument("mc: estimator output length changed between trials");
                }
                blocks[static_cast<std::size_t>(b)] = Moments::of_block(samples);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(nblocks);
                return;
            }
        }
    };

    const int nthreads = static_cast<int>(std::min<std::int64_t>(cfg.workers, nblocks));
    if (nthreads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return merge_range(blocks, 0, blocks.size());
}

void check_sim_param(const SimModel& model, const Vector& x) {
    if (x.size() != model.dim)
        throw std::invalid_argument("mc: parameter has length " + std::to_string(x.size()) + ", model expects " +
                                    std::to_string(model.dim));
    if (!x.allFinite()) throw std::invalid_argument("mc: parameter has non-finite entries");
    if (l0_norm(x) > model.sparsity)
        throw std::invalid_argument("mc: parameter has more than S nonzero entries");
    if (model.nonnegative && (x.array() < 0.0).any())
        throw std::invalid_argument("mc: parameter must be nonnegative for this model");
}

// Trial outputs are vec(partials) followed by the estimate itself.
GradResult to_grad(const Moments& m, Index n, const McConfig& cfg) {
    const Index k = m.mean.size() / (n + 1);
    GradResult out;
    out.partials = Eigen::Map<const Matrix>(m.mean.data(), n, k);
    const Eigen::ArrayXd se = (m.m2 / (m.n - 1.0) / m.n).sqrt();
    out.std_err = Eigen::Map<const Matrix>(se.data(), n, k);
    out.mean = m.mean.tail(k).matrix();
    out.mean_std_err = se.tail(k).matrix();
    out.trials = cfg.trials;
    out.seed = cfg.seed;
    return out;
}

// Independent pilot estimate of the mean, used as a control variate for the score products:
// E{(x_hat - c) score} equals E{x_hat score} for any constant c because E{score} = 0, and
// centering removes the part of the Monte Carlo error that grows with |m(x)|.
Vector pilot_mean(const std::function<Vector(RandomStream&)>& draw_estimate, const McConfig& cfg) {
    McConfig pilot = cfg;
    pilot.trials = std::max<std::int64_t>(2, cfg.trials / 4);
    pilot.seed = mix64(cfg.seed ^ 0x5c0e0f1a7e3d2b19ULL);
    const Moments m = run_trials(
        [&](std::int64_t t) {
            RandomStream rng(pilot.seed, static_cast<std::uint64_t>(t));
            return draw_estimate(rng);
        },
        pilot);
    return m.mean.matrix();
}

Vector pack(const Matrix& partials, const Vector& est) {
    Vector out(partials.size() + est.size());
    out << Eigen::Map<const Vector>(partials.data(), partials.size()), est;
    return out;
}

}  // namespace

void McConfig::validate() const {
    if (trials < 2) throw std::invalid_argument("McConfig: trials must be at least 2");
    if (workers < 1) throw std::invalid_argument("McConfig: workers must be positive");
}

McResult mc_moments(const EstimatorFn& estimator, const SimModel& model, const Vector& x, const McConfig& cfg) {
    check_sim_param(model, x);
    const Moments m = run_trials(
        [&](std::int64_t t) {
            RandomStream rng(cfg.seed, static_cast<std::uint64_t>(t));
            return estimator(model.sample(x, rng));
        },
        cfg);

    McResult out;
    const double n = m.n;
    out.mean = m.mean.matrix();
    out.per_component_variance = (m.m2 / (n - 1.0)).matrix();
    out.variance_total = out.per_component_variance.sum();
    out.std_err = (out.per_component_variance.array() / n).sqrt().matrix();
    const Eigen::ArrayXd var_n = m.m2 / n;
    out.variance_stderr = ((m.m4 / n - var_n * var_n).max(0.0) / n).sqrt().matrix();
    out.trials = cfg.trials;
    out.seed = cfg.seed;
    return out;
}

GradResult mean_grad_slm_mc(const EstimatorFn& estimator, const SlmProblem& p, const Vector& x,
                            const McConfig& cfg) {
    p.check_param(x);
    const Vector hx = p.H() * x;
    const Vector center = pilot_mean([&](RandomStream& rng) { return estimator(slm_sample(p, x, rng)); }, cfg);
    const Moments m = run_trials(
        [&](std::int64_t t) {
            RandomStream rng(cfg.seed, static_cast<std::uint64_t>(t));
            const Vector y = slm_sample(p, x, rng);
            const Vector score = p.H().transpose() * (y - hx) / p.sigma2();
            const Vector est = estimator(y);
            return pack(score * (est - center).transpose(), est);
        },
        cfg);
    return to_grad(m, p.dim(), cfg);
}

GradResult mean_grad_sdpcm_mc(const EstimatorFn& estimator, const SdpcmProblem& p, const Vector& x,
                              const McConfig& cfg) {
    p.check_param(x);
    const Index n = p.dim();
    Vector rate(n), half_r(n);
    for (Index l = 0; l < n; ++l) {
        rate(l) = x(l) + p.sigma2();
        half_r(l) = 0.5 * p.rank(l) / rate(l);
    }
    const Vector center = pilot_mean([&](RandomStream& rng) { return estimator(sdpcm_sample(p, x, rng)); }, cfg);
    const Moments m = run_trials(
        [&](std::int64_t t) {
            RandomStream rng(cfg.seed, static_cast<std::uint64_t>(t));
            const Vector y = sdpcm_sample(p, x, rng);
            const Vector beta = beta_energies(p, y);
            const Vector score = half_r.array() * (beta.array() / rate.array() - 1.0);
            const Vector est = estimator(y);
            return pack(score * (est - center).transpose(), est);
        },
        cfg);
    return to_grad(m, n, cfg);
}

std::vector<Index> fd_directions(const SimModel& model, const Vector& x) {
    check_sim_param(model, x);
    if (l0_norm(x) < model.sparsity) {
        std::vector<Index> all(static_cast<std::size_t>(model.dim));
        for (Index l = 0; l < model.dim; ++l) all[static_cast<std::size_t>(l)] = l;
        return all;
    }
    return support_of(x);
}

GradResult mean_grad_fd(const EstimatorFn& estimator, const SimModel& model, const Vector& x, double rel_step,
                        const McConfig& cfg, const std::vector<Index>& directions) {
    if (!(rel_step > 0.0)) throw std::invalid_argument("mean_grad_fd: step must be positive");
    check_sim_param(model, x);
    std::vector<Index> dirs = directions;
    if (dirs.empty())
        for (Index l = 0; l < model.dim; ++l) dirs.push_back(l);
    const Support supp = support_of(x);
    const bool full = static_cast<int>(supp.size()) >= model.sparsity;
    for (Index l : dirs) {
        if (l < 0 || l >= model.dim) throw std::out_of_range("mean_grad_fd: direction out of range");
        if (full && !contains(supp, l))
            throw std::invalid_argument(
                "mean_grad_fd: perturbing x along " + std::to_string(l) +
                " exceeds S nonzeros; restrict directions to supp(x) (see fd_directions) or use a point "
                "with fewer than S nonzeros");
    }

    const Index n = model.dim;
    std::vector<Vector> shifted;
    std::vector<double> steps;
    for (Index l : dirs) {
        const double h = rel_step * std::max(1.0, std::abs(x(l)));
        Vector xs = x;
        xs(l) += h;
        shifted.push_back(std::move(xs));
        steps.push_back(h);
    }
    const Moments m = run_trials(
        [&](std::int64_t t) {
            RandomStream rng0(cfg.seed, static_cast<std::uint64_t>(t));
            const Vector base = estimator(model.sample(x, rng0));
            Matrix diff = Matrix::Zero(n, base.size());
            for (std::size_t i = 0; i < dirs.size(); ++i) {
                RandomStream rng(cfg.seed, static_cast<std::uint64_t>(t));
                const Vector moved = estimator(model.sample(shifted[i], rng));
                if (moved.size() != base.size())
                    throw std::invalid_argument("mc: estimator output length changed between trials");
                diff.row(dirs[i]) = ((moved - base) / steps[i]).transpose();
            }
            return pack(diff, base);
        },
        cfg);
    return to_grad(m, n, cfg);
}

namespace {

std::vector<double> threshold_breaks(const DiagonalEstimator& base) {
    if (base.kind == DiagonalEstimator::Kind::ht && base.threshold > 0.0) return {-base.threshold, base.threshold};
    return {};
}

}  // namespace

std::pair<double, double> diag_mean_var_quadrature(const DiagonalEstimator& base, double xk, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("diag_mean_var_quadrature: sigma must be positive");
    const auto breaks = threshold_breaks(base);
    const double mean = gaussian_expectation([&](double y) { return base(y); }, xk, sigma, breaks);
    const double var = gaussian_expectation(
        [&](double y) {
            const double d = base(y) - mean;
            return d * d;
        },
        xk, sigma, breaks);
    return {mean, std::max(var, 0.0)};
}

double diag_mean_slope_quadrature(const DiagonalEstimator& base, double xk, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("diag_mean_slope_quadrature: sigma must be positive");
    return gaussian_expectation([&](double y) { return base(y) * (y - xk); }, xk, sigma, threshold_breaks(base)) /
           (sigma * sigma);
}

}  // namespace sparsemv
