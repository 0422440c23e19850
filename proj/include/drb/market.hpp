#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/mathutil.hpp"

namespace drb {

// Discrete-time Heston-inspired market: per-asset square-root variance with
// exact mean-reversion step plus Milstein correction, lognormal price step,
// student-t copula across price shocks and Gaussian price/variance coupling.
struct MarketParams {
    int n_assets = 1;
    Eigen::VectorXd mu;        // drift, 1/year
    Eigen::VectorXd kappa;     // mean-reversion speed, 1/year
    Eigen::VectorXd theta_bar; // long-run variance
    Eigen::VectorXd eta;       // vol-of-vol
    Eigen::MatrixXd corr;      // (2n x 2n) over (price shocks, variance shocks)
    int t_dof = 4;             // student-t copula dof among price shocks
    double dt = 1.0 / 48.0;    // simulation step, years
    int substeps_per_decision = 4;
    int horizon_decisions = 12; // T+1
    Eigen::VectorXd v0;        // initial variances (default theta_bar)
    Eigen::VectorXd x0;        // initial prices (default 1)

    void validate() const {
        auto need = [&](const Eigen::VectorXd& v, const char* name) {
            if (v.size() != n_assets)
                throw std::invalid_argument(std::string("MarketParams: ") + name +
                                            " must have n_assets entries");
        };
        if (n_assets < 1) throw std::invalid_argument("MarketParams: n_assets >= 1");
        need(mu, "mu");
        need(kappa, "kappa");
        need(theta_bar, "theta_bar");
        need(eta, "eta");
        if ((kappa.array() <= 0).any() || (theta_bar.array() <= 0).any() ||
            (eta.array() < 0).any())
            throw std::invalid_argument("MarketParams: kappa, theta_bar > 0; eta >= 0");
        if (!(dt > 0) || substeps_per_decision < 1 || horizon_decisions < 1)
            throw std::invalid_argument("MarketParams: dt, substeps, horizon must be positive");
        if (t_dof < 3) throw std::invalid_argument("MarketParams: t_dof >= 3");
        if (v0.size() && ((v0.array() <= 0).any() || v0.size() != n_assets))
            throw std::invalid_argument("MarketParams: v0 must be positive per asset");
        if (x0.size() && ((x0.array() <= 0).any() || x0.size() != n_assets))
            throw std::invalid_argument("MarketParams: x0 must be positive per asset");
        const int d = 2 * n_assets;
        if (corr.rows() != d || corr.cols() != d)
            throw std::invalid_argument("MarketParams: corr must be 2n x 2n");
        if (!corr.isApprox(corr.transpose(), 1e-12))
            throw std::invalid_argument("MarketParams: corr must be symmetric");
        for (int i = 0; i < d; ++i)
            if (std::fabs(corr(i, i) - 1.0) > 1e-12)
                throw std::invalid_argument("MarketParams: corr must have unit diagonal");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw std::invalid_argument("MarketParams: corr must be positive semidefinite");
    }

    Eigen::VectorXd initial_variance() const { return v0.size() ? v0 : theta_bar; }
    Eigen::VectorXd initial_price() const {
        return x0.size() ? x0 : Eigen::VectorXd::Ones(n_assets);
    }
};

// Only decision-time prices are retained: prices[t] is (paths x assets) for
// t = 0..horizon_decisions (the decision grid, one point per
// substeps_per_decision simulation steps).
struct PricePaths {
    std::vector<Eigen::MatrixXd> prices;
    std::uint64_t seed = 0;

    std::size_t n_paths() const { return prices.empty() ? 0 : prices[0].rows(); }
    int n_times() const { return static_cast<int>(prices.size()); }
    int n_assets() const { return prices.empty() ? 0 : static_cast<int>(prices[0].cols()); }
};

namespace detail {

// Square root of corr for shock generation (Cholesky with PSD fallback).
inline Eigen::MatrixXd corr_sqrt(const Eigen::MatrixXd& corr) {
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

} // namespace detail

// Simulates `n_paths` decision-grid price paths. Paths are seeded
// individually (seed, path index), so the result is independent of any
// parallel block partitioning and reruns are bit-identical.
inline PricePaths sample_paths(const MarketParams& params, std::size_t n_paths,
                               std::uint64_t seed) {
    params.validate();
    if (n_paths < 1) throw std::invalid_argument("sample_paths: n_paths >= 1");

    const int n = params.n_assets;
    const int total_steps = params.horizon_decisions * params.substeps_per_decision;
    const double dt = params.dt, sqrt_dt = std::sqrt(dt);
    const Eigen::MatrixXd L = detail::corr_sqrt(params.corr);
    const Eigen::ArrayXd decay = (-params.kappa.array() * dt).exp();

    PricePaths out;
    out.seed = seed;
    out.prices.assign(params.horizon_decisions + 1, Eigen::MatrixXd(n_paths, n));

    Eigen::VectorXd z(2 * n), shocks(2 * n);
    for (std::size_t path = 0; path < n_paths; ++path) {
        Rng rng(seed, path);
        Eigen::ArrayXd logx = params.initial_price().array().log();
        Eigen::ArrayXd v = params.initial_variance().array();
        out.prices[0].row(path) = logx.exp().matrix().transpose();

        for (int k = 0; k < total_steps; ++k) {
            for (int i = 0; i < 2 * n; ++i) z[i] = rng.normal();
            shocks = L * z;
            // Student-t copula among price shocks: shared chi-squared scaling,
            // then marginal transform back to Normal(0, dt). Variance shocks
            // stay Gaussian.
            double chi = std::sqrt(rng.chi_squared(params.t_dof) / params.t_dof);
            Eigen::ArrayXd dWx(n), dWv(n);
            for (int i = 0; i < n; ++i) {
                double u = student_t_cdf(shocks[i] / chi, params.t_dof);
                dWx[i] = norm_inv_cdf(u) * sqrt_dt;
                dWv[i] = shocks[n + i] * sqrt_dt;
            }

            Eigen::ArrayXd vplus = v.max(0.0);
            logx += (params.mu.array() - 0.5 * vplus) * dt + vplus.sqrt() * dWx;
            v = params.theta_bar.array() + (vplus - params.theta_bar.array()) * decay +
                params.eta.array() * vplus.sqrt() * dWv +
                0.25 * params.eta.array().square() * (dWv.square() - dt);

            if (!logx.isFinite().all() || !v.isFinite().all())
                throw std::runtime_error("sample_paths: non-finite state on path " +
                                         std::to_string(path));
            if ((k + 1) % params.substeps_per_decision == 0)
                out.prices[(k + 1) / params.substeps_per_decision].row(path) =
                    logx.exp().matrix().transpose();
        }
    }
    return out;
}

struct TerminalStats {
    Eigen::VectorXd mean;   // of total return X_T/X_0 - 1
    Eigen::VectorXd stddev; // (n-1) normalization
    Eigen::VectorXd sharpe; // mean/std (NaN when std == 0)
    Eigen::MatrixXd correlation;
};

inline TerminalStats terminal_stats(const PricePaths& paths) {
    const std::size_t P = paths.n_paths();
    if (P < 2) throw std::invalid_argument("terminal_stats: need >= 2 paths");
    const int n = paths.n_assets();
    Eigen::MatrixXd ret =
        (paths.prices.back().array() / paths.prices.front().array() - 1.0).matrix();

    TerminalStats s;
    s.mean = ret.colwise().mean();
    Eigen::MatrixXd centered = ret.rowwise() - s.mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(P - 1);
    s.stddev = cov.diagonal().cwiseSqrt();
    s.sharpe = s.mean.array() / s.stddev.array();
    s.correlation.resize(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            s.correlation(i, j) = cov(i, j) / (s.stddev[i] * s.stddev[j]);
    return s;
}

// Tables 3-4 defaults of the five-asset experiment.
inline MarketParams default_market_params() {
    MarketParams p;
    p.n_assets = 5;
    p.mu = (Eigen::VectorXd(5) << 0.05, 0.075, 0.10, 0.125, 0.15).finished();
    p.kappa = (Eigen::VectorXd(5) << 4.0, 4.5, 5.0, 5.5, 6.0).finished();
    p.theta_bar = (Eigen::VectorXd(5) << 0.01, 0.0225, 0.04, 0.0625, 0.09).finished();
    p.eta = (Eigen::VectorXd(5) << 0.5, 0.875, 1.25, 1.625, 2.0).finished();
    p.t_dof = 4;
    p.dt = 1.0 / 48.0;
    p.substeps_per_decision = 4;
    p.horizon_decisions = 12;
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(10, 10);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j) c(i, j) = 0.3;
    for (int i = 0; i < 5; ++i) {
        c(i, 5 + i) = -0.5;
        c(5 + i, i) = -0.5;
    }
    p.corr = c;
    return p;
}

} // namespace drb
