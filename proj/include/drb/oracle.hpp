#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/mathutil.hpp"
#include "drb/portfolio.hpp"
#include "drb/risk.hpp"
#include "drb/tree.hpp"

namespace drb::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

// Minimize f(theta) = distortion(theta' a_j over atoms) - sum_i b_i log theta_i
// where the loss atoms a_j are fixed vectors with probabilities p_j. The
// distortion term is convex but piecewise linear (kinks where atom orderings
// tie), so raw (sub)gradient descent can stall. Instead we use the
// Rockafellar-Uryasev epigraph form of the expected-shortfall part,
//   ES_a(Z) = min_q q + E[(Z - q)_+]/(1 - a),
// smooth the hinge with softplus, and drive the smoothing to zero by
// continuation. Each stage is smooth and strictly convex (the log barrier
// covers theta, the softplus curvature covers q), so damped Newton converges;
// the minimizer of the smoothed problem tends to the unique exact optimum.
struct ConvexAtomProblem {
    std::vector<VectorXd> atoms; // a_j, one per scenario
    std::vector<double> probs;
    VectorXd budget;             // b_i > 0
    DistortionSpec spec;
    double floor = 1e-10;
    int max_iter = 400;          // Newton iterations per continuation stage
    double grad_tol = 1e-10;

    static double softplus(double x, double tau) {
        double t = x / tau;
        if (t > 30.0) return x;
        if (t < -30.0) return tau * std::exp(t);
        return tau * std::log1p(std::exp(t));
    }
    static double sigmoid(double t) {
        if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
        double e = std::exp(t);
        return e / (1.0 + e);
    }

    // Exact (nonsmooth) objective and a subgradient from the sorted-atom
    // distortion weights; used to polish the smoothed solution, where the
    // weights are locally constant and the objective locally smooth.
    double objective(const VectorXd& theta, VectorXd* grad = nullptr) const {
        const std::size_t m = atoms.size();
        std::vector<double> z(m), p(probs.begin(), probs.end());
        for (std::size_t j = 0; j < m; ++j) z[j] = theta.dot(atoms[j]);
        DiscreteDistribution law{z, p};
        double f = distortion_exact(spec, law);
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            f -= budget(i) * std::log(theta(i));
        if (grad) {
            std::vector<double> gw = atom_weights(spec, law);
            grad->setZero(theta.size());
            for (std::size_t j = 0; j < m; ++j) *grad += p[j] * gw[j] * atoms[j];
            for (Eigen::Index i = 0; i < theta.size(); ++i)
                (*grad)(i) -= budget(i) / theta(i);
        }
        return f;
    }

    // Smoothed objective in x = (theta, q); fills gradient and Hessian.
    double smoothed(const VectorXd& theta, double q, double tau, VectorXd* grad,
                    MatrixXd* hess) const {
        const Eigen::Index n = theta.size();
        const double p = spec.p, c1 = p / (1.0 - spec.alpha);
        double f = p * q;
        if (grad) grad->setZero(n + 1);
        if (hess) hess->setZero(n + 1, n + 1);
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            double z = theta.dot(atoms[j]);
            double sj = sigmoid((z - q) / tau);
            f += probs[j] * (c1 * softplus(z - q, tau) + (1.0 - p) * z);
            if (grad) {
                double gz = probs[j] * (c1 * sj + (1.0 - p));
                grad->head(n) += gz * atoms[j];
                (*grad)(n) -= probs[j] * c1 * sj;
            }
            if (hess) {
                double d = probs[j] * c1 * sj * (1.0 - sj) / tau;
                if (d > 0.0) {
                    VectorXd v(n + 1);
                    v.head(n) = atoms[j];
                    v(n) = -1.0;
                    hess->noalias() += d * v * v.transpose();
                }
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            f -= budget(i) * std::log(theta(i));
            if (grad) (*grad)(i) -= budget(i) / theta(i);
            if (hess) (*hess)(i, i) += budget(i) / (theta(i) * theta(i));
        }
        if (grad) (*grad)(n) += p;
        return f;
    }

    VectorXd solve(const VectorXd& theta0, const std::string& where) const {
        const Eigen::Index n = theta0.size();
        const double p = spec.p;
        // pure-mean case: the objective is smooth with a closed-form optimum
        if (p < 1e-14) {
            VectorXd abar = VectorXd::Zero(n);
            for (std::size_t j = 0; j < atoms.size(); ++j) abar += probs[j] * atoms[j];
            for (Eigen::Index i = 0; i < n; ++i)
                if (!(abar(i) > 0.0))
                    throw std::runtime_error(
                        "risk budgeting objective unbounded below at " + where);
            return budget.cwiseQuotient(abar);
        }
        VectorXd theta = theta0;
        // initial q: weighted alpha-quantile of the portfolio atoms
        std::vector<std::pair<double, double>> zp;
        double zlo = 0.0, zhi = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            double z = theta.dot(atoms[j]);
            zp.emplace_back(z, probs[j]);
            zlo = std::min(zlo, z);
            zhi = std::max(zhi, z);
        }
        std::sort(zp.begin(), zp.end());
        double q = zp.back().first, cum = 0.0;
        for (auto& [z, pw] : zp) {
            cum += pw;
            if (cum >= spec.alpha) { q = z; break; }
        }
        const double scale = std::max(zhi - zlo, 1e-6);
        VectorXd grad(n + 1);
        MatrixXd hess(n + 1, n + 1);
        const double f_first = smoothed(theta, q, 1e-2 * scale, nullptr, nullptr);
        const double f_floor = f_first - 1e3 * (1.0 + std::fabs(f_first));
        for (double rel = 1e-2; rel >= 0.9e-9; rel *= 0.1) {
            const double tau = rel * scale;
            const double tol = std::max(grad_tol, 1e-4 * rel);
            double f = smoothed(theta, q, tau, &grad, &hess);
            for (int it = 0; it < max_iter; ++it) {
                if (grad.lpNorm<Eigen::Infinity>() < tol) break;
                // Levenberg-damped Newton: at small tau the Hessian is nearly
                // singular in q when every sigmoid saturates, so escalate the
                // ridge until the line search makes progress
                bool moved = false;
                double lambda = 0.0;
                const double diag_scale = 1.0 + hess.diagonal().maxCoeff();
                for (int attempt = 0; attempt < 8 && !moved; ++attempt) {
                    MatrixXd H = hess;
                    if (lambda > 0.0) H.diagonal().array() += lambda;
                    VectorXd dir = H.ldlt().solve(-grad);
                    double slope = grad.dot(dir);
                    if (slope < 0.0 && dir.allFinite()) {
                        // fraction-to-boundary: stay strictly inside theta > 0
                        double step = 1.0;
                        for (Eigen::Index i = 0; i < n; ++i)
                            if (dir(i) < 0.0)
                                step = std::min(step, -0.99 * theta(i) / dir(i));
                        for (int bt = 0; bt < 40; ++bt) {
                            VectorXd tc = theta + step * dir.head(n);
                            double qc = q + step * dir(n);
                            double fc = smoothed(tc, qc, tau, nullptr, nullptr);
                            if (fc <= f + 1e-4 * step * slope) {
                                theta = tc;
                                q = qc;
                                f = smoothed(theta, q, tau, &grad, &hess);
                                moved = true;
                                break;
                            }
                            step *= 0.5;
                        }
                    }
                    lambda = lambda == 0.0 ? 1e-12 * diag_scale : 1e4 * lambda;
                }
                // no representable descent step: machine-precision floor for
                // this smoothing level; the continuation (and the final
                // gradient check below) decide whether that is good enough
                if (!moved) break;
                if (f < f_floor || theta.maxCoeff() > 1e10)
                    throw std::runtime_error(
                        "risk budgeting objective appears unbounded below at " + where +
                        " (an asset with no distorted downside admits no optimum)");
            }
        }
        // polish with exact atom weights: near the optimum the sorted-atom
        // weights are locally constant in theta, so the exact objective is
        // smooth there and the barrier-Hessian Newton step is exact
        {
            VectorXd g(n);
            double f = objective(theta, &g);
            for (int it = 0; it < 50; ++it) {
                if (g.lpNorm<Eigen::Infinity>() < grad_tol) break;
                VectorXd dir(n);
                for (Eigen::Index i = 0; i < n; ++i)
                    dir(i) = -g(i) * theta(i) * theta(i) / budget(i);
                double slope = g.dot(dir);
                if (!(slope < 0.0)) break;
                double step = 1.0;
                for (Eigen::Index i = 0; i < n; ++i)
                    if (dir(i) < 0.0) step = std::min(step, -0.99 * theta(i) / dir(i));
                bool moved = false;
                for (int bt = 0; bt < 40; ++bt) {
                    VectorXd tc = theta + step * dir;
                    if (objective(tc) <= f + 1e-4 * step * slope) {
                        theta = tc;
                        f = objective(theta, &g);
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if (!moved) break;
            }
            if (g.lpNorm<Eigen::Infinity>() > 1e-7)
                throw std::runtime_error(
                    "risk budgeting solver did not converge at " + where + " (grad " +
                    std::to_string(g.lpNorm<Eigen::Infinity>()) + ")");
        }
        for (Eigen::Index i = 0; i < n; ++i)
            theta(i) = std::max(theta(i), floor);
        return theta;
    }
};

} // namespace detail

struct TreeSolution {
    TreeStrategy theta;          // [t][node]
    std::vector<std::vector<double>> risk_to_go; // [t][node], reported at optimum
};

// Exact backward induction for the dynamic risk budgeting problem on a
// scenario tree: at each node, given the already-solved continuation, the
// one-step objective is strictly convex and the node problem is solved to
// gradient tolerance. At the optimum the risk-to-go equals the row sum of the
// budget and the contributions equal the budgets.
inline TreeSolution solve_tree_risk_budgeting(const ScenarioTree& tr,
                                              const RiskBudget& budget,
                                              const std::vector<DistortionSpec>& specs,
                                              double floor = 1e-10,
                                              std::uint64_t init_seed = 0) {
    tr.validate();
    budget.validate();
    const int T1 = tr.depth; // decision times 0..depth-1
    if (budget.b.rows() != T1 || budget.b.cols() != tr.n_assets)
        throw std::invalid_argument("solve_tree_risk_budgeting: budget shape mismatch");
    if (static_cast<int>(specs.size()) != T1)
        throw std::invalid_argument("solve_tree_risk_budgeting: one spec per time required");
    auto neg_inc = negative_increments(tr);

    TreeSolution sol;
    sol.theta.resize(T1);
    sol.risk_to_go.assign(T1 + 1, {});
    sol.risk_to_go[T1].assign(tr.levels[T1].size(), 0.0);
    Rng rng(init_seed == 0 ? 0x5eedULL : init_seed);

    for (int t = T1 - 1; t >= 0; --t) {
        const auto& level = tr.levels[t];
        sol.theta[t].resize(level.size());
        sol.risk_to_go[t].assign(level.size(), 0.0);
        for (std::size_t m = 0; m < level.size(); ++m) {
            const auto& node = level[m];
            detail::ConvexAtomProblem prob;
            prob.spec = specs[t];
            prob.budget = budget.b.row(t).transpose();
            prob.floor = floor;
            for (std::size_t k = 0; k < node.children.size(); ++k) {
                int c = node.children[k];
                const auto& child = tr.levels[t + 1][c];
                VectorXd a = neg_inc[t][c];
                if (t + 1 < T1) {
                    double denom = sol.theta[t + 1][c].dot(child.prices);
                    a += child.prices * (sol.risk_to_go[t + 1][c] / denom);
                }
                prob.atoms.push_back(std::move(a));
                prob.probs.push_back(child.prob);
            }
            VectorXd theta0 = VectorXd::Constant(tr.n_assets, 1.0);
            if (init_seed != 0)
                for (Eigen::Index i = 0; i < theta0.size(); ++i)
                    theta0(i) = std::exp(2.0 * rng.uniform() - 1.0);
            std::string where = "t=" + std::to_string(t) + " node=" + std::to_string(m);
            VectorXd star = prob.solve(theta0, where);
            sol.theta[t][m] = star;
            // risk-to-go at the optimum (full allocation makes it the budget sum)
            std::vector<double> z, p;
            for (std::size_t k = 0; k < prob.atoms.size(); ++k) {
                z.push_back(star.dot(prob.atoms[k]));
                p.push_back(prob.probs[k]);
            }
            sol.risk_to_go[t][m] =
                distortion_exact(specs[t], DiscreteDistribution{z, p});
        }
    }
    return sol;
}

struct StaticSolution {
    VectorXd theta;
    VectorXd rc;   // Euler contributions on the sample
    double rho;    // empirical distortion at the optimum
};

// Single-period sample-average solver: equiprobable loss atoms given by the
// rows of `losses` (loss = negative price increment per unit position).
inline StaticSolution solve_static_saa(const MatrixXd& losses, const VectorXd& budget,
                                       const DistortionSpec& spec,
                                       double floor = 1e-10) {
    if (losses.rows() < 2) throw std::invalid_argument("solve_static_saa: need >= 2 samples");
    if (budget.size() != losses.cols())
        throw std::invalid_argument("solve_static_saa: budget dimension mismatch");
    detail::ConvexAtomProblem prob;
    prob.spec = spec;
    prob.budget = budget;
    prob.floor = floor;
    double p = 1.0 / static_cast<double>(losses.rows());
    for (Eigen::Index j = 0; j < losses.rows(); ++j) {
        prob.atoms.push_back(losses.row(j).transpose());
        prob.probs.push_back(p);
    }
    StaticSolution out;
    out.theta = prob.solve(VectorXd::Constant(losses.cols(), 1.0), "static");
    std::vector<double> z(losses.rows()), pr(losses.rows(), p);
    for (Eigen::Index j = 0; j < losses.rows(); ++j) z[j] = out.theta.dot(losses.row(j));
    DiscreteDistribution law{z, pr};
    out.rho = distortion_exact(spec, law);
    std::vector<double> gw = atom_weights(spec, law);
    out.rc = VectorXd::Zero(losses.cols());
    for (Eigen::Index j = 0; j < losses.rows(); ++j)
        out.rc += p * gw[static_cast<std::size_t>(j)] *
                  out.theta.cwiseProduct(losses.row(j).transpose());
    return out;
}

// Closed-form mean-ES contributions for Gaussian losses L ~ N(mu, Sigma):
//   RC_i = theta_i * [ p*(mu_i + (Sigma theta)_i/sqrt(theta'Sigma theta)
//                        * phi(Phi^{-1}(alpha))/(1-alpha)) + (1-p)*mu_i ].
// Derived from the distortion representation; the test suite gates this
// formula against Monte Carlo before it is used as an oracle elsewhere.
inline VectorXd gaussian_es_contributions(const VectorXd& mu, const MatrixXd& Sigma,
                                          const VectorXd& theta, double alpha, double p) {
    if (Sigma.rows() != Sigma.cols() || Sigma.rows() != mu.size() ||
        theta.size() != mu.size())
        throw std::invalid_argument("gaussian_es_contributions: dimension mismatch");
    Eigen::LLT<MatrixXd> llt(Sigma);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("gaussian_es_contributions: Sigma not positive definite");
    double sd = std::sqrt(theta.dot(Sigma * theta));
    if (!(sd > 0.0))
        throw std::invalid_argument("gaussian_es_contributions: degenerate portfolio variance");
    double es_mult = norm_pdf(norm_inv_cdf(alpha)) / (1.0 - alpha);
    VectorXd sigtheta = Sigma * theta;
    VectorXd rc(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        rc(i) = theta(i) * (p * (mu(i) + sigtheta(i) / sd * es_mult) + (1.0 - p) * mu(i));
    return rc;
}

} // namespace drb::oracle
