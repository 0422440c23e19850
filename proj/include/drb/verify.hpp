#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "drb/mathutil.hpp"
#include "drb/oracle.hpp"
#include "drb/portfolio.hpp"
#include "drb/risk.hpp"
#include "drb/tree.hpp"

namespace drb::verify {

struct Check {
    std::string name;
    bool pass = false;
    double worst = 0.0; // largest deviation observed
    std::string detail;
};

struct Report {
    std::vector<Check> checks;

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

namespace detail {

inline double tol_of(double value, double abs_tol, double rel_tol) {
    return std::max(abs_tol, rel_tol * std::fabs(value));
}

// Per-node cumulative weight-process product c_t = prod_{s<t} w_s along the
// unique path to each node (trees here are non-recombining).
inline std::vector<std::vector<double>> weight_prefix(const ScenarioTree& tree,
                                                      const TreeStrategy& theta) {
    std::vector<std::vector<double>> c(tree.depth + 1);
    c[0] = {1.0};
    for (int t = 0; t + 1 < tree.depth; ++t) {
        c[t + 1].resize(tree.levels[t + 1].size());
        for (std::size_t m = 0; m < tree.levels[t].size(); ++m)
            for (int k : tree.levels[t][m].children) {
                const auto& child = tree.levels[t + 1][k];
                double w = theta[t][m].dot(child.prices) / theta[t + 1][k].dot(child.prices);
                c[t + 1][k] = c[t][m] * w;
            }
    }
    return c;
}

inline TreeStrategy induce_tree_strategy(const ScenarioTree& tree, const TreeStrategy& theta) {
    auto c = weight_prefix(tree, theta);
    TreeStrategy out = theta;
    for (int t = 1; t < tree.depth; ++t)
        for (std::size_t m = 0; m < out[t].size(); ++m) out[t][m] *= c[t][m];
    return out;
}

inline TreeStrategy random_strategy(const ScenarioTree& tree, Rng& rng) {
    TreeStrategy theta(tree.depth);
    for (int t = 0; t < tree.depth; ++t) {
        theta[t].resize(tree.levels[t].size());
        for (auto& v : theta[t]) {
            v.resize(tree.n_assets);
            for (int i = 0; i < tree.n_assets; ++i) v(i) = std::exp(rng.normal() * 0.5);
        }
    }
    return theta;
}

} // namespace detail

// Corollary "full allocation": sum of contributions equals the risk-to-go at
// every node.
inline Check check_full_allocation(const ScenarioTree& tree, const TreeStrategy& theta,
                                   const std::vector<DistortionSpec>& specs,
                                   double abs_tol = 1e-10, double rel_tol = 1e-8) {
    auto res = risk_contributions_tree(tree, theta, specs);
    Check c{"full_allocation", true, 0.0, ""};
    for (int t = 0; t < tree.depth; ++t)
        for (std::size_t m = 0; m < res.rc[t].size(); ++m) {
            double err = std::fabs(res.rc[t][m].sum() - res.risk_to_go[t][m]);
            c.worst = std::max(c.worst, err);
            if (err > detail::tol_of(res.risk_to_go[t][m], abs_tol, rel_tol)) c.pass = false;
        }
    return c;
}

// Induced-strategy identities: R_t[vartheta] = c_t R_t[theta] and
// RC_t[vartheta] = c_t RC_t[theta] node by node.
inline Check check_induced_scaling(const ScenarioTree& tree, const TreeStrategy& theta,
                                   const std::vector<DistortionSpec>& specs, bool contributions,
                                   double abs_tol = 1e-10, double rel_tol = 1e-8) {
    auto induced = detail::induce_tree_strategy(tree, theta);
    auto c_pref = detail::weight_prefix(tree, theta);
    Check c{contributions ? "induced_rc_scaling" : "induced_risk_scaling", true, 0.0, ""};
    if (!contributions) {
        auto Rt = risk_to_go_tree(tree, theta, specs);
        auto Rv = risk_to_go_tree(tree, induced, specs);
        for (int t = 0; t < tree.depth; ++t)
            for (std::size_t m = 0; m < Rt[t].size(); ++m) {
                double want = c_pref[t][m] * Rt[t][m];
                double err = std::fabs(Rv[t][m] - want);
                c.worst = std::max(c.worst, err);
                if (err > detail::tol_of(want, abs_tol, rel_tol)) c.pass = false;
            }
    } else {
        auto rt = risk_contributions_tree(tree, theta, specs);
        auto rv = risk_contributions_tree(tree, induced, specs);
        for (int t = 0; t < tree.depth; ++t)
            for (std::size_t m = 0; m < rt.rc[t].size(); ++m)
                for (int i = 0; i < tree.n_assets; ++i) {
                    double want = c_pref[t][m] * rt.rc[t][m](i);
                    double err = std::fabs(rv.rc[t][m](i) - want);
                    c.worst = std::max(c.worst, err);
                    if (err > detail::tol_of(want, abs_tol, rel_tol)) c.pass = false;
                }
    }
    return c;
}

// Positive homogeneity of risk-to-go and contributions: scaling theta_t alone
// at one time multiplies R_t and RC_t there by the factor; scaling the whole
// tail does the same.
inline Check check_homogeneity(const ScenarioTree& tree, const TreeStrategy& theta,
                               const std::vector<DistortionSpec>& specs, std::uint64_t seed,
                               double abs_tol = 1e-10, double rel_tol = 1e-8) {
    Rng rng(seed);
    Check c{"positive_homogeneity", true, 0.0, ""};
    auto base = risk_contributions_tree(tree, theta, specs);
    for (int t = 0; t < tree.depth; ++t) {
        double a = std::exp(rng.normal() * 0.3);

        // scale only time t
        TreeStrategy one = theta;
        for (auto& v : one[t]) v *= a;
        auto r_one = risk_contributions_tree(tree, one, specs);

        // scale the whole tail t..T (a is F_t-measurable, constant here)
        TreeStrategy tail = theta;
        for (int s = t; s < tree.depth; ++s)
            for (auto& v : tail[s]) v *= a;
        auto r_tail = risk_contributions_tree(tree, tail, specs);

        for (std::size_t m = 0; m < base.rc[t].size(); ++m) {
            double want = a * base.risk_to_go[t][m];
            for (double got : {r_one.risk_to_go[t][m], r_tail.risk_to_go[t][m]}) {
                double err = std::fabs(got - want);
                c.worst = std::max(c.worst, err);
                if (err > detail::tol_of(want, abs_tol, rel_tol)) c.pass = false;
            }
            for (int i = 0; i < tree.n_assets; ++i) {
                double want_rc = a * base.rc[t][m](i);
                for (double got : {r_one.rc[t][m](i), r_tail.rc[t][m](i)}) {
                    double err = std::fabs(got - want_rc);
                    c.worst = std::max(c.worst, err);
                    if (err > detail::tol_of(want_rc, abs_tol, rel_tol)) c.pass = false;
                }
            }
        }
    }
    return c;
}

// Impact-of-decision cascade: the per-horizon terms sum back to RC_{t,i}.
inline Check check_decomposition(const ScenarioTree& tree, const TreeStrategy& theta,
                                 const std::vector<DistortionSpec>& specs,
                                 double abs_tol = 1e-10, double rel_tol = 1e-8) {
    auto res = risk_contributions_tree(tree, theta, specs);
    Check c{"decomposition_sum", true, 0.0, ""};
    for (int t = 0; t < tree.depth; ++t)
        for (std::size_t m = 0; m < res.rc[t].size(); ++m)
            for (int i = 0; i < tree.n_assets; ++i) {
                auto terms = rc_decomposition(tree, theta, specs, t, i, static_cast<int>(m));
                double s = 0.0;
                for (double v : terms) s += v;
                double err = std::fabs(s - res.rc[t][m](i));
                c.worst = std::max(c.worst, err);
                if (err > detail::tol_of(res.rc[t][m](i), abs_tol, rel_tol)) c.pass = false;
            }
    return c;
}

// Contributions as one-sided Gateaux derivatives: central role of the exact
// formula is cross-checked against finite differences with Richardson
// extrapolation in the direction e_i * theta_{t,i}.
inline Check check_gateaux(const ScenarioTree& tree, const TreeStrategy& theta,
                           const std::vector<DistortionSpec>& specs, double tol = 1e-6) {
    auto res = risk_contributions_tree(tree, theta, specs);
    Check c{"gateaux_fd", true, 0.0, ""};
    const double eps = 1e-5;
    for (int t = 0; t < tree.depth; ++t)
        for (std::size_t m = 0; m < res.rc[t].size(); ++m)
            for (int i = 0; i < tree.n_assets; ++i) {
                auto bump = [&](double e) {
                    TreeStrategy pert = theta;
                    pert[t][m](i) *= (1.0 + e);
                    auto R = risk_to_go_tree(tree, pert, specs);
                    return (R[t][m] - res.risk_to_go[t][m]) / e;
                };
                double d1 = bump(eps), d2 = bump(eps / 2.0);
                double richardson = 2.0 * d2 - d1;
                double err = std::fabs(richardson - res.rc[t][m](i));
                c.worst = std::max(c.worst, err);
                if (err > tol) c.pass = false;
            }
    return c;
}

// Budget transfer: the induced self-financing version of an exact risk
// budgeting strategy satisfies the same budgets.
inline Check check_budget_transfer(const ScenarioTree& tree, const RiskBudget& budget,
                                   const std::vector<DistortionSpec>& specs,
                                   double tol = 1e-6) {
    auto sol = oracle::solve_tree_risk_budgeting(tree, budget, specs);
    auto induced = detail::induce_tree_strategy(tree, sol.theta);
    auto res = risk_contributions_tree(tree, induced, specs);
    Check c{"budget_transfer", true, 0.0, ""};
    for (int t = 0; t < tree.depth; ++t)
        for (std::size_t m = 0; m < res.rc[t].size(); ++m)
            for (int i = 0; i < tree.n_assets; ++i) {
                double err = std::fabs(res.rc[t][m](i) -
                                       budget.b(t, i) * res.risk_to_go[t][m]);
                c.worst = std::max(c.worst, err);
                if (err > tol) c.pass = false;
            }
    return c;
}

// Oracle identities: risk-to-go 1 and contributions equal to budgets at
// every node; random restarts land on the same solution.
inline Check check_oracle_identities(const ScenarioTree& tree, const RiskBudget& budget,
                                     const std::vector<DistortionSpec>& specs,
                                     int restarts = 0, double tol = 1e-6,
                                     double restart_tol = 1e-5) {
    auto sol = oracle::solve_tree_risk_budgeting(tree, budget, specs);
    auto res = risk_contributions_tree(tree, sol.theta, specs);
    Check c{"oracle_identities", true, 0.0, ""};
    for (int t = 0; t < tree.depth; ++t)
        for (std::size_t m = 0; m < res.rc[t].size(); ++m) {
            double err_r = std::fabs(res.risk_to_go[t][m] - 1.0);
            c.worst = std::max(c.worst, err_r);
            if (err_r > tol) c.pass = false;
            for (int i = 0; i < tree.n_assets; ++i) {
                double err = std::fabs(res.rc[t][m](i) - budget.b(t, i));
                c.worst = std::max(c.worst, err);
                if (err > tol) c.pass = false;
            }
        }
    for (int r = 1; r <= restarts; ++r) {
        auto alt = oracle::solve_tree_risk_budgeting(tree, budget, specs, 1e-10,
                                                     0xBEEF + 977 * r);
        for (int t = 0; t < tree.depth; ++t)
            for (std::size_t m = 0; m < alt.theta[t].size(); ++m) {
                double err = (alt.theta[t][m] - sol.theta[t][m]).lpNorm<Eigen::Infinity>();
                c.worst = std::max(c.worst, err);
                if (err > restart_tol) c.pass = false;
            }
    }
    return c;
}

// The whole exact-identity suite on one tree with a random adapted strategy.
inline Report run_tree_suite(const ScenarioTree& tree, const std::vector<DistortionSpec>& specs,
                             const RiskBudget& budget, std::uint64_t seed,
                             bool with_oracle = true) {
    Rng rng(seed);
    auto theta = detail::random_strategy(tree, rng);
    Report rep;
    rep.checks.push_back(check_full_allocation(tree, theta, specs));
    rep.checks.push_back(check_induced_scaling(tree, theta, specs, false));
    rep.checks.push_back(check_induced_scaling(tree, theta, specs, true));
    rep.checks.push_back(check_homogeneity(tree, theta, specs, seed ^ 0xA5A5));
    rep.checks.push_back(check_decomposition(tree, theta, specs));
    rep.checks.push_back(check_gateaux(tree, theta, specs));
    if (with_oracle) {
        rep.checks.push_back(check_budget_transfer(tree, budget, specs));
        rep.checks.push_back(check_oracle_identities(tree, budget, specs, 2));
    }
    return rep;
}

inline std::string format_report(const Report& rep) {
    std::ostringstream os;
    for (const auto& c : rep.checks)
        os << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  (worst deviation "
           << c.worst << ")" << (c.detail.empty() ? "" : "  " + c.detail) << "\n";
    return os.str();
}

} // namespace drb::verify
