#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "drb/risk.hpp"
#include "drb/tree.hpp"

namespace drb {

// ---------------------------------------------------------------------------
// Path-tensor representation (Monte Carlo side).
//
// Prices: prices[t] is (paths x assets), t = 0..T+1. A strategy has decision
// times t = 0..T, positions theta[t] (paths x assets), strictly positive.
// ---------------------------------------------------------------------------

struct StrategyTensor {
    std::vector<Eigen::MatrixXd> theta; // [t](path, asset), t = 0..T
    double floor = 0.0;                 // admissibility floor c, metadata

    int horizon() const { return static_cast<int>(theta.size()); } // T+1 entries

    void validate() const {
        if (theta.empty()) throw std::invalid_argument("StrategyTensor: empty");
        for (const auto& m : theta)
            if ((m.array() <= floor).any())
                throw std::invalid_argument("StrategyTensor: theta must exceed floor");
    }
};

struct RiskBudget {
    Eigen::MatrixXd b; // (T+1, assets), rows sum to 1, entries > 0

    void validate() const {
        if ((b.array() <= 0.0).any())
            throw std::invalid_argument("RiskBudget: entries must be positive");
        for (int t = 0; t < b.rows(); ++t)
            if (std::fabs(b.row(t).sum() - 1.0) > 1e-12)
                throw std::invalid_argument("RiskBudget: row " + std::to_string(t) +
                                            " does not sum to 1");
    }

    static RiskBudget constant(int horizon, const Eigen::VectorXd& row) {
        RiskBudget rb;
        rb.b = row.transpose().replicate(horizon, 1);
        rb.validate();
        return rb;
    }
};

// w_t = theta_t' X_{t+1} / theta_{t+1}' X_{t+1}, t = 0..T-1.
inline std::vector<Eigen::VectorXd> weight_process(const std::vector<Eigen::MatrixXd>& theta,
                                                   const std::vector<Eigen::MatrixXd>& prices) {
    const int T1 = static_cast<int>(theta.size());
    if (static_cast<int>(prices.size()) < T1 + 1)
        throw std::invalid_argument("weight_process: need prices up to time T+1");
    std::vector<Eigen::VectorXd> w(T1 - 1);
    for (int t = 0; t + 1 < T1; ++t) {
        Eigen::ArrayXd num = (theta[t].array() * prices[t + 1].array()).rowwise().sum();
        Eigen::ArrayXd den = (theta[t + 1].array() * prices[t + 1].array()).rowwise().sum();
        if ((den <= 0.0).any())
            throw std::logic_error("weight_process: nonpositive portfolio value");
        w[t] = (num / den).matrix();
    }
    return w;
}

// vartheta_t = (prod_{s<t} w_s) theta_t; self-financing by construction.
inline StrategyTensor induce_self_financing(const StrategyTensor& strat,
                                            const std::vector<Eigen::MatrixXd>& prices) {
    auto w = weight_process(strat.theta, prices);
    StrategyTensor out;
    out.theta.resize(strat.theta.size());
    out.theta[0] = strat.theta[0];
    Eigen::ArrayXd cum = Eigen::ArrayXd::Ones(strat.theta[0].rows());
    for (std::size_t t = 1; t < strat.theta.size(); ++t) {
        cum *= w[t - 1].array();
        out.theta[t] = strat.theta[t].array().colwise() * cum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adapted strategies on scenario trees.
// ---------------------------------------------------------------------------

// theta[t][node] for t = 0..T (T = tree.depth - 1), one vector per node.
using TreeStrategy = std::vector<std::vector<Eigen::VectorXd>>;

inline void check_tree_strategy(const ScenarioTree& tree, const TreeStrategy& theta) {
    if (static_cast<int>(theta.size()) != tree.depth)
        throw std::invalid_argument("TreeStrategy: need depth decision layers");
    for (int t = 0; t < tree.depth; ++t) {
        if (theta[t].size() != tree.levels[t].size())
            throw std::invalid_argument("TreeStrategy: node count mismatch at t=" +
                                        std::to_string(t));
        for (const auto& v : theta[t])
            if (v.size() != tree.n_assets || (v.array() <= 0.0).any())
                throw std::invalid_argument("TreeStrategy: positions must be positive");
    }
}

// a is one positive factor per decision time, applied from `from_t` on a
// per-time basis (scalar case of the adapted scaling in Props. 2-3).
inline TreeStrategy scale_strategy(const TreeStrategy& theta, const std::vector<double>& a) {
    if (a.size() != theta.size())
        throw std::invalid_argument("scale_strategy: one factor per decision time");
    for (double f : a)
        if (!(f > 0.0)) throw std::invalid_argument("scale_strategy: factors must be positive");
    TreeStrategy out = theta;
    for (std::size_t t = 0; t < out.size(); ++t)
        for (auto& v : out[t]) v *= a[t];
    return out;
}

namespace detail {

// Child-branch values of g_t = theta_t' dX_t + w_t R_{t+1} at one node.
inline DiscreteDistribution node_g_distribution(const ScenarioTree& tree,
                                                const TreeStrategy& theta, int t, int m,
                                                const std::vector<double>& R_next) {
    const auto& nd = tree.levels[t][m];
    DiscreteDistribution d;
    d.values.reserve(nd.children.size());
    d.probs.reserve(nd.children.size());
    const Eigen::VectorXd& pos = theta[t][m];
    for (int c : nd.children) {
        const auto& child = tree.levels[t + 1][c];
        double g = pos.dot(tree.levels[t][m].prices - child.prices); // theta' dX
        if (t + 1 < tree.depth) {
            double w = pos.dot(child.prices) / theta[t + 1][c].dot(child.prices);
            g += w * R_next[c];
        }
        d.values.push_back(g);
        d.probs.push_back(child.prob);
    }
    return d;
}

} // namespace detail

// Backward induction of Eq.-style risk-to-go on the tree. Returns R[t][node]
// for t = 0..depth (terminal layer identically zero). A single spec is
// broadcast over time via the specs vector.
inline std::vector<std::vector<double>> risk_to_go_tree(const ScenarioTree& tree,
                                                        const TreeStrategy& theta,
                                                        const std::vector<DistortionSpec>& specs) {
    check_tree_strategy(tree, theta);
    if (static_cast<int>(specs.size()) != tree.depth)
        throw std::invalid_argument("risk_to_go_tree: one spec per decision time");
    std::vector<std::vector<double>> R(tree.depth + 1);
    R[tree.depth].assign(tree.levels[tree.depth].size(), 0.0);
    for (int t = tree.depth - 1; t >= 0; --t) {
        R[t].resize(tree.levels[t].size());
        for (std::size_t m = 0; m < tree.levels[t].size(); ++m) {
            auto d = detail::node_g_distribution(tree, theta, t, static_cast<int>(m), R[t + 1]);
            R[t][m] = distortion_exact(specs[t], d);
        }
    }
    return R;
}

inline std::vector<DistortionSpec> broadcast_spec(const DistortionSpec& spec, int horizon) {
    return std::vector<DistortionSpec>(horizon, spec);
}

struct TreeRiskResult {
    std::vector<std::vector<double>> risk_to_go;        // [t][node], t = 0..depth
    std::vector<std::vector<Eigen::VectorXd>> rc;       // [t][node], per asset
    std::vector<std::vector<std::vector<double>>> gamma; // [t][node][branch] atom weights
};

// Thm-3 style exact risk contributions: RC_{t,i} is the probability-weighted
// branch sum of theta_{t,i} (dX_{t,i} + X_{t+1,i}/(theta_{t+1}'X_{t+1}) R_{t+1})
// gammabar(branch), with the recursion term dropped at t = T.
inline TreeRiskResult risk_contributions_tree(const ScenarioTree& tree, const TreeStrategy& theta,
                                              const std::vector<DistortionSpec>& specs) {
    check_tree_strategy(tree, theta);
    TreeRiskResult res;
    res.risk_to_go = risk_to_go_tree(tree, theta, specs);
    res.rc.resize(tree.depth);
    res.gamma.resize(tree.depth);
    for (int t = 0; t < tree.depth; ++t) {
        res.rc[t].resize(tree.levels[t].size());
        res.gamma[t].resize(tree.levels[t].size());
        for (std::size_t m = 0; m < tree.levels[t].size(); ++m) {
            const auto& nd = tree.levels[t][m];
            auto d = detail::node_g_distribution(tree, theta, t, static_cast<int>(m),
                                                 res.risk_to_go[t + 1]);
            auto gbar = atom_weights(specs[t], d);
            res.gamma[t][m] = gbar;
            Eigen::VectorXd rc = Eigen::VectorXd::Zero(tree.n_assets);
            const Eigen::VectorXd& pos = theta[t][m];
            for (std::size_t b = 0; b < nd.children.size(); ++b) {
                int c = nd.children[b];
                const auto& child = tree.levels[t + 1][c];
                Eigen::VectorXd contrib = nd.prices - child.prices; // dX
                if (t + 1 < tree.depth) {
                    double denom = theta[t + 1][c].dot(child.prices);
                    contrib += child.prices * (res.risk_to_go[t + 1][c] / denom);
                }
                rc += child.prob * gbar[b] * pos.cwiseProduct(contrib);
            }
            res.rc[t][m] = rc;
        }
    }
    return res;
}

// Impact-of-decision cascade (Prop.-4 style): for the node `m` at time t and
// asset i, the first term is the time-t impact and the k-th term the effect
// at time t+k; the terms sum to RC_{t,i} exactly.
inline std::vector<double> rc_decomposition(const ScenarioTree& tree, const TreeStrategy& theta,
                                            const std::vector<DistortionSpec>& specs, int t, int i,
                                            int m) {
    check_tree_strategy(tree, theta);
    auto risk = risk_contributions_tree(tree, theta, specs);
    const int T = tree.depth - 1;
    if (t < 0 || t > T || i < 0 || i >= tree.n_assets)
        throw std::invalid_argument("rc_decomposition: index out of range");

    std::vector<double> terms(T - t + 1, 0.0);

    // term 0: E[theta_{t,i} dX_{t,i} Gamma_t | node]
    const auto& nd = tree.levels[t][m];
    for (std::size_t b = 0; b < nd.children.size(); ++b) {
        int c = nd.children[b];
        const auto& child = tree.levels[t + 1][c];
        double dx = nd.prices[i] - child.prices[i];
        terms[0] += child.prob * theta[t][m][i] * dx * risk.gamma[t][m][b];
    }

    // terms k >= 1: enumerate paths node -> level t+k+1, accumulating branch
    // probabilities, Gamma factors, and the weight-process product.
    struct Walker {
        const ScenarioTree& tree;
        const TreeStrategy& theta;
        const TreeRiskResult& risk;
        int i;

        // At entry: `m` is a node at level s (s > t), reached with probability
        // `prob`, carrying prefactor `pre` = theta_{t,i} X_{t+1,i}/(theta_{t+1}'X_{t+1})
        // * w_{t+1}..w_{s-1} and accumulated Gamma product up to level s-1.
        void walk(int s, int m, double prob, double pre, double gammas, int k_target,
                  double& acc) {
            const auto& nd = tree.levels[s][m];
            for (std::size_t b = 0; b < nd.children.size(); ++b) {
                int c = nd.children[b];
                const auto& child = tree.levels[s + 1][c];
                double g = gammas * risk.gamma[s][m][b];
                double pr = prob * child.prob;
                if (s == k_target) {
                    double pnl = theta[s][m].dot(nd.prices - child.prices);
                    acc += pr * pre * pnl * g;
                } else {
                    double w = theta[s][m].dot(child.prices) / theta[s + 1][c].dot(child.prices);
                    walk(s + 1, c, pr, pre * w, g, k_target, acc);
                }
            }
        }
    };

    for (int k = 1; k <= T - t; ++k) {
        double acc = 0.0;
        for (std::size_t b = 0; b < nd.children.size(); ++b) {
            int c = nd.children[b];
            const auto& child = tree.levels[t + 1][c];
            double pre = theta[t][m][i] * child.prices[i] / theta[t + 1][c].dot(child.prices);
            Walker{tree, theta, risk, i}.walk(t + 1, c, child.prob, pre,
                                              risk.gamma[t][m][b], t + k, acc);
        }
        terms[k] = acc;
    }
    return terms;
}

// ---------------------------------------------------------------------------
// Tree <-> path enumeration helpers (used by oracles and tests).
// ---------------------------------------------------------------------------

struct EnumeratedPaths {
    std::vector<Eigen::MatrixXd> prices; // [time](path, asset)
    std::vector<double> probs;           // per path
    std::vector<std::vector<int>> nodes; // [path][time] node index per level
};

inline EnumeratedPaths enumerate_tree_paths(const ScenarioTree& tree) {
    EnumeratedPaths out;
    std::vector<std::vector<int>> stubs = {{0}};
    for (int t = 1; t <= tree.depth; ++t) {
        std::vector<std::vector<int>> next;
        for (auto& pfx : stubs)
            for (int c : tree.levels[t - 1][pfx.back()].children) {
                auto np = pfx;
                np.push_back(c);
                next.push_back(std::move(np));
            }
        stubs = std::move(next);
    }
    const std::size_t P = stubs.size();
    out.nodes = std::move(stubs);
    out.probs.resize(P);
    out.prices.assign(tree.depth + 1, Eigen::MatrixXd(P, tree.n_assets));
    for (std::size_t p = 0; p < P; ++p) {
        double pr = 1.0;
        for (int t = 0; t <= tree.depth; ++t) {
            const auto& nd = tree.levels[t][out.nodes[p][t]];
            out.prices[t].row(p) = nd.prices.transpose();
            if (t > 0) pr *= nd.prob;
        }
        out.probs[p] = pr;
    }
    return out;
}

inline StrategyTensor tree_strategy_to_paths(const ScenarioTree& tree, const TreeStrategy& theta,
                                             const EnumeratedPaths& paths) {
    StrategyTensor out;
    out.theta.assign(tree.depth, Eigen::MatrixXd(paths.probs.size(), tree.n_assets));
    for (std::size_t p = 0; p < paths.probs.size(); ++p)
        for (int t = 0; t < tree.depth; ++t)
            out.theta[t].row(p) = theta[t][paths.nodes[p][t]].transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo risk-to-go plumbing: evaluates a learned critic along simulated
// paths. The critic maps a time index to per-path risk-to-go values. T = 0
// needs no critic (single-period empirical estimate).
// ---------------------------------------------------------------------------

using CriticFn = std::function<Eigen::VectorXd(int t)>;

inline std::vector<Eigen::VectorXd> risk_to_go_mc(const std::vector<Eigen::MatrixXd>& prices,
                                                  const StrategyTensor& strat,
                                                  const std::vector<DistortionSpec>& specs,
                                                  const CriticFn& critic) {
    const int T1 = strat.horizon();
    std::vector<Eigen::VectorXd> R(T1);
    if (T1 == 1) {
        Eigen::ArrayXd g =
            (strat.theta[0].array() * (prices[0] - prices[1]).array()).rowwise().sum();
        std::vector<double> sample(g.data(), g.data() + g.size());
        double r0 = distortion_empirical(specs[0], sample);
        R[0] = Eigen::VectorXd::Constant(g.size(), r0);
        return R;
    }
    if (!critic) throw std::invalid_argument("risk_to_go_mc: critic required for T > 0");
    for (int t = 0; t < T1; ++t) R[t] = critic(t);
    return R;
}

} // namespace drb
