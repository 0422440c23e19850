#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/mathutil.hpp"

namespace drb {

// Finite-branching discrete market. Level 0 holds the root, level depth the
// terminal nodes; decision times are t = 0..depth-1. Everything downstream
// (conditional expectations, distortion measures, risk contributions) can be
// computed exactly by enumeration on this structure.
class ScenarioTree {
  public:
    struct Node {
        Eigen::VectorXd prices;   // per asset, > 0
        double prob = 1.0;        // branch probability from the parent (root: 1)
        int parent = -1;
        std::vector<int> children; // indices into the next level
    };

    int depth = 0;    // number of branching steps, T+1
    int n_assets = 0;
    std::vector<std::vector<Node>> levels; // levels[0..depth]

    const Node& node(int level, int idx) const { return levels[level][idx]; }
    int n_nodes(int level) const { return static_cast<int>(levels[level].size()); }

    std::size_t n_paths() const {
        return levels.empty() ? 0 : levels.back().size();
    }

    void validate() const {
        if (depth < 1 || static_cast<int>(levels.size()) != depth + 1)
            throw std::invalid_argument("ScenarioTree: level count must be depth+1");
        for (int t = 0; t <= depth; ++t) {
            for (std::size_t m = 0; m < levels[t].size(); ++m) {
                const Node& nd = levels[t][m];
                if (nd.prices.size() != n_assets || (nd.prices.array() <= 0.0).any())
                    throw std::invalid_argument("ScenarioTree: nonpositive price at level " +
                                                std::to_string(t) + " node " + std::to_string(m));
                if (!(nd.prob > 0.0))
                    throw std::invalid_argument("ScenarioTree: nonpositive probability at level " +
                                                std::to_string(t) + " node " + std::to_string(m));
                if (t < depth) {
                    if (nd.children.size() < 2)
                        throw std::invalid_argument(
                            "ScenarioTree: node needs >= 2 branches at level " +
                            std::to_string(t) + " node " + std::to_string(m));
                    double s = 0.0;
                    for (int c : nd.children) s += levels[t + 1][c].prob;
                    if (std::fabs(s - 1.0) > 1e-12)
                        throw std::invalid_argument(
                            "ScenarioTree: branch probabilities do not sum to 1 at level " +
                            std::to_string(t) + " node " + std::to_string(m));
                } else if (!nd.children.empty()) {
                    throw std::invalid_argument("ScenarioTree: terminal node has children");
                }
            }
        }
    }

    // Unconditional probability of reaching a node.
    double path_prob(int level, int idx) const {
        double pr = 1.0;
        int t = level, m = idx;
        while (t > 0) {
            pr *= levels[t][m].prob;
            m = levels[t][m].parent;
            --t;
        }
        return pr;
    }
};

struct TreeSpec {
    int depth = 1;
    int n_assets = 1;
    std::vector<int> branching;            // per level, size depth
    Eigen::VectorXd x0;                    // initial prices (default 1)

    // i.i.d. lognormal gross returns per branch: price_child = price_parent *
    // exp(ret_mu + ret_sigma * Z). Used when no explicit tables are given.
    double ret_mu = 0.0;
    double ret_sigma = 0.2;
    bool random_probs = false;             // else equiprobable branches

    // When set, branch 0 of every node is a joint drawdown (all gross returns
    // in [0.65, 0.75]) with probability at least 0.25, and the remaining
    // branches keep gross returns inside [0.9, 1.15]. This makes the dynamic
    // risk-budgeting objective bounded below on random trees for the mean-ES
    // distortions used here (the drawdown atom dominates the distorted tail
    // along every nonnegative direction), so the exact solvers always admit
    // an optimum.
    bool crash_branch = false;

    // Optional explicit tables (unit tests): per level t (0-based, to level
    // t+1), per branch b, per asset a, the gross return factor, and per
    // branch the probability. Indexed [t][node*K+b].
    std::vector<std::vector<Eigen::VectorXd>> explicit_returns;
    std::vector<std::vector<double>> explicit_probs;
};

inline ScenarioTree build_tree(const TreeSpec& spec, std::uint64_t seed) {
    if (spec.depth < 1 || spec.n_assets < 1)
        throw std::invalid_argument("build_tree: depth and n_assets must be >= 1");
    if (static_cast<int>(spec.branching.size()) != spec.depth)
        throw std::invalid_argument("build_tree: branching must have `depth` entries");

    std::size_t paths = 1;
    for (int k : spec.branching) {
        if (k < 2) throw std::invalid_argument("build_tree: every node needs >= 2 branches");
        paths *= static_cast<std::size_t>(k);
        if (paths > 1000000)
            throw std::invalid_argument("build_tree: total paths exceed 1e6 enumeration cap");
    }

    ScenarioTree tree;
    tree.depth = spec.depth;
    tree.n_assets = spec.n_assets;
    tree.levels.resize(spec.depth + 1);

    ScenarioTree::Node root;
    root.prices = spec.x0.size() ? spec.x0 : Eigen::VectorXd::Ones(spec.n_assets);
    tree.levels[0].push_back(root);

    Rng rng(seed);
    for (int t = 0; t < spec.depth; ++t) {
        int K = spec.branching[t];
        auto& parents = tree.levels[t];
        auto& next = tree.levels[t + 1];
        for (std::size_t m = 0; m < parents.size(); ++m) {
            std::vector<double> probs(K);
            if (!spec.explicit_probs.empty()) {
                double s = 0.0;
                for (int b = 0; b < K; ++b) {
                    probs[b] = spec.explicit_probs[t][m * K + b];
                    if (probs[b] <= 0.0)
                        throw std::invalid_argument("build_tree: branch probs must be > 0");
                    s += probs[b];
                }
                if (std::fabs(s - 1.0) > 1e-9)
                    throw std::invalid_argument("build_tree: branch probs must sum to 1");
            } else if (spec.crash_branch) {
                double pc = 0.25 + 0.15 * rng.uniform();
                double s = 0.0;
                for (int b = 1; b < K; ++b) {
                    probs[b] = spec.random_probs ? 0.2 + rng.uniform() : 1.0;
                    s += probs[b];
                }
                probs[0] = pc;
                for (int b = 1; b < K; ++b) probs[b] *= (1.0 - pc) / s;
            } else if (spec.random_probs) {
                double s = 0.0;
                for (int b = 0; b < K; ++b) {
                    probs[b] = 0.2 + rng.uniform();
                    s += probs[b];
                }
                for (int b = 0; b < K; ++b) probs[b] /= s;
            } else {
                std::fill(probs.begin(), probs.end(), 1.0 / K);
            }
            // exact renormalization of the last branch
            double s = 0.0;
            for (int b = 0; b + 1 < K; ++b) s += probs[b];
            probs[K - 1] = 1.0 - s;

            for (int b = 0; b < K; ++b) {
                ScenarioTree::Node child;
                child.parent = static_cast<int>(m);
                child.prob = probs[b];
                if (!spec.explicit_returns.empty()) {
                    child.prices =
                        parents[m].prices.cwiseProduct(spec.explicit_returns[t][m * K + b]);
                } else if (spec.crash_branch) {
                    child.prices = parents[m].prices;
                    for (int a = 0; a < spec.n_assets; ++a)
                        child.prices[a] *= b == 0 ? 0.65 + 0.10 * rng.uniform()
                                                  : 0.90 + 0.25 * rng.uniform();
                } else {
                    child.prices = parents[m].prices;
                    for (int a = 0; a < spec.n_assets; ++a)
                        child.prices[a] *=
                            std::exp(spec.ret_mu + spec.ret_sigma * rng.normal());
                }
                parents[m].children.push_back(static_cast<int>(next.size()));
                next.push_back(std::move(child));
            }
        }
    }
    tree.validate();
    return tree;
}

// Per-branch (negative) price increment dX = -(X_child - X_parent), indexed
// [level t][child idx at level t+1].
inline std::vector<std::vector<Eigen::VectorXd>> negative_increments(const ScenarioTree& tree) {
    std::vector<std::vector<Eigen::VectorXd>> inc(tree.depth);
    for (int t = 0; t < tree.depth; ++t) {
        inc[t].resize(tree.levels[t + 1].size());
        for (std::size_t c = 0; c < tree.levels[t + 1].size(); ++c) {
            const auto& child = tree.levels[t + 1][c];
            inc[t][c] = -(child.prices - tree.levels[t][child.parent].prices);
        }
    }
    return inc;
}

// JSON schema: { "n_assets": n, "levels": [ [ {"prices": [...], "prob": q,
// "children": [...]}, ... ], ... ] }
inline nlohmann::json tree_to_json(const ScenarioTree& tree) {
    nlohmann::json j;
    j["n_assets"] = tree.n_assets;
    j["levels"] = nlohmann::json::array();
    for (const auto& level : tree.levels) {
        nlohmann::json jl = nlohmann::json::array();
        for (const auto& nd : level) {
            nlohmann::json jn;
            jn["prices"] = std::vector<double>(nd.prices.data(), nd.prices.data() + nd.prices.size());
            jn["prob"] = nd.prob;
            jn["children"] = nd.children;
            jl.push_back(std::move(jn));
        }
        j["levels"].push_back(std::move(jl));
    }
    return j;
}

inline ScenarioTree tree_from_json(const nlohmann::json& j) {
    ScenarioTree tree;
    tree.n_assets = j.at("n_assets").get<int>();
    const auto& jlevels = j.at("levels");
    tree.depth = static_cast<int>(jlevels.size()) - 1;
    tree.levels.resize(jlevels.size());
    for (std::size_t t = 0; t < jlevels.size(); ++t) {
        for (const auto& jn : jlevels[t]) {
            ScenarioTree::Node nd;
            auto pv = jn.at("prices").get<std::vector<double>>();
            nd.prices = Eigen::Map<const Eigen::VectorXd>(pv.data(), pv.size());
            nd.prob = jn.at("prob").get<double>();
            nd.children = jn.at("children").get<std::vector<int>>();
            tree.levels[t].push_back(std::move(nd));
        }
    }
    // recover parent links
    for (std::size_t t = 0; t + 1 < tree.levels.size(); ++t)
        for (std::size_t m = 0; m < tree.levels[t].size(); ++m)
            for (int c : tree.levels[t][m].children)
                tree.levels[t + 1][c].parent = static_cast<int>(m);
    tree.validate();
    return tree;
}

} // namespace drb
