#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/market.hpp"
#include "drb/scoring.hpp"
#include "drb/trainer.hpp"
#include "drb/tree.hpp"

namespace drb::config {

using nlohmann::json;

// Schema violations carry the JSON pointer of the offending element.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& pointer, const std::string& what)
        : std::runtime_error("config error at " + pointer + ": " + what) {}
};

namespace detail {

inline const json& require(const json& j, const std::string& ptr_prefix,
                           const std::string& key) {
    if (!j.contains(key)) throw ConfigError(ptr_prefix + "/" + key, "missing required key");
    return j.at(key);
}

template <typename T>
T get(const json& j, const std::string& ptr_prefix, const std::string& key) {
    try {
        return require(j, ptr_prefix, key).get<T>();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(ptr_prefix + "/" + key, e.what());
    }
}

template <typename T>
T get_or(const json& j, const std::string& ptr_prefix, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return get<T>(j, ptr_prefix, key);
}

inline Eigen::VectorXd vec(const json& j, const std::string& ptr) {
    if (!j.is_array()) throw ConfigError(ptr, "expected an array of numbers");
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(ptr + "/" + std::to_string(i), "not a number");
        v(i) = j[i].get<double>();
    }
    return v;
}

inline Eigen::MatrixXd mat(const json& j, const std::string& ptr) {
    if (!j.is_array() || j.empty()) throw ConfigError(ptr, "expected an array of rows");
    Eigen::MatrixXd m;
    for (std::size_t r = 0; r < j.size(); ++r) {
        Eigen::VectorXd row = vec(j[r], ptr + "/" + std::to_string(r));
        if (r == 0) m.resize(j.size(), row.size());
        if (row.size() != m.cols())
            throw ConfigError(ptr + "/" + std::to_string(r), "ragged matrix rows");
        m.row(r) = row.transpose();
    }
    return m;
}

} // namespace detail

inline MarketParams parse_market(const json& j, const std::string& ptr = "/market") {
    if (detail::get_or(j, ptr, "default", false)) {
        MarketParams p = default_market_params();
        p.horizon_decisions = detail::get_or(j, ptr, "horizon_decisions", p.horizon_decisions);
        return p;
    }
    MarketParams p;
    p.n_assets = detail::get<int>(j, ptr, "n_assets");
    p.mu = detail::vec(detail::require(j, ptr, "mu"), ptr + "/mu");
    p.kappa = detail::vec(detail::require(j, ptr, "kappa"), ptr + "/kappa");
    p.theta_bar = detail::vec(detail::require(j, ptr, "theta_bar"), ptr + "/theta_bar");
    p.eta = detail::vec(detail::require(j, ptr, "eta"), ptr + "/eta");
    if (j.contains("corr")) {
        p.corr = detail::mat(j.at("corr"), ptr + "/corr");
    } else {
        // shorthand: constant price-price correlation and diagonal price-vol
        double pp = detail::get_or(j, ptr, "corr_price_price", 0.0);
        double pv = detail::get_or(j, ptr, "corr_price_var", 0.0);
        int n = p.n_assets;
        p.corr = Eigen::MatrixXd::Identity(2 * n, 2 * n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k)
                if (i != k) p.corr(i, k) = pp;
        for (int i = 0; i < n; ++i) {
            p.corr(i, n + i) = pv;
            p.corr(n + i, i) = pv;
        }
    }
    p.t_dof = detail::get_or(j, ptr, "t_dof", p.t_dof);
    p.dt = detail::get_or(j, ptr, "dt", p.dt);
    p.substeps_per_decision =
        detail::get_or(j, ptr, "substeps_per_decision", p.substeps_per_decision);
    p.horizon_decisions = detail::get_or(j, ptr, "horizon_decisions", p.horizon_decisions);
    if (j.contains("v0")) p.v0 = detail::vec(j.at("v0"), ptr + "/v0");
    if (j.contains("x0")) p.x0 = detail::vec(j.at("x0"), ptr + "/x0");
    try {
        p.validate();
    } catch (const std::exception& e) {
        throw ConfigError(ptr, e.what());
    }
    return p;
}

inline ScenarioTree parse_tree(const json& j, const std::string& ptr = "/tree") {
    try {
        if (j.contains("file")) {
            std::ifstream f(j.at("file").get<std::string>());
            if (!f) throw ConfigError(ptr + "/file", "cannot open tree file");
            return tree_from_json(json::parse(f));
        }
        if (j.contains("levels")) return tree_from_json(j);
        TreeSpec spec;
        spec.depth = detail::get<int>(j, ptr, "depth");
        spec.n_assets = detail::get<int>(j, ptr, "n_assets");
        spec.branching = detail::get_or(j, ptr, "branching", std::vector<int>{});
        if (spec.branching.empty())
            spec.branching.assign(spec.depth, detail::get_or(j, ptr, "branch", 2));
        spec.ret_mu = detail::get_or(j, ptr, "ret_mu", spec.ret_mu);
        spec.ret_sigma = detail::get_or(j, ptr, "ret_sigma", spec.ret_sigma);
        spec.random_probs = detail::get_or(j, ptr, "random_probs", spec.random_probs);
        spec.crash_branch = detail::get_or(j, ptr, "crash_branch", spec.crash_branch);
        if (j.contains("x0")) spec.x0 = detail::vec(j.at("x0"), ptr + "/x0");
        return build_tree(spec, detail::get_or<std::uint64_t>(j, ptr, "seed", 1));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(ptr, e.what());
    }
}

inline std::vector<DistortionSpec> parse_risk(const json& j, int horizon,
                                              const std::string& ptr = "/risk") {
    DistortionSpec base;
    base.p = detail::get_or(j, ptr, "p", base.p);
    base.alpha = detail::get_or(j, ptr, "alpha", base.alpha);
    try {
        base.validate();
    } catch (const std::exception& e) {
        throw ConfigError(ptr, e.what());
    }
    return broadcast_spec(base, horizon);
}

inline RiskBudget parse_budget(const json& j, int horizon, int n_assets,
                               const std::string& ptr = "/budget") {
    try {
        if (j.contains("table")) {
            RiskBudget rb;
            rb.b = detail::mat(j.at("table"), ptr + "/table");
            rb.validate();
            if (rb.b.rows() != horizon || rb.b.cols() != n_assets)
                throw ConfigError(ptr + "/table", "budget table shape mismatch");
            return rb;
        }
        Eigen::VectorXd row =
            j.contains("row") ? detail::vec(j.at("row"), ptr + "/row")
                              : Eigen::VectorXd::Constant(n_assets, 1.0 / n_assets);
        if (row.size() != n_assets) throw ConfigError(ptr + "/row", "budget row length mismatch");
        return RiskBudget::constant(horizon, row);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(ptr, e.what());
    }
}

inline ScoreConfig parse_scoring(const json& j, const std::string& ptr = "/scoring") {
    ScoreConfig sc;
    sc.D = detail::get_or(j, ptr, "D", sc.D);
    sc.z_lo = detail::get_or(j, ptr, "z_lo", sc.z_lo);
    sc.z_hi = detail::get_or(j, ptr, "z_hi", sc.z_hi);
    sc.L = detail::get_or(j, ptr, "L", sc.L);
    sc.penalty_weight = detail::get_or(j, ptr, "penalty_weight", sc.penalty_weight);
    try {
        sc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(ptr, e.what());
    }
    return sc;
}

inline train::TrainConfig parse_train_config(const json& root) {
    train::TrainConfig cfg;
    if (root.contains("market") == root.contains("tree"))
        throw ConfigError("", "exactly one of /market or /tree is required");
    if (root.contains("market")) {
        cfg.market = parse_market(root.at("market"));
        cfg.n_assets = cfg.market->n_assets;
        cfg.horizon = cfg.market->horizon_decisions;
    } else {
        cfg.tree_market = parse_tree(root.at("tree"));
        cfg.n_assets = cfg.tree_market->n_assets;
        cfg.horizon = cfg.tree_market->depth;
    }
    cfg.specs = parse_risk(root.value("risk", json::object()), cfg.horizon);
    cfg.budget =
        parse_budget(root.value("budget", json::object()), cfg.horizon, cfg.n_assets);
    cfg.score = parse_scoring(root.value("scoring", json::object()));
    // Explicit D or grid limits switch off the batch calibration of the score.
    if (root.contains("scoring")) {
        const json& sj = root.at("scoring");
        if (sj.contains("D") || sj.contains("z_lo") || sj.contains("z_hi"))
            cfg.auto_score = false;
    }

    const json& net = root.value("network", json::object());
    cfg.gru_layers = detail::get_or(net, "/network", "gru_layers", cfg.gru_layers);
    cfg.gru_hidden = detail::get_or(net, "/network", "gru_hidden", cfg.gru_hidden);
    cfg.ffn_layers = detail::get_or(net, "/network", "ffn_layers", cfg.ffn_layers);
    cfg.ffn_width = detail::get_or(net, "/network", "ffn_width", cfg.ffn_width);

    const json& tr = root.value("training", json::object());
    const std::string p = "/training";
    double lr = detail::get_or(tr, p, "lr", 1e-3);
    cfg.lr_actor = detail::get_or(tr, p, "lr_actor", lr);
    cfg.lr_critic = detail::get_or(tr, p, "lr_critic", lr);
    cfg.lr_cdf = detail::get_or(tr, p, "lr_cdf", lr);
    cfg.weight_decay = detail::get_or(tr, p, "weight_decay", cfg.weight_decay);
    cfg.tau = detail::get_or(tr, p, "tau", cfg.tau);
    cfg.m_r = detail::get_or(tr, p, "m_r", cfg.m_r);
    cfg.m_f = detail::get_or(tr, p, "m_f", cfg.m_f);
    cfg.batch = detail::get_or(tr, p, "batch", cfg.batch);
    cfg.iters = detail::get_or(tr, p, "iters", cfg.iters);
    cfg.sched_factor = detail::get_or(tr, p, "sched_factor", cfg.sched_factor);
    cfg.sched_every = detail::get_or(tr, p, "sched_every", cfg.sched_every);
    cfg.seed = detail::get_or<std::uint64_t>(tr, p, "seed", cfg.seed);
    cfg.progress_every = detail::get_or(tr, p, "progress_every", cfg.progress_every);
    std::string sweep = detail::get_or<std::string>(tr, p, "sweep", "joint");
    if (sweep == "backward")
        cfg.sweep_backward = true;
    else if (sweep != "joint")
        throw ConfigError("/training/sweep", "expected \"joint\" or \"backward\"");

    cfg.out_dir = detail::get_or<std::string>(root.value("output", json::object()), "/output",
                                              "dir", "");
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError("", e.what());
    }
    return cfg;
}

inline json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config file " + path);
    try {
        return json::parse(f);
    } catch (const std::exception& e) {
        throw ConfigError("", e.what());
    }
}

} // namespace drb::config
