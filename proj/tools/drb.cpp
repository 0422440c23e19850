// drb — dynamic risk budgeting toolkit command line.
//
// Subcommands: simulate, train, verify, oracle, report. Exit codes:
//   0 success, 2 config error, 3 numerical failure, 4 verification failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "drb/config.hpp"
#include "drb/io.hpp"
#include "drb/market.hpp"
#include "drb/oracle.hpp"
#include "drb/trainer.hpp"
#include "drb/verify.hpp"

namespace {

constexpr const char* kVersion = "drb 1.0.0";

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_simulate(const std::string& config_path, long paths_override, long seed_override,
                 const std::string& out_dir, bool dump_paths) {
    auto t0 = std::chrono::steady_clock::now();
    json root = drb::config::load_config_file(config_path);
    if (!root.contains("market"))
        throw drb::config::ConfigError("/market", "simulate requires a market section");
    drb::MarketParams params = drb::config::parse_market(root.at("market"));
    const json sim = root.value("simulate", json::object());
    std::size_t n_paths = paths_override > 0
                              ? static_cast<std::size_t>(paths_override)
                              : sim.value("paths", std::size_t{100000});
    std::uint64_t seed =
        seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : sim.value("seed", 1ULL);
    std::string dir = !out_dir.empty()
                          ? out_dir
                          : root.value("output", json::object()).value("dir", std::string("out"));

    drb::PricePaths pp = drb::sample_paths(params, n_paths, seed);
    drb::TerminalStats stats = drb::terminal_stats(pp);
    drb::io::atomic_write(dir + "/stats.csv", drb::io::stats_csv(stats));
    if (dump_paths) drb::io::atomic_write(dir + "/paths.csv", drb::io::paths_csv(pp));
    drb::io::write_manifest(dir, root, seed, seconds_since(t0), kVersion);

    std::cout << "asset  mean      std       sharpe\n";
    for (int i = 0; i < stats.mean.size(); ++i)
        std::cout << i << "      " << stats.mean(i) << "  " << stats.stddev(i) << "  "
                  << stats.sharpe(i) << "\n";
    std::cout << "wrote " << dir << "/stats.csv\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    auto t0 = std::chrono::steady_clock::now();
    json root = drb::config::load_config_file(config_path);
    drb::train::TrainConfig cfg = drb::config::parse_train_config(root);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) cfg.out_dir = "out";
    std::filesystem::create_directories(cfg.out_dir);

    drb::train::TrainResult res = drb::train::train(cfg);

    drb::io::atomic_write(cfg.out_dir + "/diagnostics.csv",
                          drb::io::diagnostics_csv(res.diagnostics));
    drb::nn::save_checkpoint(cfg.out_dir + "/actor.ckpt", res.nets.actor, cfg.seed);
    drb::nn::save_checkpoint(cfg.out_dir + "/critic.ckpt", res.nets.critic_main, cfg.seed);
    drb::nn::save_checkpoint(cfg.out_dir + "/cdf.ckpt", res.nets.cdf, cfg.seed);
    drb::io::write_manifest(cfg.out_dir, root, cfg.seed, seconds_since(t0), kVersion);
    std::cout << "wrote " << cfg.out_dir << "/diagnostics.csv and checkpoints\n";
    return 0;
}

int cmd_verify(const std::string& tree_path, const std::string& config_path, int n_trees,
               long seed) {
    std::vector<drb::ScenarioTree> trees;
    if (!tree_path.empty()) {
        std::ifstream f(tree_path);
        if (!f) throw drb::config::ConfigError("/tree", "cannot open " + tree_path);
        trees.push_back(drb::tree_from_json(json::parse(f)));
    } else if (!config_path.empty()) {
        json root = drb::config::load_config_file(config_path);
        if (!root.contains("tree"))
            throw drb::config::ConfigError("/tree", "verify config requires a tree section");
        trees.push_back(drb::config::parse_tree(root.at("tree")));
    } else {
        for (int k = 0; k < n_trees; ++k) {
            drb::TreeSpec spec;
            drb::Rng rng(static_cast<std::uint64_t>(seed), k);
            spec.depth = 1 + static_cast<int>(rng.uniform() * 3);
            spec.n_assets = 2 + static_cast<int>(rng.uniform() * 3);
            for (int t = 0; t < spec.depth; ++t)
                spec.branching.push_back(2 + static_cast<int>(rng.uniform() * 3));
            spec.random_probs = true;
            spec.crash_branch = true;
            trees.push_back(drb::build_tree(spec, static_cast<std::uint64_t>(seed) + 31 * k));
        }
    }

    bool all = true;
    for (std::size_t k = 0; k < trees.size(); ++k) {
        const auto& tr = trees[k];
        auto specs = drb::broadcast_spec(drb::DistortionSpec{}, tr.depth);
        auto budget = drb::RiskBudget::constant(
            tr.depth, Eigen::VectorXd::Constant(tr.n_assets, 1.0 / tr.n_assets));
        auto rep = drb::verify::run_tree_suite(tr, specs, budget,
                                               static_cast<std::uint64_t>(seed) + 977 * k);
        std::cout << "tree " << k << " (depth " << tr.depth << ", assets " << tr.n_assets
                  << "):\n"
                  << drb::verify::format_report(rep);
        all = all && rep.all_pass();
    }
    if (!all) {
        std::cerr << "verification failed\n";
        return 4;
    }
    std::cout << "all identities hold\n";
    return 0;
}

int cmd_oracle(const std::string& config_path, const std::string& out_dir) {
    auto t0 = std::chrono::steady_clock::now();
    json root = drb::config::load_config_file(config_path);
    std::string dir = !out_dir.empty()
                          ? out_dir
                          : root.value("output", json::object()).value("dir", std::string("out"));
    if (!root.contains("tree"))
        throw drb::config::ConfigError("/tree", "oracle requires a tree section");
    drb::ScenarioTree tr = drb::config::parse_tree(root.at("tree"));
    auto specs = drb::config::parse_risk(root.value("risk", json::object()), tr.depth);
    auto budget =
        drb::config::parse_budget(root.value("budget", json::object()), tr.depth, tr.n_assets);

    auto sol = drb::oracle::solve_tree_risk_budgeting(tr, budget, specs);
    auto res = drb::risk_contributions_tree(tr, sol.theta, specs);
    drb::io::atomic_write(dir + "/oracle_theta.csv", drb::io::tree_strategy_csv(sol.theta));
    drb::io::atomic_write(dir + "/oracle_rc.csv", drb::io::tree_rc_csv(res));
    drb::io::write_manifest(dir, root, 0, seconds_since(t0), kVersion);
    std::cout << "root risk-to-go " << res.risk_to_go[0][0] << ", wrote " << dir
              << "/oracle_theta.csv\n";
    return 0;
}

struct DiagSummary {
    // key: (t, asset) -> series over iterations
    std::map<std::pair<int, int>, std::vector<double>> rc;
    std::map<int, std::vector<double>> risk_to_go;
    int iters = 0;
};

DiagSummary read_diagnostics(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw drb::config::ConfigError("", "cannot open " + path);
    std::string line;
    std::getline(f, line); // header
    DiagSummary d;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 10) continue;
        int iter = std::stoi(cells[0]), t = std::stoi(cells[1]), a = std::stoi(cells[2]);
        d.rc[{t, a}].push_back(std::stod(cells[3]));
        if (a == 0) d.risk_to_go[t].push_back(std::stod(cells[5]));
        d.iters = std::max(d.iters, iter + 1);
    }
    return d;
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= window) acc -= v[i - window];
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

int cmd_report(const std::string& dir, int window) {
    DiagSummary d = read_diagnostics(dir + "/diagnostics.csv");

    std::vector<drb::io::Series> rc_series, r_series;
    std::ostringstream summary;
    summary << "t,asset,rc_final_ma,risk_to_go_final_ma\n";
    for (const auto& [t, series] : d.risk_to_go) {
        auto ma = moving_average(series, window);
        r_series.push_back({"t=" + std::to_string(t), ma});
    }
    for (const auto& [key, series] : d.rc) {
        auto ma = moving_average(series, window);
        rc_series.push_back(
            {"t=" + std::to_string(key.first) + ",i=" + std::to_string(key.second), ma});
        auto rma = moving_average(d.risk_to_go[key.first], window);
        summary << key.first << ',' << key.second << ',' << ma.back() << ',' << rma.back()
                << '\n';
    }
    drb::io::atomic_write(dir + "/summary.csv", summary.str());
    drb::io::atomic_write(dir + "/rc_vs_iteration.svg",
                          drb::io::svg_line_chart("risk contributions (moving average)",
                                                  rc_series));
    drb::io::atomic_write(dir + "/risk_to_go_vs_iteration.svg",
                          drb::io::svg_line_chart("risk-to-go (moving average)", r_series));
    std::cout << "wrote " << dir << "/summary.csv and charts\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("DRB_THREADS"))
        Eigen::setNbThreads(std::max(1, std::atoi(threads)));

    CLI::App app{"dynamic risk budgeting toolkit"};
    app.require_subcommand(1);

    std::string config, out_dir, tree_path;
    long paths = -1, seed = 1;
    bool dump_paths = false;
    int n_trees = 20, window = 100;

    auto* sim = app.add_subcommand("simulate", "sample the market, report moment statistics");
    sim->add_option("--config", config)->required();
    sim->add_option("--paths", paths);
    sim->add_option("--seed", seed);
    sim->add_option("--out", out_dir);
    sim->add_flag("--dump-paths", dump_paths);

    auto* tr = app.add_subcommand("train", "run the actor-critic trainer");
    tr->add_option("--config", config)->required();
    tr->add_option("--out", out_dir);

    auto* ver = app.add_subcommand("verify", "exact identity suite on scenario trees");
    ver->add_option("--tree", tree_path);
    ver->add_option("--config", config);
    ver->add_option("--trees", n_trees);
    ver->add_option("--seed", seed);

    auto* ora = app.add_subcommand("oracle", "exact solvers (tree backward induction)");
    ora->add_option("--config", config)->required();
    ora->add_option("--out", out_dir);

    auto* rep = app.add_subcommand("report", "aggregate diagnostics into tables and charts");
    rep->add_option("--dir", out_dir)->required();
    rep->add_option("--window", window);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(config, paths, seed, out_dir, dump_paths);
        if (tr->parsed()) return cmd_train(config, out_dir);
        if (ver->parsed()) return cmd_verify(tree_path, config, n_trees, seed);
        if (ora->parsed()) return cmd_oracle(config, out_dir);
        if (rep->parsed()) return cmd_report(out_dir, window);
    } catch (const drb::config::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
