#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/market.hpp"
#include "drb/nnet.hpp"
#include "drb/portfolio.hpp"
#include "drb/risk.hpp"
#include "drb/scoring.hpp"
#include "drb/tree.hpp"

namespace drb::train {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int n_assets = 0;
    int horizon = 0; // decision times t = 0..horizon-1; prices run to horizon

    double lr_actor = 1e-3, lr_critic = 1e-3, lr_cdf = 1e-3;
    double weight_decay = 0.0;
    double tau = 1e-3;
    int m_r = 20, m_f = 5;
    int batch = 500;
    int iters = 3000;
    double sched_factor = 0.99;
    int sched_every = 20;
    std::uint64_t seed = 1;

    std::vector<DistortionSpec> specs; // one per decision time
    RiskBudget budget;                 // (horizon x n_assets)

    std::optional<MarketParams> market;     // exactly one of these two
    std::optional<ScenarioTree> tree_market;

    ScoreConfig score;

    int gru_layers = 5, gru_hidden = 0, ffn_layers = 5, ffn_width = 32;
    bool sweep_backward = false; // strict backward time sweep for actor terms

    std::string out_dir;     // diagnostics/checkpoints when nonempty
    int progress_every = 25; // stdout cadence; 0 silences progress lines

    // Calibrate score.D and the cdf grid from an initial batch: D becomes
    // 10x the 99th percentile of |losses|, the grid the batch loss range
    // widened by 20%. L and penalty_weight are kept as configured.
    bool auto_score = true;

    void validate() const {
        if (n_assets < 1 || horizon < 1)
            throw std::invalid_argument("TrainConfig: n_assets and horizon must be >= 1");
        if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("TrainConfig: tau in (0,1)");
        if (m_r < 1 || m_f < 1) throw std::invalid_argument("TrainConfig: m_r, m_f >= 1");
        if (!(lr_actor > 0 && lr_critic > 0 && lr_cdf > 0))
            throw std::invalid_argument("TrainConfig: learning rates must be positive");
        if (batch < 2 || iters < 1)
            throw std::invalid_argument("TrainConfig: batch >= 2 and iters >= 1");
        if (static_cast<int>(specs.size()) != horizon)
            throw std::invalid_argument("TrainConfig: one DistortionSpec per decision time");
        for (const auto& s : specs) s.validate();
        budget.validate();
        if (budget.b.rows() != horizon || budget.b.cols() != n_assets)
            throw std::invalid_argument("TrainConfig: budget shape mismatch");
        if (market.has_value() == tree_market.has_value())
            throw std::invalid_argument("TrainConfig: exactly one of market/tree required");
        if (market) {
            market->validate();
            if (market->n_assets != n_assets || market->horizon_decisions != horizon)
                throw std::invalid_argument("TrainConfig: market dimensions mismatch");
        }
        if (tree_market) {
            tree_market->validate();
            if (tree_market->n_assets != n_assets || tree_market->depth != horizon)
                throw std::invalid_argument("TrainConfig: tree dimensions mismatch");
        }
        score.validate();
    }

    int hidden() const { return gru_hidden > 0 ? gru_hidden : n_assets; }
    int state_dim() const { return n_assets + 2; }
};

struct DiagnosticsRow {
    int iter = 0, t = 0, asset = 0;
    double rc = 0, rc_std = 0, risk_to_go = 0, risk_to_go_std = 0;
    double score_rho = 0, score_cdf = 0, lr = 0;
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

struct Nets {
    nn::GruFfnNet actor, critic_main, critic_target, cdf;

    static Nets make(const TrainConfig& cfg) {
        Nets n;
        nn::NetConfig base;
        base.input_dim = cfg.state_dim();
        base.gru_layers = cfg.gru_layers;
        base.gru_hidden = cfg.hidden();
        base.ffn_layers = cfg.ffn_layers;
        base.ffn_width = cfg.ffn_width;

        nn::NetConfig ac = base;
        ac.output_dim = cfg.n_assets;
        n.actor = nn::GruFfnNet(ac, splitmix64(cfg.seed ^ 0xAC70ULL));

        nn::NetConfig rc = base;
        rc.output_dim = 3;
        n.critic_main = nn::GruFfnNet(rc, splitmix64(cfg.seed ^ 0xC217ULL));
        n.critic_target = n.critic_main; // start identical

        nn::NetConfig fc = base;
        fc.output_dim = 1;
        fc.z_input = true;
        n.cdf = nn::GruFfnNet(fc, splitmix64(cfg.seed ^ 0xCDF0ULL));
        return n;
    }
};

// ---------------------------------------------------------------------------
// Path sources
// ---------------------------------------------------------------------------

inline std::vector<MatrixXd> sample_tree_paths(const ScenarioTree& tree, std::size_t n_paths,
                                               std::uint64_t seed) {
    std::vector<MatrixXd> prices(tree.depth + 1, MatrixXd(n_paths, tree.n_assets));
    for (std::size_t p = 0; p < n_paths; ++p) {
        Rng rng(seed, p);
        int node = 0;
        prices[0].row(p) = tree.levels[0][0].prices.transpose();
        for (int t = 0; t < tree.depth; ++t) {
            double u = rng.uniform(), cum = 0.0;
            const auto& kids = tree.levels[t][node].children;
            int pick = kids.back();
            for (int c : kids) {
                cum += tree.levels[t + 1][c].prob;
                if (u <= cum) { pick = c; break; }
            }
            node = pick;
            prices[t + 1].row(p) = tree.levels[t + 1][node].prices.transpose();
        }
    }
    return prices;
}

inline std::vector<MatrixXd> sample_market(const TrainConfig& cfg, std::size_t n_paths,
                                           std::uint64_t seed) {
    if (cfg.market) return sample_paths(*cfg.market, n_paths, seed).prices;
    return sample_tree_paths(*cfg.tree_market, n_paths, seed);
}

// ---------------------------------------------------------------------------
// Actor forward with the wealth recursion on the tape, so policy gradients
// see the state dependence on earlier positions. State y_t = (t, wealth_t,
// X_t) with wealth_0 = 1 and wealth_{t+1} = wealth_t * theta_t'X_{t+1} /
// theta_t'X_t (the induced self-financing wealth).
// ---------------------------------------------------------------------------

struct ActorRun {
    nn::Tape tape;
    std::vector<int> theta_ids;  // tape node per decision time
    std::vector<MatrixXd> theta; // values
    std::vector<MatrixXd> states; // values, (B x n+2)
};

inline ActorRun forward_actor(const nn::GruFfnNet& actor, const std::vector<MatrixXd>& prices,
                              int horizon) {
    if (static_cast<int>(prices.size()) < horizon + 1)
        throw std::invalid_argument("forward_actor: need prices up to the horizon");
    const Eigen::Index B = prices[0].rows();
    ActorRun run;
    nn::Tape& tape = run.tape;
    auto bind = actor.params.bind(tape);
    auto state = actor.initial_state(tape, B);
    int ones = tape.leaf(MatrixXd::Ones(prices[0].cols(), 1));
    int wealth = tape.leaf(MatrixXd::Ones(B, 1));
    for (int t = 0; t < horizon; ++t) {
        int tcol = tape.leaf(MatrixXd::Constant(B, 1, static_cast<double>(t)));
        int xleaf = tape.leaf(prices[t]);
        int y = tape.concat_cols({tcol, wealth, xleaf});
        int raw = actor.ffn(tape, bind, actor.features(tape, state, y));
        int th = nn::actor_head(tape, raw);
        if (!tape.val(th).allFinite())
            throw std::runtime_error("forward_actor: non-finite position at t=" +
                                     std::to_string(t));
        run.theta_ids.push_back(th);
        run.theta.push_back(tape.val(th));
        run.states.push_back(tape.val(y));
        actor.gru_step(tape, bind, state, y);
        // wealth update for the next state
        int val_next = tape.matmul(tape.mul_constmat(th, prices[t + 1]), ones);
        int val_now = tape.matmul(tape.mul_constmat(th, prices[t]), ones);
        wealth = tape.mul(wealth, tape.mul(val_next, tape.reciprocal(val_now)));
    }
    return run;
}

// Risk critic evaluated numerically over a state sequence.
struct CriticHeads {
    std::vector<VectorXd> var, es, rho; // one (B) vector per decision time
};

inline CriticHeads eval_risk_critic(const nn::GruFfnNet& critic,
                                    const std::vector<MatrixXd>& states) {
    nn::Tape tape;
    auto bind = critic.params.bind(tape);
    auto st = critic.initial_state(tape, states[0].rows());
    CriticHeads out;
    for (const auto& y_val : states) {
        int y = tape.leaf(y_val);
        int raw = critic.ffn(tape, bind, critic.features(tape, st, y));
        auto heads = nn::risk_critic_heads(tape, raw);
        out.var.push_back(tape.val(heads.var_id).col(0));
        out.es.push_back(tape.val(heads.es_id).col(0));
        out.rho.push_back(tape.val(heads.rho_id).col(0));
        critic.gru_step(tape, bind, st, y);
    }
    return out;
}

// Main cdf critic evaluated numerically at per-sample points z[t] (B each).
inline std::vector<VectorXd> eval_cdf_at(const nn::GruFfnNet& cdf,
                                         const std::vector<MatrixXd>& states,
                                         const std::vector<VectorXd>& z) {
    nn::Tape tape;
    auto bind = cdf.params.bind(tape);
    auto st = cdf.initial_state(tape, states[0].rows());
    std::vector<VectorXd> out;
    for (std::size_t t = 0; t < states.size(); ++t) {
        int y = tape.leaf(states[t]);
        int feats = cdf.features(tape, st, y);
        int zleaf = tape.leaf(z[t]);
        int F = nn::cdf_head(tape, cdf.ffn(tape, bind, tape.concat_cols({feats, zleaf})));
        out.push_back(tape.val(F).col(0));
        cdf.gru_step(tape, bind, st, y);
    }
    return out;
}

// Main cdf critic on the full score grid: out[t] is (B x L).
inline std::vector<MatrixXd> eval_cdf_grid(const nn::GruFfnNet& cdf,
                                           const std::vector<MatrixXd>& states,
                                           const ScoreConfig& sc) {
    nn::Tape tape;
    auto bind = cdf.params.bind(tape);
    const Eigen::Index B = states[0].rows();
    auto st = cdf.initial_state(tape, B);
    MatrixXd zcol(B * sc.L, 1);
    for (int l = 0; l < sc.L; ++l) zcol.middleRows(l * B, B).setConstant(sc.grid_point(l));
    std::vector<MatrixXd> out;
    for (std::size_t t = 0; t < states.size(); ++t) {
        int y = tape.leaf(states[t]);
        int rep = tape.repeat_rows(cdf.features(tape, st, y), sc.L);
        int F = nn::cdf_head(
            tape, cdf.ffn(tape, bind, tape.concat_cols({rep, tape.leaf(zcol)})));
        out.push_back(Eigen::Map<const MatrixXd>(tape.val(F).data(), B, sc.L));
        cdf.gru_step(tape, bind, st, y);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch assembly: prices, positions, states, one-step losses g_t and the
// target-critic continuation values.
// ---------------------------------------------------------------------------

struct SimBatch {
    std::vector<MatrixXd> prices; // horizon+1
    ActorRun actor_run;
    std::vector<VectorXd> g;      // horizon, realized one-step loss per path
    std::vector<VectorXd> R_next; // horizon, target risk-to-go (zero at t=T)
};

inline SimBatch simulate_batch(const TrainConfig& cfg, const Nets& nets, std::uint64_t seed) {
    SimBatch b;
    b.prices = sample_market(cfg, cfg.batch, seed);
    b.actor_run = forward_actor(nets.actor, b.prices, cfg.horizon);
    const int H = cfg.horizon;
    CriticHeads target = eval_risk_critic(nets.critic_target, b.actor_run.states);
    b.g.resize(H);
    b.R_next.resize(H);
    for (int t = 0; t < H; ++t) {
        const MatrixXd& th = b.actor_run.theta[t];
        VectorXd g = (th.array() * (b.prices[t] - b.prices[t + 1]).array()).rowwise().sum();
        if (t + 1 < H) {
            b.R_next[t] = target.rho[t + 1];
            VectorXd num = (th.array() * b.prices[t + 1].array()).rowwise().sum();
            VectorXd den = (b.actor_run.theta[t + 1].array() * b.prices[t + 1].array())
                               .rowwise()
                               .sum();
            g += num.cwiseQuotient(den).cwiseProduct(b.R_next[t]);
        } else {
            b.R_next[t] = VectorXd::Zero(cfg.batch);
        }
        b.g[t] = std::move(g);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Inner updates
// ---------------------------------------------------------------------------

struct UpdateStats {
    double loss = 0.0;
    long clamped = 0; // log-domain clamps in the rho score
    long total = 0;
};

// One step on the main risk critic: minimize the mean rho-score over the
// batch at every decision time, then soft-update the target.
inline UpdateStats critic_update(const TrainConfig& cfg, Nets& nets, nn::AdamW& opt,
                                 const SimBatch& batch) {
    nn::Tape tape;
    auto bind = nets.critic_main.params.bind(tape);
    const Eigen::Index B = cfg.batch;
    auto st = nets.critic_main.initial_state(tape, B);
    UpdateStats stats;
    const double D = cfg.score.D;
    const double clamp_lo = -D + 1e-6;
    int total_loss = -1;
    for (int t = 0; t < cfg.horizon; ++t) {
        const double alpha = cfg.specs[t].alpha, p = cfg.specs[t].p;
        int y = tape.leaf(batch.actor_run.states[t]);
        int raw = nets.critic_main.ffn(tape, bind,
                                       nets.critic_main.features(tape, st, y));
        auto heads = nn::risk_critic_heads(tape, raw);
        // The realized loss y only needs y + D > 0 inside -log(y + D), which
        // carries no parameter gradient; clamping y anywhere else (indicator,
        // tail term, squared term) would truncate the gains tail and bias the
        // fitted rho upward. So clamp y for the log constant only and keep the
        // raw values everywhere else. z2 must stay in the log domain; clamped
        // z2 values are counted as telemetry.
        const VectorXd& yv = batch.g[t];
        VectorXd y_log = yv;
        for (Eigen::Index i = 0; i < B; ++i) {
            ++stats.total;
            if (y_log(i) <= clamp_lo) y_log(i) = clamp_lo;
        }
        const MatrixXd& z2v = tape.val(heads.es_id);
        MatrixXd mask(B, 1), fill(B, 1);
        for (Eigen::Index i = 0; i < B; ++i) {
            bool ok = z2v(i, 0) > clamp_lo;
            if (!ok) ++stats.clamped;
            mask(i, 0) = ok ? 1.0 : 0.0;
            fill(i, 0) = ok ? 0.0 : clamp_lo;
        }
        int z2 = tape.add(tape.mul_constmat(heads.es_id, mask), tape.leaf(fill));
        int A = tape.add_const(z2, D);      // z2 + D
        int invA = tape.reciprocal(A);
        MatrixXd log_yD = (y_log.array() + D).log().matrix();
        int term1 = tape.sub(tape.log_op(A), tape.leaf(log_yD));
        int term2 = tape.scalar_mul(tape.mul(z2, invA), -1.0);
        // indicator from current VaR values, constant on the tape
        const MatrixXd& z1v = tape.val(heads.var_id);
        MatrixXd ind_m(B, 1), yterm(B, 1);
        for (Eigen::Index i = 0; i < B; ++i) {
            double ind = yv(i) <= z1v(i, 0) ? 1.0 : 0.0;
            ind_m(i, 0) = ind - alpha;
            yterm(i, 0) = (1.0 - ind) * yv(i);
        }
        int numer = tape.add(tape.mul_constmat(heads.var_id, ind_m), tape.leaf(yterm));
        int term3 = tape.scalar_mul(tape.mul(numer, invA), 1.0 / (1.0 - alpha));
        int q = tape.sub(
            tape.scalar_mul(tape.sub(heads.rho_id, tape.scalar_mul(z2, p)), 1.0 / (1.0 - p)),
            tape.leaf(MatrixXd(yv)));
        int term4 = tape.square(q);
        int loss_t =
            tape.mean_all(tape.add(tape.add(term1, term2), tape.add(term3, term4)));
        total_loss = total_loss < 0 ? loss_t : tape.add(total_loss, loss_t);
        nets.critic_main.gru_step(tape, bind, st, y);
    }
    stats.loss = tape.val(total_loss)(0, 0) / cfg.horizon;
    tape.backward(total_loss);
    nets.critic_main.params.zero_grads();
    nets.critic_main.params.collect(tape, bind);
    opt.step(nets.critic_main.params);
    nn::soft_update(nets.critic_target.params, nets.critic_main.params, cfg.tau);
    return stats;
}

// One step on the cdf critic: CRPS on the truncated grid plus the
// monotonicity penalty.
inline UpdateStats cdf_update(const TrainConfig& cfg, Nets& nets, nn::AdamW& opt,
                              const SimBatch& batch) {
    const ScoreConfig& sc = cfg.score;
    nn::Tape tape;
    auto bind = nets.cdf.params.bind(tape);
    const Eigen::Index B = cfg.batch;
    auto st = nets.cdf.initial_state(tape, B);
    const double dz = sc.dz();
    MatrixXd zcol(B * sc.L, 1);
    for (int l = 0; l < sc.L; ++l) zcol.middleRows(l * B, B).setConstant(sc.grid_point(l));
    UpdateStats stats;
    int total_loss = -1;
    for (int t = 0; t < cfg.horizon; ++t) {
        int y = tape.leaf(batch.actor_run.states[t]);
        int rep = tape.repeat_rows(nets.cdf.features(tape, st, y), sc.L);
        int F = nn::cdf_head(
            tape, nets.cdf.ffn(tape, bind, tape.concat_cols({rep, tape.leaf(zcol)})));
        MatrixXd H(B * sc.L, 1);
        for (int l = 0; l < sc.L; ++l)
            for (Eigen::Index i = 0; i < B; ++i)
                H(l * B + i, 0) = sc.grid_point(l) >= batch.g[t](i) ? 1.0 : 0.0;
        int crps = tape.scalar_mul(tape.sum_all(tape.square(tape.sub(F, tape.leaf(H)))),
                                   dz / static_cast<double>(B));
        // monotonicity: squared negative forward slopes on the grid
        int Fb = tape.reshape(F, B, sc.L);
        int diff = tape.sub(tape.cols(Fb, 1, sc.L - 1), tape.cols(Fb, 0, sc.L - 1));
        MatrixXd neg_mask =
            (tape.val(diff).array() < 0.0).cast<double>().matrix();
        int pen = tape.scalar_mul(tape.sum_all(tape.square(tape.mul_constmat(diff, neg_mask))),
                                  sc.penalty_weight / (dz * static_cast<double>(B)));
        int loss_t = tape.add(crps, pen);
        total_loss = total_loss < 0 ? loss_t : tape.add(total_loss, loss_t);
        nets.cdf.gru_step(tape, bind, st, y);
        stats.total += B;
    }
    stats.loss = tape.val(total_loss)(0, 0) / cfg.horizon;
    tape.backward(total_loss);
    nets.cdf.params.zero_grads();
    nets.cdf.params.collect(tape, bind);
    opt.step(nets.cdf.params);
    return stats;
}

// Per-(t, path, asset) policy-gradient bracket: everything except theta_t is
// detached. U_t comes from the main cdf critic at the realized loss.
inline std::vector<MatrixXd> pg_brackets(const TrainConfig& cfg, const Nets& nets,
                                         const SimBatch& batch) {
    std::vector<VectorXd> U = eval_cdf_at(nets.cdf, batch.actor_run.states, batch.g);
    std::vector<MatrixXd> brackets(cfg.horizon);
    for (int t = 0; t < cfg.horizon; ++t) {
        const MatrixXd& th = batch.actor_run.theta[t];
        MatrixXd base = batch.prices[t] - batch.prices[t + 1]; // dX
        if (t + 1 < cfg.horizon) {
            VectorXd den = (batch.actor_run.theta[t + 1].array() *
                            batch.prices[t + 1].array())
                               .rowwise()
                               .sum();
            Eigen::ArrayXd scale = batch.R_next[t].array() / den.array();
            base += (batch.prices[t + 1].array().colwise() * scale).matrix();
        }
        MatrixXd bracket(cfg.batch, cfg.n_assets);
        for (Eigen::Index i = 0; i < bracket.rows(); ++i) {
            double u = std::min(1.0, std::max(0.0, U[t](i)));
            double gam = gamma_weight(cfg.specs[t], u);
            for (int j = 0; j < cfg.n_assets; ++j)
                bracket(i, j) = base(i, j) * gam - cfg.budget.b(t, j) / th(i, j);
        }
        brackets[t] = std::move(bracket);
    }
    return brackets;
}

// One deterministic-policy-gradient step on the actor via the surrogate
// sum_t mean_paths sum_i theta_{t,i} * bracket_{t,i} (bracket detached).
inline double actor_update(const TrainConfig& cfg, Nets& nets, nn::AdamW& opt,
                           SimBatch& batch, int active_t = -1) {
    auto brackets = pg_brackets(cfg, nets, batch);
    nn::Tape& tape = batch.actor_run.tape;
    int total = -1;
    for (int t = 0; t < cfg.horizon; ++t) {
        if (active_t >= 0 && t != active_t) continue;
        int term = tape.scalar_mul(
            tape.sum_all(tape.mul_constmat(batch.actor_run.theta_ids[t], brackets[t])),
            1.0 / static_cast<double>(cfg.batch));
        total = total < 0 ? term : tape.add(total, term);
    }
    double loss = tape.val(total)(0, 0);
    tape.backward(total);
    nets.actor.params.zero_grads();
    // the actor leaves are the first bind ids on its own tape
    std::vector<int> bind(nets.actor.params.count());
    for (std::size_t i = 0; i < bind.size(); ++i) bind[i] = static_cast<int>(i);
    nets.actor.params.collect(tape, bind);
    opt.step(nets.actor.params);
    return loss;
}

// ---------------------------------------------------------------------------
// Outer loop (actor-critic alternation with resimulation per inner update)
// ---------------------------------------------------------------------------

struct TrainResult {
    Nets nets;
    std::vector<DiagnosticsRow> diagnostics;
    long clamped = 0, clamp_total = 0;
};

namespace detail {

inline void check_finite(const nn::ParamStore& p, const std::string& tag) {
    for (std::size_t i = 0; i < p.count(); ++i)
        if (!p.mat(static_cast<int>(i)).allFinite())
            throw std::runtime_error("training diverged (non-finite parameters) at " + tag);
}

} // namespace detail

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) {
    return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (counter + 1));
}

inline TrainResult train(const TrainConfig& cfg_in,
                         const std::function<void(const TrainResult&, int)>& on_iter = {}) {
    cfg_in.validate();
    TrainConfig cfg = cfg_in;
    TrainResult res;
    res.nets = Nets::make(cfg);
    if (cfg.auto_score) {
        SimBatch b = simulate_batch(cfg, res.nets, derive_seed(cfg.seed, 0xCA11ULL));
        std::vector<double> mags;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& g : b.g)
            for (Eigen::Index i = 0; i < g.size(); ++i) {
                mags.push_back(std::fabs(g(i)));
                lo = std::min(lo, g(i));
                hi = std::max(hi, g(i));
            }
        std::sort(mags.begin(), mags.end());
        double p99 = mags[static_cast<std::size_t>(0.99 * (mags.size() - 1))];
        // the initial batch understates the converged loss scale: training
        // drives the risk-to-go toward the budget row sum, so floor the
        // calibration at that target scale. Keep D on the order of the loss
        // scale: the VaR/ES score gradients shrink like 1/(z2 + D), so an
        // oversized D starves those heads and biases the rho head low.
        double target = 0.0;
        for (int t = 0; t < cfg.horizon; ++t)
            target = std::max(target, cfg.budget.b.row(t).sum());
        cfg.score.D = std::max({1e-3, 10.0 * p99, 2.5 * target});
        double widen = 0.2 * std::max(hi - lo, 1e-6);
        cfg.score.z_lo = std::min(lo - widen, -2.5 * target);
        cfg.score.z_hi = std::max(hi + widen, 2.5 * target);
        if (cfg.progress_every > 0)
            std::cout << "score calibration: D " << cfg.score.D << " grid ["
                      << cfg.score.z_lo << ", " << cfg.score.z_hi << "] L "
                      << cfg.score.L << std::endl;
    }
    nn::AdamW opt_actor, opt_critic, opt_cdf;
    opt_actor.lr = cfg.lr_actor;
    opt_critic.lr = cfg.lr_critic;
    opt_cdf.lr = cfg.lr_cdf;
    opt_actor.weight_decay = opt_critic.weight_decay = opt_cdf.weight_decay =
        cfg.weight_decay;

    std::uint64_t sim_counter = 0;
    const int phase_len =
        cfg.sweep_backward ? std::max(1, cfg.iters / cfg.horizon) : cfg.iters;

    for (int iter = 0; iter < cfg.iters; ++iter) {
        double score_rho_mean = 0.0, score_cdf_mean = 0.0;
        long clamped_iter = 0, clamp_total_iter = 0;
        for (int k = 0; k < cfg.m_r; ++k) {
            SimBatch b = simulate_batch(cfg, res.nets, derive_seed(cfg.seed, sim_counter++));
            auto st = critic_update(cfg, res.nets, opt_critic, b);
            score_rho_mean = st.loss;
            clamped_iter += st.clamped;
            clamp_total_iter += st.total;
        }
        for (int k = 0; k < cfg.m_f; ++k) {
            SimBatch b = simulate_batch(cfg, res.nets, derive_seed(cfg.seed, sim_counter++));
            auto st = cdf_update(cfg, res.nets, opt_cdf, b);
            score_cdf_mean = st.loss;
        }
        SimBatch b = simulate_batch(cfg, res.nets, derive_seed(cfg.seed, sim_counter++));
        int active_t =
            cfg.sweep_backward
                ? std::max(0, cfg.horizon - 1 - iter / phase_len)
                : -1;
        // diagnostics are computed on this batch before the actor moves
        auto brackets = pg_brackets(cfg, res.nets, b);
        CriticHeads heads = eval_risk_critic(res.nets.critic_main, b.actor_run.states);
        actor_update(cfg, res.nets, opt_actor, b, active_t);

        res.clamped += clamped_iter;
        res.clamp_total += clamp_total_iter;
        if (clamp_total_iter > 0 &&
            static_cast<double>(clamped_iter) > 0.01 * static_cast<double>(clamp_total_iter))
            std::cerr << "warning: iter " << iter << ": " << clamped_iter << "/"
                      << clamp_total_iter << " rho-score log-domain clamps\n";

        for (int t = 0; t < cfg.horizon; ++t) {
            double r_mean = heads.rho[t].mean();
            double r_std = std::sqrt(
                (heads.rho[t].array() - r_mean).square().sum() /
                std::max<double>(1.0, cfg.batch - 1));
            for (int a = 0; a < cfg.n_assets; ++a) {
                // RC sample: theta * bracket + b (undoes the barrier term)
                Eigen::ArrayXd rc_s =
                    b.actor_run.theta[t].col(a).array() * brackets[t].col(a).array() +
                    cfg.budget.b(t, a);
                DiagnosticsRow row;
                row.iter = iter;
                row.t = t;
                row.asset = a;
                row.rc = rc_s.mean();
                row.rc_std = std::sqrt((rc_s - row.rc).square().sum() /
                                       std::max<double>(1.0, cfg.batch - 1));
                row.risk_to_go = r_mean;
                row.risk_to_go_std = r_std;
                row.score_rho = score_rho_mean;
                row.score_cdf = score_cdf_mean;
                row.lr = opt_actor.lr;
                res.diagnostics.push_back(row);
            }
        }

        try {
            detail::check_finite(res.nets.actor.params, "iteration " + std::to_string(iter));
            detail::check_finite(res.nets.critic_main.params,
                                 "iteration " + std::to_string(iter));
            detail::check_finite(res.nets.cdf.params, "iteration " + std::to_string(iter));
        } catch (const std::exception&) {
            if (!cfg.out_dir.empty()) {
                nn::save_checkpoint(cfg.out_dir + "/abort_actor.ckpt", res.nets.actor,
                                    cfg.seed);
                nn::save_checkpoint(cfg.out_dir + "/abort_critic.ckpt", res.nets.critic_main,
                                    cfg.seed);
                nn::save_checkpoint(cfg.out_dir + "/abort_cdf.ckpt", res.nets.cdf, cfg.seed);
            }
            throw;
        }

        if ((iter + 1) % cfg.sched_every == 0) {
            opt_actor.lr *= cfg.sched_factor;
            opt_critic.lr *= cfg.sched_factor;
            opt_cdf.lr *= cfg.sched_factor;
        }
        if (cfg.progress_every > 0 && (iter % cfg.progress_every == 0 || iter + 1 == cfg.iters))
            std::cout << "iter " << iter << " risk_to_go " << heads.rho[0].mean()
                      << " score_rho " << score_rho_mean << " score_cdf " << score_cdf_mean
                      << " lr " << opt_actor.lr << std::endl;
        if (on_iter) on_iter(res, iter);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Final normalization: induced self-financing strategy rescaled to initial
// wealth 1 (per path).
// ---------------------------------------------------------------------------

inline StrategyTensor normalize_strategy(const StrategyTensor& strat,
                                         const std::vector<MatrixXd>& prices) {
    StrategyTensor induced = induce_self_financing(strat, prices);
    Eigen::ArrayXd w0 =
        (induced.theta[0].array() * prices[0].array()).rowwise().sum();
    if ((w0 <= 0.0).any())
        throw std::logic_error("normalize_strategy: nonpositive initial wealth");
    StrategyTensor out;
    out.floor = 0.0;
    out.theta.resize(induced.theta.size());
    for (std::size_t t = 0; t < induced.theta.size(); ++t)
        out.theta[t] = induced.theta[t].array().colwise() / w0;
    return out;
}

} // namespace drb::train
