#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "drb/mathutil.hpp"
#include "drb/portfolio.hpp"
#include "drb/tree.hpp"
#include "drb/verify.hpp"

using namespace drb;

namespace {

ScenarioTree hand_tree_depth2() {
    // 1 asset, X0 = 1; level 1: {0.9, 1.2} equiprobable;
    // level 2: from 0.9 -> {0.8, 1.0}; from 1.2 -> {1.0, 1.5}, equiprobable.
    TreeSpec spec;
    spec.depth = 2;
    spec.n_assets = 1;
    spec.branching = {2, 2};
    spec.explicit_returns.resize(2);
    spec.explicit_probs.resize(2);
    auto v = [](double x) { return Eigen::VectorXd::Constant(1, x); };
    spec.explicit_returns[0] = {v(0.9), v(1.2)};
    spec.explicit_probs[0] = {0.5, 0.5};
    spec.explicit_returns[1] = {v(0.8 / 0.9), v(1.0 / 0.9), v(1.0 / 1.2), v(1.5 / 1.2)};
    spec.explicit_probs[1] = {0.5, 0.5, 0.5, 0.5};
    return build_tree(spec, 0);
}

ScenarioTree random_tree(std::uint64_t seed, int depth = 2, int assets = 3) {
    TreeSpec spec;
    spec.depth = depth;
    spec.n_assets = assets;
    spec.branching.assign(depth, 3);
    spec.random_probs = true;
    return build_tree(spec, seed);
}

TreeStrategy unit_strategy(const ScenarioTree& tree) {
    TreeStrategy theta(tree.depth);
    for (int t = 0; t < tree.depth; ++t)
        theta[t].assign(tree.levels[t].size(), Eigen::VectorXd::Ones(tree.n_assets));
    return theta;
}

} // namespace

TEST_CASE("weight process basics") {
    // 2 paths, 1 asset, 3 decision times, constant shares => w = 1
    std::vector<Eigen::MatrixXd> theta(3, Eigen::MatrixXd::Constant(2, 1, 3.0));
    std::vector<Eigen::MatrixXd> prices(4);
    prices[0] = Eigen::MatrixXd::Constant(2, 1, 1.0);
    prices[1] = Eigen::MatrixXd::Constant(2, 1, 1.1);
    prices[2] = Eigen::MatrixXd::Constant(2, 1, 0.95);
    prices[3] = Eigen::MatrixXd::Constant(2, 1, 1.3);
    auto w = weight_process(theta, prices);
    REQUIRE(w.size() == 2);
    for (const auto& wt : w)
        for (Eigen::Index i = 0; i < wt.size(); ++i)
            CHECK(wt(i) == doctest::Approx(1.0).epsilon(1e-14));

    // doubling shares with flat prices halves the weight
    std::vector<Eigen::MatrixXd> theta2 = {Eigen::MatrixXd::Constant(2, 1, 1.0),
                                           Eigen::MatrixXd::Constant(2, 1, 2.0)};
    std::vector<Eigen::MatrixXd> flat(3, Eigen::MatrixXd::Constant(2, 1, 1.0));
    auto w2 = weight_process(theta2, flat);
    CHECK(w2[0](0) == doctest::Approx(0.5).epsilon(1e-14));

    // scaling theta_t and theta_{t+1} by the same factor leaves w_t unchanged
    Rng rng(31);
    std::vector<Eigen::MatrixXd> th(3), px(4);
    for (auto& m : th) {
        m.resize(5, 2);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.2 + rng.uniform();
    }
    for (auto& m : px) {
        m.resize(5, 2);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.5 + rng.uniform();
    }
    auto wa = weight_process(th, px);
    double a = 3.7;
    auto th2 = th;
    th2[1] *= a; // scales w_0 denominator and w_1 numerator
    auto wb = weight_process(th2, px);
    for (Eigen::Index i = 0; i < wa[0].size(); ++i) {
        CHECK(wb[0](i) == doctest::Approx(wa[0](i) / a).epsilon(1e-12));
        CHECK(wb[1](i) == doctest::Approx(wa[1](i) * a).epsilon(1e-12));
    }
    // scaling the whole plan from t onward leaves all w unchanged
    auto th3 = th;
    for (auto& m : th3) m *= a;
    auto wc = weight_process(th3, px);
    for (std::size_t t = 0; t < wa.size(); ++t)
        for (Eigen::Index i = 0; i < wa[t].size(); ++i)
            CHECK(wc[t](i) == doctest::Approx(wa[t](i)).epsilon(1e-12));
}

TEST_CASE("induced self-financing strategy") {
    Rng rng(41);
    StrategyTensor strat;
    std::vector<Eigen::MatrixXd> prices(4);
    strat.theta.resize(3);
    for (auto& m : strat.theta) {
        m.resize(6, 2);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.2 + rng.uniform();
    }
    for (auto& m : prices) {
        m.resize(6, 2);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.5 + rng.uniform();
    }
    StrategyTensor ind = induce_self_financing(strat, prices);
    // rebalance is self-financing at every decision after the first
    for (std::size_t t = 1; t < ind.theta.size(); ++t) {
        Eigen::ArrayXd cash =
            ((ind.theta[t] - ind.theta[t - 1]).array() * prices[t].array()).rowwise().sum();
        Eigen::ArrayXd scale =
            (ind.theta[t - 1].array() * prices[t].array()).rowwise().sum();
        CHECK((cash / scale).abs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-10));
    }
    // already self-financing input is a fixed point
    StrategyTensor again = induce_self_financing(ind, prices);
    for (std::size_t t = 0; t < ind.theta.size(); ++t)
        CHECK((again.theta[t] - ind.theta[t]).cwiseAbs().maxCoeff() ==
              doctest::Approx(0.0).epsilon(1e-12));
    // single asset: induced strategy is buy-and-hold
    StrategyTensor one;
    one.theta.assign(3, Eigen::MatrixXd::Constant(4, 1, 0.0));
    std::vector<Eigen::MatrixXd> px1(4, Eigen::MatrixXd::Constant(4, 1, 1.0));
    Rng r2(5);
    for (auto& m : one.theta)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.3 + r2.uniform();
    for (auto& m : px1)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.5 + r2.uniform();
    StrategyTensor bh = induce_self_financing(one, px1);
    for (std::size_t t = 1; t < bh.theta.size(); ++t)
        CHECK((bh.theta[t] - bh.theta[0]).cwiseAbs().maxCoeff() ==
              doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("risk-to-go: mean case on a martingale tree is zero") {
    // branches u = 1.2from, d = 0.8 equiprobable keep E[X_{t+1}|X_t] = X_t
    TreeSpec spec;
    spec.depth = 2;
    spec.n_assets = 1;
    spec.branching = {2, 2};
    spec.explicit_returns.resize(2);
    spec.explicit_probs.resize(2);
    auto v = [](double x) { return Eigen::VectorXd::Constant(1, x); };
    spec.explicit_returns[0] = {v(1.2), v(0.8)};
    spec.explicit_probs[0] = {0.5, 0.5};
    spec.explicit_returns[1] = {v(1.2), v(0.8), v(1.2), v(0.8)};
    spec.explicit_probs[1] = {0.5, 0.5, 0.5, 0.5};
    ScenarioTree tree = build_tree(spec, 0);
    auto theta = unit_strategy(tree);
    auto specs = broadcast_spec(DistortionSpec{0.0, 0.75}, tree.depth);
    auto R = risk_to_go_tree(tree, theta, specs);
    for (int t = 0; t < tree.depth; ++t)
        for (double r : R[t]) CHECK(r == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("risk-to-go: depth-1 base case equals the one-period distortion") {
    ScenarioTree tree = random_tree(71, 1, 2);
    Rng rng(1);
    auto theta = verify::detail::random_strategy(tree, rng);
    DistortionSpec spec{0.6, 0.7};
    auto R = risk_to_go_tree(tree, theta, {spec});
    DiscreteDistribution law;
    for (int c = 0; c < tree.n_nodes(1); ++c) {
        law.values.push_back(theta[0][0].dot(tree.node(0, 0).prices - tree.node(1, c).prices));
        law.probs.push_back(tree.node(1, c).prob);
    }
    CHECK(R[0][0] == doctest::Approx(distortion_exact(spec, law)).epsilon(1e-13));
}

TEST_CASE("risk-to-go: hand-computed nested value on the depth-2 tree") {
    ScenarioTree tree = hand_tree_depth2();
    auto theta = unit_strategy(tree);
    auto specs = broadcast_spec(DistortionSpec{1.0, 0.5}, tree.depth);
    auto R = risk_to_go_tree(tree, theta, specs);
    // By hand: R_1 = (0.1, 0.2); with w_0 = 1 the root losses are
    // {0.1 + 0.1, -0.2 + 0.2} = {0.2, 0.0}; ES_0.5 of two equiprobable
    // atoms is the larger, 0.2.
    CHECK(R[1][0] == doctest::Approx(0.1).epsilon(1e-13));
    CHECK(R[1][1] == doctest::Approx(0.2).epsilon(1e-13));
    CHECK(R[0][0] == doctest::Approx(0.2).epsilon(1e-13));
}

TEST_CASE("full allocation and exact identities on random trees") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        ScenarioTree tree = random_tree(seed);
        Rng rng(seed ^ 0xF00D);
        auto theta = verify::detail::random_strategy(tree, rng);
        auto specs = broadcast_spec(DistortionSpec{0.5, 0.75}, tree.depth);
        auto c = verify::check_full_allocation(tree, theta, specs);
        CHECK_MESSAGE(c.pass, c.detail, " worst ", c.worst);
        auto c1 = verify::check_induced_scaling(tree, theta, specs, false);
        CHECK_MESSAGE(c1.pass, "risk-to-go scaling, worst ", c1.worst);
        auto c2 = verify::check_induced_scaling(tree, theta, specs, true);
        CHECK_MESSAGE(c2.pass, "contribution scaling, worst ", c2.worst);
        auto c3 = verify::check_homogeneity(tree, theta, specs, seed);
        CHECK_MESSAGE(c3.pass, "homogeneity, worst ", c3.worst);
        auto c4 = verify::check_decomposition(tree, theta, specs);
        CHECK_MESSAGE(c4.pass, "decomposition, worst ", c4.worst);
    }
}

TEST_CASE("symmetric two-asset tree gives equal contributions") {
    TreeSpec spec;
    spec.depth = 1;
    spec.n_assets = 2;
    spec.branching = {2};
    spec.explicit_returns.resize(1);
    spec.explicit_probs.resize(1);
    spec.explicit_returns[0] = {Eigen::Vector2d(1.1, 0.9), Eigen::Vector2d(0.9, 1.1)};
    spec.explicit_probs[0] = {0.5, 0.5};
    ScenarioTree tree = build_tree(spec, 0);
    auto theta = unit_strategy(tree);
    auto specs = broadcast_spec(DistortionSpec{0.8, 0.6}, 1);
    auto res = risk_contributions_tree(tree, theta, specs);
    CHECK(res.rc[0][0](0) == doctest::Approx(res.rc[0][0](1)).epsilon(1e-13));
}

TEST_CASE("contributions match the one-sided Gateaux derivative") {
    ScenarioTree tree = random_tree(1313, 1, 2);
    Rng rng(99);
    auto theta = verify::detail::random_strategy(tree, rng);
    auto specs = broadcast_spec(DistortionSpec{0.5, 0.75}, tree.depth);
    auto c = verify::check_gateaux(tree, theta, specs);
    CHECK_MESSAGE(c.pass, "gateaux, worst ", c.worst);
    // and on a deeper tree
    ScenarioTree tree2 = random_tree(777, 2, 2);
    Rng rng2(100);
    auto theta2 = verify::detail::random_strategy(tree2, rng2);
    auto c2 = verify::check_gateaux(tree2, theta2, broadcast_spec(DistortionSpec{0.5, 0.75}, 2));
    CHECK_MESSAGE(c2.pass, "gateaux depth 2, worst ", c2.worst);
}

TEST_CASE("decision-impact cascade") {
    ScenarioTree tree = random_tree(2024, 3, 2);
    Rng rng(7);
    auto theta = verify::detail::random_strategy(tree, rng);
    auto specs = broadcast_spec(DistortionSpec{0.4, 0.8}, tree.depth);
    auto res = risk_contributions_tree(tree, theta, specs);
    // t = T: a single term equal to the contribution itself
    auto terms_T = rc_decomposition(tree, theta, specs, tree.depth - 1, 0, 0);
    REQUIRE(terms_T.size() == 1);
    CHECK(terms_T[0] == doctest::Approx(res.rc[tree.depth - 1][0](0)).epsilon(1e-12));
    // all t: terms sum to the contribution
    for (int t = 0; t < tree.depth; ++t)
        for (int i = 0; i < tree.n_assets; ++i) {
            auto terms = rc_decomposition(tree, theta, specs, t, i, 0);
            CHECK(static_cast<int>(terms.size()) == tree.depth - t);
            double s = 0.0;
            for (double x : terms) s += x;
            CHECK(s == doctest::Approx(res.rc[t][0](i)).epsilon(1e-11));
        }
}

TEST_CASE("mean-case cascade equals iterated plain expectations") {
    // with p = 0 every distortion weight is 1, so the first cascade term is
    // E[theta_{t,i} dX_{t,i}] computed here by direct path enumeration
    ScenarioTree tree = random_tree(515, 2, 2);
    Rng rng(3);
    auto theta = verify::detail::random_strategy(tree, rng);
    auto specs = broadcast_spec(DistortionSpec{0.0, 0.75}, tree.depth);
    auto terms = rc_decomposition(tree, theta, specs, 0, 0, 0);
    auto inc = negative_increments(tree);
    double direct = 0.0;
    for (int c = 0; c < tree.n_nodes(1); ++c)
        direct += tree.node(1, c).prob * theta[0][0](0) * inc[0][c](0);
    CHECK(terms[0] == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("scale_strategy homogeneity (time-local and tail)") {
    ScenarioTree tree = random_tree(808, 3, 2);
    Rng rng(8);
    auto theta = verify::detail::random_strategy(tree, rng);
    auto specs = broadcast_spec(DistortionSpec{0.5, 0.75}, tree.depth);
    auto R = risk_to_go_tree(tree, theta, specs);

    std::vector<double> a(tree.depth, 1.0);
    a[1] = 2.0; // scale time 1 only
    auto R2 = risk_to_go_tree(tree, scale_strategy(theta, a), specs);
    for (std::size_t m = 0; m < R[1].size(); ++m)
        CHECK(R2[1][m] == doctest::Approx(2.0 * R[1][m]).epsilon(1e-12));
    for (std::size_t m = 0; m < R[2].size(); ++m)
        CHECK(R2[2][m] == doctest::Approx(R[2][m]).epsilon(1e-12));

    std::vector<double> tail(tree.depth, 1.0);
    tail[1] = tail[2] = 2.0; // scale from time 1 onward
    auto res = risk_contributions_tree(tree, theta, specs);
    auto res2 = risk_contributions_tree(tree, scale_strategy(theta, tail), specs);
    for (std::size_t m = 0; m < res.rc[1].size(); ++m) {
        CHECK(res2.risk_to_go[1][m] == doctest::Approx(2.0 * res.risk_to_go[1][m]).epsilon(1e-12));
        for (int i = 0; i < tree.n_assets; ++i)
            CHECK(res2.rc[1][m](i) == doctest::Approx(2.0 * res.rc[1][m](i)).epsilon(1e-12));
    }
    CHECK_THROWS(scale_strategy(theta, std::vector<double>(tree.depth, -1.0)));
}

TEST_CASE("cash asset carries zero contribution (single period)") {
    // append a constant-price asset; the risky contribution and the total
    // risk are unchanged and the cash row contributes nothing
    ScenarioTree risky = random_tree(606, 1, 2);
    TreeSpec spec;
    spec.depth = 1;
    spec.n_assets = 3;
    spec.branching = {3};
    spec.explicit_returns.resize(1);
    spec.explicit_probs.resize(1);
    for (int c = 0; c < risky.n_nodes(1); ++c) {
        Eigen::VectorXd r(3);
        for (int i = 0; i < 2; ++i)
            r(i) = risky.node(1, c).prices(i) / risky.node(0, 0).prices(i);
        r(2) = 1.0;
        spec.explicit_returns[0].push_back(r);
        spec.explicit_probs[0].push_back(risky.node(1, c).prob);
    }
    ScenarioTree both = build_tree(spec, 0);
    auto specs = broadcast_spec(DistortionSpec{0.7, 0.8}, 1);

    TreeStrategy th2(1), th3(1);
    th2[0] = {Eigen::Vector2d(1.3, 0.6)};
    Eigen::VectorXd withcash(3);
    withcash << 1.3, 0.6, 2.5;
    th3[0] = {withcash};

    // restrict the 3-asset tree back to the risky pair for the baseline
    TreeSpec spec2 = spec;
    spec2.n_assets = 2;
    for (auto& r : spec2.explicit_returns[0]) r = r.head(2).eval();
    ScenarioTree pair = build_tree(spec2, 0);

    auto base = risk_contributions_tree(pair, th2, specs);
    auto ext = risk_contributions_tree(both, th3, specs);
    CHECK(ext.risk_to_go[0][0] == doctest::Approx(base.risk_to_go[0][0]).epsilon(1e-12));
    CHECK(ext.rc[0][0](0) == doctest::Approx(base.rc[0][0](0)).epsilon(1e-12));
    CHECK(ext.rc[0][0](1) == doctest::Approx(base.rc[0][0](1)).epsilon(1e-12));
    CHECK(ext.rc[0][0](2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("risk_to_go_mc plumbing") {
    // T = 0: no critic needed, matches the empirical distortion
    Rng rng(9);
    std::vector<Eigen::MatrixXd> prices(2);
    prices[0] = Eigen::MatrixXd::Constant(64, 1, 1.0);
    prices[1].resize(64, 1);
    for (int i = 0; i < 64; ++i) prices[1](i, 0) = 0.5 + rng.uniform();
    StrategyTensor strat;
    strat.theta = {Eigen::MatrixXd::Constant(64, 1, 2.0)};
    DistortionSpec spec{0.5, 0.75};
    auto R = risk_to_go_mc(prices, strat, {spec}, nullptr);
    std::vector<double> sample;
    for (int i = 0; i < 64; ++i) sample.push_back(2.0 * (prices[0](i, 0) - prices[1](i, 0)));
    CHECK(R[0](0) == doctest::Approx(distortion_empirical(spec, sample)).epsilon(1e-12));

    // T > 0 requires a critic and passes it through
    StrategyTensor strat2;
    strat2.theta = {Eigen::MatrixXd::Constant(64, 1, 1.0),
                    Eigen::MatrixXd::Constant(64, 1, 1.0)};
    CHECK_THROWS(risk_to_go_mc(prices, strat2, broadcast_spec(spec, 2), nullptr));
    CriticFn critic = [](int t) { return Eigen::VectorXd::Constant(64, 1.0 + t); };
    auto R2 = risk_to_go_mc(prices, strat2, broadcast_spec(spec, 2), critic);
    CHECK(R2[1](5) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("enumerated paths agree with the tree measure") {
    ScenarioTree tree = random_tree(4242, 3, 2);
    auto paths = enumerate_tree_paths(tree);
    double s = 0.0;
    for (double q : paths.probs) s += q;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(paths.probs.size() == tree.n_paths());
}
