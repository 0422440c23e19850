#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "drb/mathutil.hpp"
#include "drb/oracle.hpp"
#include "drb/portfolio.hpp"
#include "drb/tree.hpp"
#include "drb/verify.hpp"

using namespace drb;

namespace {

ScenarioTree random_tree(std::uint64_t seed, int depth, int assets, int branch) {
    TreeSpec spec;
    spec.depth = depth;
    spec.n_assets = assets;
    spec.branching.assign(depth, branch);
    spec.random_probs = true;
    spec.crash_branch = true;
    return build_tree(spec, seed);
}

} // namespace

TEST_CASE("gaussian contribution formula verified against Monte Carlo") {
    // gate the closed form before it is trusted as an oracle anywhere else
    const int n = 3;
    Eigen::VectorXd mu(n);
    mu << 0.01, -0.02, 0.015;
    Eigen::MatrixXd A(n, n);
    A << 0.9, 0.2, -0.1, 0.3, 1.1, 0.25, -0.2, 0.15, 0.8;
    Eigen::MatrixXd Sigma = 0.01 * (A * A.transpose());
    Eigen::VectorXd theta(n);
    theta << 1.5, 0.7, 1.1;
    const double alpha = 0.9, p = 0.7;

    Eigen::VectorXd rc = oracle::gaussian_es_contributions(mu, Sigma, theta, alpha, p);

    // full allocation against the closed-form portfolio risk
    double sd = std::sqrt(theta.dot(Sigma * theta));
    double rho_formula =
        p * (theta.dot(mu) + sd * norm_pdf(norm_inv_cdf(alpha)) / (1.0 - alpha)) +
        (1.0 - p) * theta.dot(mu);
    CHECK(rc.sum() == doctest::Approx(rho_formula).epsilon(1e-12));

    // Monte Carlo estimate of E[theta_i L_i gamma(U)]
    const int N = 2000000;
    Eigen::MatrixXd Lchol = Sigma.llt().matrixL();
    Rng rng(42);
    Eigen::MatrixXd losses(N, n);
    Eigen::VectorXd z(n);
    for (int k = 0; k < N; ++k) {
        for (int i = 0; i < n; ++i) z(i) = rng.normal();
        losses.row(k) = (mu + Lchol * z).transpose();
    }
    Eigen::VectorXd port = losses * theta;
    std::vector<double> sample(port.data(), port.data() + N);
    std::vector<double> probs(N, 1.0 / N);
    DiscreteDistribution law{sample, probs};
    DistortionSpec spec{p, alpha};
    std::vector<double> gw = atom_weights(spec, law);
    Eigen::VectorXd rc_mc = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < N; ++k)
        rc_mc += (gw[k] / N) * theta.cwiseProduct(losses.row(k).transpose());
    // sampling error of the tail functional at 2e6 draws is well under 3%
    for (int i = 0; i < n; ++i)
        CHECK(rc_mc(i) == doctest::Approx(rc(i)).epsilon(0.03));
    CHECK(distortion_exact(spec, law) == doctest::Approx(rho_formula).epsilon(0.005));
}

TEST_CASE("static SAA solver hits the budget exactly") {
    Rng rng(7);
    const int n = 3, N = 4000;
    Eigen::MatrixXd losses(N, n);
    for (Eigen::Index i = 0; i < losses.size(); ++i)
        losses.data()[i] = 0.05 * (2.0 * rng.uniform() - 0.8);
    Eigen::VectorXd b(n);
    b << 0.5, 0.3, 0.2;
    DistortionSpec spec{0.5, 0.75};
    auto sol = oracle::solve_static_saa(losses, b, spec);
    REQUIRE(sol.theta.minCoeff() > 0.0);
    // at the optimum of min rho - sum b log theta: rho = sum b = 1, rc = b
    CHECK(sol.rho == doctest::Approx(1.0).epsilon(1e-7));
    for (int i = 0; i < n; ++i) CHECK(sol.rc(i) == doctest::Approx(b(i)).epsilon(1e-6));
    // full allocation is exact by construction
    CHECK(sol.rc.sum() == doctest::Approx(sol.rho).epsilon(1e-12));
}

TEST_CASE("tree risk budgeting: risk-to-go one, contributions equal budgets") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        ScenarioTree tree = random_tree(seed, 2, 3, 3);
        Eigen::VectorXd row(3);
        row << 0.2, 0.5, 0.3;
        RiskBudget budget = RiskBudget::constant(tree.depth, row);
        auto specs = broadcast_spec(DistortionSpec{0.5, 0.75}, tree.depth);
        auto c = verify::check_oracle_identities(tree, budget, specs, 3);
        CHECK_MESSAGE(c.pass, "oracle identities, worst ", c.worst);
    }
}

TEST_CASE("budget transfer to the induced self-financing strategy") {
    ScenarioTree tree = random_tree(21, 2, 2, 3);
    Eigen::VectorXd row(2);
    row << 0.6, 0.4;
    RiskBudget budget = RiskBudget::constant(tree.depth, row);
    auto specs = broadcast_spec(DistortionSpec{0.4, 0.8}, tree.depth);
    auto c = verify::check_budget_transfer(tree, budget, specs);
    CHECK_MESSAGE(c.pass, "budget transfer, worst ", c.worst);
}

TEST_CASE("solver optimum is stable under restarts and perturbations") {
    ScenarioTree tree = random_tree(31, 1, 2, 4);
    Eigen::VectorXd row(2);
    row << 0.45, 0.55;
    RiskBudget budget = RiskBudget::constant(1, row);
    std::vector<DistortionSpec> specs = {DistortionSpec{0.6, 0.7}};
    auto sol = oracle::solve_tree_risk_budgeting(tree, budget, specs);
    for (int r = 1; r <= 10; ++r) {
        auto alt = oracle::solve_tree_risk_budgeting(tree, budget, specs, 1e-10, 1000 + r);
        CHECK((alt.theta[0][0] - sol.theta[0][0]).lpNorm<Eigen::Infinity>() < 1e-5);
    }
    // the objective rises in every perturbed direction (local optimality)
    auto inc = negative_increments(tree);
    auto objective = [&](const Eigen::VectorXd& th) {
        DiscreteDistribution law;
        for (int c = 0; c < tree.n_nodes(1); ++c) {
            law.values.push_back(th.dot(inc[0][c]));
            law.probs.push_back(tree.node(1, c).prob);
        }
        double val = distortion_exact(specs[0], law);
        for (int i = 0; i < 2; ++i) val -= budget.b(0, i) * std::log(th(i));
        return val;
    };
    double at_opt = objective(sol.theta[0][0]);
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
        Eigen::VectorXd d(2);
        d << rng.normal(), rng.normal();
        CHECK(objective(sol.theta[0][0] + 1e-3 * d) >= at_opt - 1e-12);
    }
}

TEST_CASE("solver input validation") {
    ScenarioTree tree = random_tree(41, 2, 2, 2);
    Eigen::VectorXd row(2);
    row << 0.5, 0.5;
    RiskBudget wrong = RiskBudget::constant(3, row); // wrong horizon
    auto specs = broadcast_spec(DistortionSpec{0.5, 0.75}, 2);
    CHECK_THROWS(oracle::solve_tree_risk_budgeting(tree, wrong, specs));
    Eigen::MatrixXd losses = Eigen::MatrixXd::Random(1, 2); // too few samples
    CHECK_THROWS(oracle::solve_static_saa(losses, row, DistortionSpec{0.5, 0.75}));
}
