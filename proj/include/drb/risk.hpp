#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace drb {

// Mean-ES mixture rho = p * ES_alpha + (1-p) * E, as a distortion risk
// measure with weight gamma(u) = p/(1-alpha) * 1{u>=alpha} + (1-p).
struct DistortionSpec {
    double p = 0.5;
    double alpha = 0.75;

    void validate() const {
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("DistortionSpec: p must be in [0,1]");
        if (!(alpha >= 0.0 && alpha < 1.0))
            throw std::invalid_argument("DistortionSpec: alpha must be in [0,1)");
    }

    // Upper bound of the weight function, gamma(1).
    double gamma_max() const { return p / (1.0 - alpha) + (1.0 - p); }
};

inline double gamma_weight(const DistortionSpec& spec, double u) {
    if (!(u >= 0.0 && u <= 1.0))
        throw std::domain_error("gamma_weight: u must be in [0,1]");
    return (u >= spec.alpha ? spec.p / (1.0 - spec.alpha) : 0.0) + (1.0 - spec.p);
}

// Closed-form integral of gamma over [a,b] (gamma is piecewise constant).
inline double gamma_integral(const DistortionSpec& spec, double a, double b) {
    double tail = std::max(0.0, b - std::max(a, spec.alpha));
    return (1.0 - spec.p) * (b - a) + spec.p / (1.0 - spec.alpha) * tail;
}

struct DiscreteDistribution {
    std::vector<double> values;
    std::vector<double> probs;

    void validate() const {
        if (values.size() != probs.size() || values.empty())
            throw std::invalid_argument("DiscreteDistribution: size mismatch or empty");
        double s = 0.0, comp = 0.0; // Kahan, so large supports stay within tolerance
        for (double q : probs) {
            if (!(q > 0.0))
                throw std::invalid_argument("DiscreteDistribution: probs must be positive");
            double y = q - comp;
            double tt = s + y;
            comp = (tt - s) - y;
            s = tt;
        }
        if (std::fabs(s - 1.0) > 1e-12)
            throw std::invalid_argument("DiscreteDistribution: probs must sum to 1");
    }
};

namespace detail {

inline std::vector<std::size_t> ascending_order(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    return idx;
}

} // namespace detail

// rho(Z) = sum_k z_(k) * Integral_{P_{k-1}}^{P_k} gamma(u) du over the sorted
// atoms; exact on discrete laws.
inline double distortion_exact(const DistortionSpec& spec, const DiscreteDistribution& dist) {
    spec.validate();
    dist.validate();
    auto order = detail::ascending_order(dist.values);
    double acc = 0.0, cum = 0.0;
    for (std::size_t k : order) {
        double lo = cum;
        cum += dist.probs[k];
        acc += dist.values[k] * gamma_integral(spec, lo, std::min(cum, 1.0));
    }
    return acc;
}

// Per-atom average weight gbar_k = (1/p_k) Integral over the atom's quantile
// block, with tied values merged into one atom first. Returned aligned with
// the input order (tied inputs share their merged atom's weight), so that
// sum_k probs[k] * values[k] * gbar[k] == distortion_exact exactly.
inline std::vector<double> atom_weights(const DistortionSpec& spec,
                                        const DiscreteDistribution& dist) {
    spec.validate();
    dist.validate();
    auto order = detail::ascending_order(dist.values);
    std::vector<double> weights(dist.values.size(), 0.0);
    double cum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        // merge the run of equal values
        std::size_t j = i;
        double mass = 0.0;
        while (j < order.size() && dist.values[order[j]] == dist.values[order[i]]) {
            mass += dist.probs[order[j]];
            ++j;
        }
        double w = gamma_integral(spec, cum, std::min(cum + mass, 1.0)) / mass;
        for (std::size_t k = i; k < j; ++k) weights[order[k]] = w;
        cum += mass;
        i = j;
    }
    return weights;
}

// Empirical (VaR, ES) of a sample at level alpha. VaR is the left-continuous
// inverse of the empirical cdf; ES comes from the distortion integral with
// p=1 on equiprobable atoms, so the pair is consistent with distortion_exact.
inline std::pair<double, double> empirical_var_es(std::vector<double> sample, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw std::domain_error("empirical_var_es: alpha must be in [0,1)");
    const std::size_t n = sample.size();
    if (static_cast<double>(n) < 1.0 / (1.0 - alpha))
        throw std::invalid_argument("empirical_var_es: sample too small for alpha");
    std::sort(sample.begin(), sample.end());
    std::size_t k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
    if (k > 0) --k; // left-continuous inverse, 0-based
    double var = sample[k];

    DistortionSpec es_spec{1.0, alpha};
    double q = 1.0 / static_cast<double>(n);
    double es = 0.0, cum = 0.0;
    for (double z : sample) { // already sorted
        es += z * gamma_integral(es_spec, cum, std::min(cum + q, 1.0));
        cum += q;
    }
    return {var, es};
}

// Empirical estimate of the full mixture on an equiprobable sample.
inline double distortion_empirical(const DistortionSpec& spec, const std::vector<double>& sample) {
    DiscreteDistribution d;
    d.values = sample;
    d.probs.assign(sample.size(), 1.0 / static_cast<double>(sample.size()));
    return distortion_exact(spec, d);
}

} // namespace drb
