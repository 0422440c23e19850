#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/risk.hpp"

namespace drb {

struct ScoreConfig {
    double D = 1.0;            // positive offset in the log terms
    double z_lo = -1.0;        // cdf grid truncation limits
    double z_hi = 1.0;
    int L = 64;                // grid size
    double penalty_weight = 1.0;

    void validate() const {
        if (!(D > 0)) throw std::invalid_argument("ScoreConfig: D must be positive");
        if (!(z_lo < z_hi)) throw std::invalid_argument("ScoreConfig: z_lo < z_hi required");
        if (L < 2) throw std::invalid_argument("ScoreConfig: L >= 2");
        if (penalty_weight < 0)
            throw std::invalid_argument("ScoreConfig: penalty_weight >= 0");
    }

    double dz() const { return (z_hi - z_lo) / (L - 1); }
    double grid_point(int l) const { return z_lo + l * dz(); }
};

// Strictly consistent score for the (VaR, ES, rho) triple of the mean-ES
// mixture: z1 ~ VaR, z2 ~ ES, z3 ~ rho, y the realized loss. Finite up to an
// additive y-only term.
inline double score_rho(const DistortionSpec& spec, double z1, double z2, double z3, double y,
                        double D) {
    if (!(spec.p > 0.0 && spec.p < 1.0))
        throw std::invalid_argument("score_rho: requires p in (0,1)");
    if (!(z2 + D > 0.0))
        throw std::domain_error("score_rho: z2 + D must be positive, got z2 = " +
                                std::to_string(z2) + " (D too small for the loss scale?)");
    if (!(y + D > 0.0))
        throw std::domain_error("score_rho: y + D must be positive, got y = " + std::to_string(y));

    const double alpha = spec.alpha, p = spec.p;
    double ind_le = y <= z1 ? 1.0 : 0.0;
    double s = std::log((z2 + D) / (y + D)) - z2 / (z2 + D) +
               ((ind_le - alpha) * z1 + (1.0 - ind_le) * y) / ((z2 + D) * (1.0 - alpha)) +
               ((z3 - p * z2) / (1.0 - p) - y) * ((z3 - p * z2) / (1.0 - p) - y);
    return s;
}

// CRPS-style cdf score on the truncated grid: sum_l (F(z_l) - 1{z_l >= y})^2 dz.
inline double score_cdf(const std::vector<double>& F, double y, const ScoreConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(F.size()) != cfg.L)
        throw std::invalid_argument("score_cdf: F must have L grid values");
    double s = 0.0;
    const double dz = cfg.dz();
    for (int l = 0; l < cfg.L; ++l) {
        double f = F[l];
        if (!(f >= 0.0 && f <= 1.0))
            throw std::domain_error("score_cdf: F values must lie in [0,1]");
        double ind = cfg.grid_point(l) >= y ? 1.0 : 0.0;
        s += (f - ind) * (f - ind) * dz;
    }
    return s;
}

// Forward-difference monotonicity penalty: sum_l min(0, dF/dz)^2 dz * weight.
inline double monotonicity_penalty(const std::vector<double>& F, const ScoreConfig& cfg) {
    if (F.size() < 2)
        throw std::invalid_argument("monotonicity_penalty: need grid length >= 2");
    double s = 0.0;
    const double dz = cfg.dz();
    for (std::size_t l = 0; l + 1 < F.size(); ++l) {
        double slope = (F[l + 1] - F[l]) / dz;
        if (slope < 0.0) s += slope * slope * dz;
    }
    return s * cfg.penalty_weight;
}

} // namespace drb
