#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drb/market.hpp"
#include "drb/trainer.hpp"

namespace drb::io {

// Completed artifacts are never half-written: content goes to a sibling tmp
// file first and is moved into place atomically.
inline void atomic_write(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
        f << content;
        if (!f) throw std::runtime_error("atomic_write: short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// path,t,asset,price — the decision-grid price dump
inline std::string paths_csv(const PricePaths& paths) {
    std::ostringstream os;
    os << "path,t,asset,price\n";
    for (std::size_t p = 0; p < paths.n_paths(); ++p)
        for (int t = 0; t < paths.n_times(); ++t)
            for (int a = 0; a < paths.n_assets(); ++a)
                os << p << ',' << t << ',' << a << ','
                   << format_double(paths.prices[t](p, a)) << '\n';
    return os.str();
}

inline std::string stats_csv(const TerminalStats& s) {
    std::ostringstream os;
    const int n = static_cast<int>(s.mean.size());
    os << "asset,mean,std,sharpe";
    for (int j = 0; j < n; ++j) os << ",corr" << j;
    os << '\n';
    for (int i = 0; i < n; ++i) {
        os << i << ',' << format_double(s.mean(i)) << ',' << format_double(s.stddev(i)) << ','
           << format_double(s.sharpe(i));
        for (int j = 0; j < n; ++j) os << ',' << format_double(s.correlation(i, j));
        os << '\n';
    }
    return os.str();
}

// node,t,asset,rc,risk_to_go — per tree node (strategy diff format)
inline std::string tree_rc_csv(const TreeRiskResult& r) {
    std::ostringstream os;
    os << "node,t,asset,rc,risk_to_go\n";
    for (std::size_t t = 0; t < r.rc.size(); ++t)
        for (std::size_t m = 0; m < r.rc[t].size(); ++m)
            for (int a = 0; a < r.rc[t][m].size(); ++a)
                os << m << ',' << t << ',' << a << ',' << format_double(r.rc[t][m](a)) << ','
                   << format_double(r.risk_to_go[t][m]) << '\n';
    return os.str();
}

// node,t,asset,theta — tree strategy export (same schema for oracle/trainer)
inline std::string tree_strategy_csv(const TreeStrategy& theta) {
    std::ostringstream os;
    os << "node,t,asset,theta\n";
    for (std::size_t t = 0; t < theta.size(); ++t)
        for (std::size_t m = 0; m < theta[t].size(); ++m)
            for (int a = 0; a < theta[t][m].size(); ++a)
                os << m << ',' << t << ',' << a << ',' << format_double(theta[t][m](a))
                   << '\n';
    return os.str();
}

inline std::string diagnostics_csv(const std::vector<train::DiagnosticsRow>& rows) {
    std::ostringstream os;
    os << "iter,t,asset,rc,rc_std,risk_to_go,risk_to_go_std,score_rho,score_cdf,lr\n";
    for (const auto& r : rows)
        os << r.iter << ',' << r.t << ',' << r.asset << ',' << format_double(r.rc) << ','
           << format_double(r.rc_std) << ',' << format_double(r.risk_to_go) << ','
           << format_double(r.risk_to_go_std) << ',' << format_double(r.score_rho) << ','
           << format_double(r.score_cdf) << ',' << format_double(r.lr) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Minimal standalone SVG line charts (no plotting dependency; the CSV stays
// the source of truth, the chart embeds its own data points).
// ---------------------------------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> y;
};

inline std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                                  const std::string& x_label = "iteration") {
    const double W = 860, Hh = 480, ml = 70, mr = 170, mt = 45, mb = 50;
    double lo = 1e300, hi = -1e300;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (n < 2 || !(hi > -1e300)) throw std::invalid_argument("svg_line_chart: empty series");
    if (hi - lo < 1e-12) { hi += 1.0; lo -= 1.0; }
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto xs = [&](std::size_t i) {
        return ml + (W - ml - mr) * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    auto ys = [&](double v) { return mt + (Hh - mt - mb) * (hi - v) / (hi - lo); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh
       << "\" viewBox=\"0 0 " << W << ' ' << Hh << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
       << title << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        double v = lo + (hi - lo) * k / 4.0;
        double y = ys(v);
        os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << W - mr << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n<text x=\"" << ml - 8 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-size=\"11\">" << std::setprecision(4) << v
           << "</text>\n";
    }
    os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << Hh - 12
       << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << colors[s % 8]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].y.size(); ++i)
            os << xs(i) << ',' << ys(series[s].y[i]) << ' ';
        os << "\"/>\n";
        double ly = mt + 16.0 * static_cast<double>(s);
        os << "<line x1=\"" << W - mr + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 34
           << "\" y2=\"" << ly << "\" stroke=\"" << colors[s % 8] << "\" stroke-width=\"2\"/>\n"
           << "<text x=\"" << W - mr + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
           << series[s].label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// Every run drops a manifest next to its artifacts: config echo, seed, code
// version, wall time. Reruns with identical manifest inputs reproduce the
// same CSVs byte for byte.
inline void write_manifest(const std::string& dir, const nlohmann::json& config_echo,
                           std::uint64_t seed, double walltime_seconds,
                           const std::string& version) {
    nlohmann::json m;
    m["config"] = config_echo;
    m["seed"] = seed;
    m["version"] = version;
    m["walltime_seconds"] = walltime_seconds;
    atomic_write(dir + "/manifest.json", m.dump(2) + "\n");
}

} // namespace drb::io
