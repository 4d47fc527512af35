#include "pomle/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace pomle {

double hilbert_metric(const std::vector<double>& f, const std::vector<double>& g) {
    if (f.size() != g.size())
        throw std::invalid_argument("hilbert_metric: size mismatch");
    const double inf = std::numeric_limits<double>::infinity();
    bool f_any = false, g_any = false, zero_ratio = false;
    double log_min = inf, log_max = -inf;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] < 0.0 || g[i] < 0.0)
            throw std::invalid_argument("hilbert_metric: negative input");
        if (f[i] > 0.0) f_any = true;
        if (g[i] > 0.0) {
            g_any = true;
            if (f[i] > 0.0) {
                double lr = std::log(f[i]) - std::log(g[i]);
                if (lr < log_min) log_min = lr;
                if (lr > log_max) log_max = lr;
            } else {
                zero_ratio = true;
            }
        } else if (f[i] > 0.0) {
            return inf;  // f has mass where g vanishes
        }
    }
    if (!f_any || !g_any)
        throw std::invalid_argument("hilbert_metric: identically zero input");
    if (log_max == -inf) return inf;  // f vanishes on all of {g > 0}
    double r = zero_ratio ? 0.0 : std::exp(log_min - log_max);
    return (1.0 - r) / (1.0 + r);
}

double hilbert_metric(const GridDensity& f, const GridDensity& g) {
    if (!(f.grid == g.grid))
        throw std::invalid_argument("hilbert_metric: grid mismatch");
    return hilbert_metric(f.values, g.values);
}

double tv_distance(const GridDensity& mu, const GridDensity& nu) {
    if (!(mu.grid == nu.grid))
        throw std::invalid_argument("tv_distance: grid mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.values.size(); ++i)
        s += std::abs(mu.values[i] - nu.values[i]);
    return 0.5 * s * mu.grid.cell_volume();
}

double oscillation(const std::vector<std::vector<double>>& path) {
    if (path.empty()) throw std::invalid_argument("oscillation: empty path");
    const std::size_t m = path.front().size();
    std::vector<double> lo(path.front()), hi(path.front());
    for (const auto& y : path) {
        if (y.size() != m)
            throw std::invalid_argument("oscillation: ragged path");
        for (std::size_t j = 0; j < m; ++j) {
            if (y[j] < lo[j]) lo[j] = y[j];
            if (y[j] > hi[j]) hi[j] = y[j];
        }
    }
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        double range = hi[j] - lo[j];
        s += range * range;
    }
    return std::sqrt(s);
}

double oscillation(const std::vector<double>& path) {
    if (path.empty()) throw std::invalid_argument("oscillation: empty path");
    double lo = path.front(), hi = path.front();
    for (double y : path) {
        if (y < lo) lo = y;
        if (y > hi) hi = y;
    }
    return hi - lo;
}

void ContractionAudit::save_csv(const std::string& path) const {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot open " + path);
    std::fprintf(fp, "window,t_begin,t_end,H_before,H_after,gamma_hat,osc\n");
    for (const auto& w : windows)
        std::fprintf(fp, "%zu,%.10g,%.10g,%.17g,%.17g,%.17g,%.17g\n", w.index,
                     w.t_begin, w.t_end, w.h_before, w.h_after, w.gamma_hat,
                     w.osc);
    std::fclose(fp);
}

ContractionAudit contraction_audit(const DiffusionModel& model,
                                   const ObservationRecord& obs,
                                   const GridDensity& nu,
                                   const GridDensity& nu_prime,
                                   std::size_t window_steps) {
    if (window_steps == 0)
        throw std::invalid_argument("contraction_audit: zero window");
    FilterState a = filter_init(model, nu);
    FilterState b = filter_init(model, nu_prime);
    b.op = a.op;  // identical operator, share it
    b.h_nodes = a.h_nodes;
    const double dt = obs.dt();

    ContractionAudit audit;
    std::size_t n_windows = obs.steps() / window_steps;
    audit.windows.reserve(n_windows);

    // Cumulative Y path for per-window oscillation.
    std::vector<double> cumY(model.m, 0.0);

    for (std::size_t w = 0; w < n_windows; ++w) {
        ContractionWindow rec;
        rec.index = w;
        rec.t_begin = a.t;
        rec.h_before = hilbert_metric(a.density, b.density);

        std::vector<std::vector<double>> ypath;
        ypath.reserve(window_steps + 1);
        ypath.push_back(cumY);
        for (std::size_t k = 0; k < window_steps; ++k) {
            const auto& dY = obs.dY[w * window_steps + k];
            filter_step(a, dY, dt);
            filter_step(b, dY, dt);
            for (int j = 0; j < model.m; ++j) cumY[j] += dY[j];
            ypath.push_back(cumY);
        }

        rec.t_end = a.t;
        rec.h_after = hilbert_metric(a.density, b.density);
        rec.osc = oscillation(ypath);
        rec.exact_agreement = (rec.h_before == 0.0);
        if (rec.exact_agreement) {
            rec.gamma_hat = std::numeric_limits<double>::quiet_NaN();
            ++audit.n_exact;
        } else {
            rec.gamma_hat = -std::log(rec.h_after / rec.h_before);
            if (rec.h_after > rec.h_before) {
                rec.increased = true;
                ++audit.n_increased;
            }
        }
        audit.windows.push_back(std::move(rec));
    }
    return audit;
}

}  // namespace pomle
