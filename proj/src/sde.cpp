#include "pomle/sde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pomle/parallel.hpp"
#include "pomle/rng.hpp"

namespace pomle {

namespace {

Vec draw_initial(const SimulationConfig& cfg, int q, RngStream& rng) {
    if (cfg.initial_point) {
        if (static_cast<int>(cfg.initial_point->size()) != q)
            throw std::invalid_argument("initial point dimension mismatch");
        return *cfg.initial_point;
    }
    if (cfg.initial_density) {
        const GridDensity& d = *cfg.initial_density;
        if (d.grid.q != q)
            throw std::invalid_argument("initial density dimension mismatch");
        // Inverse-CDF sample over cells, then uniform within the cell.
        double u = rng.uniform();
        double acc = 0.0;
        std::size_t cell = d.values.size() - 1;
        for (std::size_t i = 0; i < d.values.size(); ++i) {
            acc += d.values[i] * d.grid.cell_volume();
            if (u <= acc) {
                cell = i;
                break;
            }
        }
        Vec x(q);
        d.grid.node(cell, x.data());
        for (int k = 0; k < q; ++k)
            x[k] += (rng.uniform() - 0.5) * d.grid.dx();
        return x;
    }
    throw std::invalid_argument("SimulationConfig: no initial law given");
}

void fit_log_linear(const std::vector<double>& t, const std::vector<double>& y,
                    double& slope, double& r2) {
    // Least squares on (t, y); r2 of the fit.
    const std::size_t n = t.size();
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        st += t[i];
        sy += y[i];
        stt += t[i] * t[i];
        sty += t[i] * y[i];
    }
    double denom = n * stt - st * st;
    slope = denom != 0.0 ? (n * sty - st * sy) / denom : 0.0;
    double intercept = (sy - slope * st) / n;
    double ss_res = 0, ss_tot = 0, mean_y = sy / n;
    for (std::size_t i = 0; i < n; ++i) {
        double fit = intercept + slope * t[i];
        ss_res += (y[i] - fit) * (y[i] - fit);
        ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
    }
    r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
}

}  // namespace

void ObservationRecord::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    const int m = dY.empty() ? 0 : static_cast<int>(dY[0].size());
    const int qh = hidden_X.empty() ? 0 : static_cast<int>(hidden_X[0].size());
    out << "t";
    for (int j = 0; j < m; ++j) out << ",dY_" << (j + 1);
    for (int j = 0; j < qh; ++j) out << ",X_" << (j + 1);
    out << "\n";
    out.precision(17);
    for (std::size_t k = 0; k < dY.size(); ++k) {
        out << times[k];
        for (int j = 0; j < m; ++j) out << "," << dY[k][j];
        for (int j = 0; j < qh; ++j) out << "," << hidden_X[k][j];
        out << "\n";
    }
}

ObservationRecord ObservationRecord::load_csv(const std::string& path, int m,
                                              int q_hidden) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    ObservationRecord rec;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        rec.times.push_back(std::stod(tok));
        std::vector<double> dy(m);
        for (int j = 0; j < m; ++j) {
            std::getline(ss, tok, ',');
            dy[j] = std::stod(tok);
        }
        rec.dY.push_back(std::move(dy));
        if (q_hidden > 0) {
            Vec x(q_hidden);
            for (int j = 0; j < q_hidden; ++j) {
                std::getline(ss, tok, ',');
                x[j] = std::stod(tok);
            }
            rec.hidden_X.push_back(std::move(x));
        }
    }
    if (rec.times.size() >= 2)
        rec.times.push_back(rec.times.back() +
                            (rec.times[1] - rec.times[0]));
    else if (rec.times.size() == 1)
        rec.times.push_back(rec.times[0]);
    return rec;
}

void ObservationRecord::save_binary(const std::string& path, int q, int m) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    const char magic[8] = {'P', 'O', 'M', 'L', 'E', 'O', 'B', '1'};
    out.write(magic, 8);
    std::uint32_t q32 = q, m32 = m;
    std::uint64_t k = dY.size(), hidden = hidden_X.empty() ? 0 : 1;
    double dt_v = dt();
    out.write(reinterpret_cast<const char*>(&q32), 4);
    out.write(reinterpret_cast<const char*>(&m32), 4);
    out.write(reinterpret_cast<const char*>(&dt_v), 8);
    out.write(reinterpret_cast<const char*>(&k), 8);
    out.write(reinterpret_cast<const char*>(&hidden), 8);
    for (const auto& dy : dY)
        out.write(reinterpret_cast<const char*>(dy.data()),
                  static_cast<std::streamsize>(dy.size() * 8));
    if (hidden)
        for (const auto& x : hidden_X)
            out.write(reinterpret_cast<const char*>(x.data()),
                      static_cast<std::streamsize>(x.size() * 8));
}

ObservationRecord ObservationRecord::load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "POMLEOB1", 8) != 0)
        throw std::runtime_error("bad observation container header in " + path);
    std::uint32_t q32, m32;
    std::uint64_t k, hidden;
    double dt_v;
    in.read(reinterpret_cast<char*>(&q32), 4);
    in.read(reinterpret_cast<char*>(&m32), 4);
    in.read(reinterpret_cast<char*>(&dt_v), 8);
    in.read(reinterpret_cast<char*>(&k), 8);
    in.read(reinterpret_cast<char*>(&hidden), 8);
    ObservationRecord rec;
    rec.times.resize(k + 1);
    for (std::size_t i = 0; i <= k; ++i) rec.times[i] = dt_v * static_cast<double>(i);
    rec.dY.assign(k, std::vector<double>(m32));
    for (auto& dy : rec.dY)
        in.read(reinterpret_cast<char*>(dy.data()),
                static_cast<std::streamsize>(dy.size() * 8));
    if (hidden) {
        rec.hidden_X.assign(k + 1, Vec(q32));
        for (auto& x : rec.hidden_X)
            in.read(reinterpret_cast<char*>(x.data()),
                    static_cast<std::streamsize>(x.size() * 8));
    }
    if (!in) throw std::runtime_error("truncated observation container " + path);
    return rec;
}

ObservationRecord simulate_signal_observation(const DiffusionModel& model,
                                              const SimulationConfig& cfg,
                                              bool keep_hidden) {
    if (!(cfg.dt_sim > 0)) throw std::invalid_argument("dt_sim must be positive");
    if (cfg.T < 0) throw std::invalid_argument("T must be nonnegative");
    RngStream rng(cfg.seed);
    const auto K = static_cast<std::size_t>(std::llround(cfg.T / cfg.dt_sim));
    const double dt = K > 0 ? cfg.T / static_cast<double>(K) : cfg.dt_sim;
    const double sqrt_dt = std::sqrt(dt);

    Vec x = draw_initial(cfg, model.q, rng);
    std::vector<double> bq(model.q), sig(static_cast<std::size_t>(model.q) * model.d),
        hm(model.m);

    ObservationRecord rec;
    rec.times.resize(K + 1);
    rec.dY.resize(K);
    if (keep_hidden) {
        rec.hidden_X.reserve(K + 1);
        rec.hidden_X.push_back(x);
    }
    for (std::size_t k = 0; k < K; ++k) {
        rec.times[k] = dt * static_cast<double>(k);
        model.h(x.data(), hm.data());
        rec.dY[k].resize(model.m);
        for (int j = 0; j < model.m; ++j)
            rec.dY[k][j] = hm[j] * dt + sqrt_dt * rng.normal();

        model.b(x.data(), bq.data());
        model.sigma(x.data(), sig.data());
        // Signal noise independent of the observation noise.
        static thread_local std::vector<double> dB;
        dB.resize(model.d);
        for (int j = 0; j < model.d; ++j) dB[j] = sqrt_dt * rng.normal();
        for (int i = 0; i < model.q; ++i) {
            double inc = bq[i] * dt;
            for (int j = 0; j < model.d; ++j) inc += sig[i * model.d + j] * dB[j];
            x[i] += inc;
            if (!std::isfinite(x[i]))
                throw std::runtime_error("simulate_signal_observation: blow-up at step " +
                                         std::to_string(k));
        }
        if (keep_hidden) rec.hidden_X.push_back(x);
    }
    rec.times[K] = cfg.T;
    return rec;
}

GridDensity stationary_density(const DiffusionModel& model, const TorusGrid& grid,
                               double tol, int max_iters) {
    if (!(tol > 0)) throw std::invalid_argument("stationary_density: tol must be > 0");
    FokkerPlanckOp op(model, grid);
    GridDensity p = GridDensity::uniform(grid);
    const double dt = 0.9 * op.max_stable_dt();
    GridDensity prev = p;
    for (int it = 0; it < max_iters; ++it) {
        prev.values = p.values;
        op.step(p, dt, Scheme::Explicit);
        double l1 = 0.0;
        for (std::size_t i = 0; i < p.values.size(); ++i)
            l1 += std::abs(p.values[i] - prev.values[i]) * grid.cell_volume();
        if (l1 < tol) {
            double min_v = *std::min_element(p.values.begin(), p.values.end());
            if (!(min_v > 0.0))
                throw std::runtime_error(
                    "stationary_density: fixed point not strictly positive");
            return p;
        }
    }
    throw std::runtime_error("stationary_density: no convergence within iteration cap");
}

CouplingResult simulate_coupled_pair(const DiffusionModel& model,
                                     const GridDensity& nu,
                                     const GridDensity& nu_prime,
                                     const SimulationConfig& cfg,
                                     double dx_couple, bool keep_paths) {
    const int q = model.q;
    if (model.d != q)
        throw std::invalid_argument("simulate_coupled_pair: requires d == q");
    if (dx_couple <= 0.0) dx_couple = 0.5 * nu.grid.dx();

    RngStream rng(cfg.seed);
    SimulationConfig init_cfg;
    init_cfg.initial_density = nu;
    Vec xt = draw_initial(init_cfg, q, rng);
    init_cfg.initial_density = nu_prime;
    Vec xb = draw_initial(init_cfg, q, rng);

    const auto K = static_cast<std::size_t>(std::llround(cfg.T / cfg.dt_sim));
    const double dt = K > 0 ? cfg.T / static_cast<double>(K) : cfg.dt_sim;
    const double sqrt_dt = std::sqrt(dt);

    auto nearest_offset = [q](const Vec& a, const Vec& b, Vec& l) {
        l.resize(q);
        double dist2 = 0.0;
        for (int i = 0; i < q; ++i) {
            l[i] = std::round(a[i] - b[i]);
            double d = a[i] - b[i] - l[i];
            dist2 += d * d;
        }
        return std::sqrt(dist2);
    };

    CouplingResult res;
    res.times.reserve(keep_paths ? K + 1 : 0);
    Vec l0;
    double dist = nearest_offset(xt, xb, l0);
    bool coupled = dist < dx_couple;
    if (coupled) res.tau = 0.0;

    std::vector<double> bt(q), bb(q), st(static_cast<std::size_t>(q) * q),
        sb(static_cast<std::size_t>(q) * q), z(q), yt(q), yb(q);
    std::vector<double> sinv(static_cast<std::size_t>(q) * q);
    std::vector<std::vector<double>> frame;  // q-1 orthonormal complement vectors

    auto invert = [q](const std::vector<double>& s, std::vector<double>& inv) {
        if (q == 1) {
            if (std::abs(s[0]) < 1e-14)
                throw std::runtime_error("simulate_coupled_pair: sigma not invertible");
            inv[0] = 1.0 / s[0];
            return;
        }
        double det = s[0] * s[3] - s[1] * s[2];
        if (std::abs(det) < 1e-14)
            throw std::runtime_error("simulate_coupled_pair: sigma not invertible");
        inv[0] = s[3] / det;
        inv[1] = -s[1] / det;
        inv[2] = -s[2] / det;
        inv[3] = s[0] / det;
    };
    auto matvec = [q](const std::vector<double>& mtx, const std::vector<double>& v,
                      std::vector<double>& out) {
        for (int i = 0; i < q; ++i) {
            double s = 0.0;
            for (int j = 0; j < q; ++j) s += mtx[i * q + j] * v[j];
            out[i] = s;
        }
    };
    // Orthonormal complement of y: Gram-Schmidt against the reference basis,
    // pivoting on the largest-|component| axis of y for reproducibility.
    auto complement = [q](const std::vector<double>& y,
                          std::vector<std::vector<double>>& out) {
        out.assign(q - 1, std::vector<double>(q, 0.0));
        if (q == 1) return;
        int pivot = 0;
        for (int i = 1; i < q; ++i)
            if (std::abs(y[i]) > std::abs(y[pivot])) pivot = i;
        double norm = 0.0;
        for (int i = 0; i < q; ++i) norm += y[i] * y[i];
        norm = std::sqrt(norm);
        int k = 0;
        for (int axis = 0; axis < q && k < q - 1; ++axis) {
            if (axis == pivot) continue;
            std::vector<double>& v = out[k];
            for (int i = 0; i < q; ++i) v[i] = (i == axis) ? 1.0 : 0.0;
            // Remove the y component, then earlier frame vectors.
            double dy = y[axis] / (norm * norm);
            for (int i = 0; i < q; ++i) v[i] -= dy * y[i];
            for (int j = 0; j < k; ++j) {
                double dot = 0.0;
                for (int i = 0; i < q; ++i) dot += v[i] * out[j][i];
                for (int i = 0; i < q; ++i) v[i] -= dot * out[j][i];
            }
            double vn = 0.0;
            for (int i = 0; i < q; ++i) vn += v[i] * v[i];
            vn = std::sqrt(vn);
            for (int i = 0; i < q; ++i) v[i] /= vn;
            ++k;
        }
    };

    if (keep_paths) {
        res.path_tilde.push_back(xt);
        res.path_bar.push_back(xb);
        res.times.push_back(0.0);
    }

    std::vector<double> dB(q), dW_t(q), dW_b(q);
    for (std::size_t k = 0; k < K; ++k) {
        const double t = dt * static_cast<double>(k);
        model.b(xt.data(), bt.data());
        model.b(xb.data(), bb.data());
        model.sigma(xt.data(), st.data());
        model.sigma(xb.data(), sb.data());

        if (!coupled) {
            // Radial direction in noise coordinates on each copy.
            for (int i = 0; i < q; ++i) z[i] = xt[i] - xb[i] - l0[i];
            invert(st, sinv);
            matvec(sinv, z, yt);
            double nyt = 0.0;
            for (int i = 0; i < q; ++i) nyt += yt[i] * yt[i];
            nyt = std::sqrt(nyt);
            invert(sb, sinv);
            matvec(sinv, z, yb);
            double nyb = 0.0;
            for (int i = 0; i < q; ++i) nyb += yb[i] * yb[i];
            nyb = std::sqrt(nyb);

            double dBbar = sqrt_dt * rng.normal();
            std::fill(dW_t.begin(), dW_t.end(), 0.0);
            std::fill(dW_b.begin(), dW_b.end(), 0.0);
            // Shared orthogonal components.
            if (q > 1) {
                complement(yt, frame);
                std::vector<std::vector<double>> frame_b;
                complement(yb, frame_b);
                for (int i = 0; i < q - 1; ++i) {
                    double dBt = sqrt_dt * rng.normal();
                    std::vector<double> sv(q), sv_b(q);
                    matvec(st, frame[i], sv);
                    matvec(sb, frame_b[i], sv_b);
                    for (int j = 0; j < q; ++j) {
                        dW_t[j] += sv[j] * dBt;
                        dW_b[j] += sv_b[j] * dBt;
                    }
                }
            }
            // Reflected radial component.
            for (int i = 0; i < q; ++i) {
                dW_t[i] += z[i] / nyt * dBbar;
                dW_b[i] -= z[i] / nyb * dBbar;
            }
            for (int i = 0; i < q; ++i) {
                xt[i] += bt[i] * dt + dW_t[i];
                xb[i] += bb[i] * dt + dW_b[i];
            }
            Vec l;
            double d_now = nearest_offset(xt, xb, l);
            if (d_now < dx_couple) {
                coupled = true;
                res.tau = t + dt;
                // Freeze the difference at the nearest lattice vector.
                for (int i = 0; i < q; ++i) xb[i] = xt[i] - l[i];
                res.integer_offset = l;
            }
        } else {
            for (int j = 0; j < q; ++j) dB[j] = sqrt_dt * rng.normal();
            matvec(st, dB, dW_t);
            for (int i = 0; i < q; ++i) {
                double off = res.integer_offset.empty() ? 0.0 : res.integer_offset[i];
                xt[i] += bt[i] * dt + dW_t[i];
                xb[i] = xt[i] - off;
            }
        }
        if (keep_paths) {
            res.path_tilde.push_back(xt);
            res.path_bar.push_back(xb);
            res.times.push_back(t + dt);
        }
    }
    if (coupled && res.integer_offset.empty()) res.integer_offset.assign(q, 0.0);
    return res;
}

CouplingTail coupling_tail(const DiffusionModel& model, const GridDensity& nu,
                           const GridDensity& nu_prime, int n_runs,
                           double horizon, double dt_sim, std::uint64_t seed,
                           unsigned n_threads) {
    if (n_runs < 100)
        throw std::invalid_argument("coupling_tail: n_runs >= 100 required");
    std::vector<double> taus(n_runs);
    parallel_for(
        static_cast<std::size_t>(n_runs),
        [&](std::size_t r) {
            SimulationConfig cfg;
            cfg.dt_sim = dt_sim;
            cfg.T = horizon;
            std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (r + 1));
            cfg.seed = splitmix64(s);
            CouplingResult res =
                simulate_coupled_pair(model, nu, nu_prime, cfg, 0.0, false);
            taus[r] = res.tau;
        },
        n_threads);

    CouplingTail tail;
    const int n_pts = 40;
    // Grid the survival curve over the observed coupling range; a fixed grid
    // over [0, horizon] can waste nearly all points past the last coupling
    // when coupling is much faster than the simulation horizon.
    double t_hi = 0.0;
    for (double tau : taus)
        if (std::isfinite(tau)) t_hi = std::max(t_hi, tau);
    if (!(t_hi > 0.0)) t_hi = horizon;
    std::vector<double> log_t, log_s;
    for (int i = 0; i <= n_pts; ++i) {
        double t = t_hi * static_cast<double>(i) / n_pts;
        int count = 0;
        for (double tau : taus)
            if (tau > t) ++count;
        double frac = static_cast<double>(count) / n_runs;
        tail.times.push_back(t);
        tail.survival.push_back(frac);
        if (frac > 0.0 && frac < 1.0 && t > 0.0) {
            log_t.push_back(t);
            log_s.push_back(std::log(frac));
        }
        if (count == 0) break;
    }
    tail.n_uncoupled = static_cast<int>(
        std::count_if(taus.begin(), taus.end(),
                      [](double t) { return !std::isfinite(t); }));
    if (log_t.size() >= 3) fit_log_linear(log_t, log_s, tail.log_slope, tail.r2);
    return tail;
}

}  // namespace pomle
