#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pomle/model.hpp"
#include "pomle/numerics.hpp"

namespace pomle {

struct SimulationConfig {
    double dt_sim = 1e-3;
    double T = 1.0;
    std::uint64_t seed = 0;
    // Initial law: either an explicit point or a grid density to sample from.
    std::optional<Vec> initial_point;
    std::optional<GridDensity> initial_density;
};

// Discrete observation record: increasing time grid and the increments
// dY_k = Y_{t_{k+1}} - Y_{t_k}. hidden_X optionally carries the signal path
// for diagnostics.
struct ObservationRecord {
    std::vector<double> times;            // K+1 entries, t_0 = 0
    std::vector<std::vector<double>> dY;  // K entries, each m-dimensional
    std::vector<Vec> hidden_X;            // empty or K+1 entries

    std::size_t steps() const { return dY.size(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
    double horizon() const { return times.empty() ? 0.0 : times.back(); }

    void save_csv(const std::string& path) const;
    static ObservationRecord load_csv(const std::string& path, int m, int q_hidden);
    void save_binary(const std::string& path, int q, int m) const;
    static ObservationRecord load_binary(const std::string& path);
};

// Euler-Maruyama simulation of the signal and the observation increments
// dY_k = h(X_{t_k}) dt + sqrt(dt) xi_k. Deterministic given cfg.seed.
ObservationRecord simulate_signal_observation(const DiffusionModel& model,
                                              const SimulationConfig& cfg,
                                              bool keep_hidden = true);

// Invariant density of the torus signal: fixed point of the Fokker-Planck
// map under power iteration. Strictly positive on return.
GridDensity stationary_density(const DiffusionModel& model, const TorusGrid& grid,
                               double tol, int max_iters = 2000000);

// Reflection coupling of two signal copies (d == q required). Coupling is
// declared when the torus distance falls below dx_couple; after that both
// copies share the driving noise and their difference is frozen.
struct CouplingResult {
    double tau = std::numeric_limits<double>::infinity();
    std::vector<Vec> path_tilde;  // X started from nu
    std::vector<Vec> path_bar;    // X started from nu_prime
    std::vector<double> times;
    Vec integer_offset;           // X_tilde - X_bar after coupling
    bool coupled() const { return std::isfinite(tau); }
};

CouplingResult simulate_coupled_pair(const DiffusionModel& model,
                                     const GridDensity& nu,
                                     const GridDensity& nu_prime,
                                     const SimulationConfig& cfg,
                                     double dx_couple = 0.0,
                                     bool keep_paths = true);

struct CouplingTail {
    std::vector<double> times;
    std::vector<double> survival;  // fraction of replicas with tau > t
    double log_slope = 0.0;        // fitted slope of log survival
    double r2 = 0.0;
    int n_uncoupled = 0;
};

CouplingTail coupling_tail(const DiffusionModel& model, const GridDensity& nu,
                           const GridDensity& nu_prime, int n_runs,
                           double horizon, double dt_sim, std::uint64_t seed,
                           unsigned n_threads = 0);

}  // namespace pomle
