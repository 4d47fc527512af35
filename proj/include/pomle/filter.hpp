#pragma once

#include <memory>
#include <vector>

#include "pomle/model.hpp"
#include "pomle/numerics.hpp"
#include "pomle/sde.hpp"

namespace pomle {

// How the running log-likelihood is accumulated: from the unnormalized mass
// after each correction, or by left-point Ito quadrature of the filter mean.
enum class LogLikelihoodMode { Mass, Quadrature };

struct FilterState {
    GridDensity density;  // torus filter density
    double t = 0.0;
    double log_likelihood = 0.0;

    // Shared engine bits; filters copied from the same init share them.
    std::shared_ptr<const FokkerPlanckOp> op;
    std::shared_ptr<const std::vector<double>> h_nodes;  // m * size, node-major
    int m = 1;
    Scheme scheme = Scheme::Implicit;
    LogLikelihoodMode ll_mode = LogLikelihoodMode::Mass;
};

FilterState filter_init(const DiffusionModel& model, const GridDensity& nu,
                        Scheme scheme = Scheme::Implicit,
                        LogLikelihoodMode ll_mode = LogLikelihoodMode::Mass);

// One splitting step: Fokker-Planck predict, multiplicative correction
// exp(h^T dY - 1/2 |h|^2 dt), renormalize, accumulate log-likelihood.
void filter_step(FilterState& state, const std::vector<double>& dY, double dt);

// Grid quadrature of h against the current density.
std::vector<double> filter_mean(const FilterState& state);

struct FilterTrajectory {
    std::vector<double> times;                       // checkpoint times
    std::vector<std::vector<double>> means;          // pi_t[h] at checkpoints
    std::vector<double> log_likelihood;              // running logL at checkpoints
    std::vector<GridDensity> snapshots;              // densities at snapshot times
    std::vector<double> snapshot_times;
    FilterState final_state;
};

// Folds filter_step over the record. Checkpoints every `stride` steps
// (1 = every step). snapshot_times requests density dumps at the nearest
// step times.
FilterTrajectory run_filter(const DiffusionModel& model, const GridDensity& nu,
                            const ObservationRecord& obs,
                            std::size_t stride = 1,
                            const std::vector<double>& snapshot_times = {},
                            Scheme scheme = Scheme::Implicit,
                            LogLikelihoodMode ll_mode = LogLikelihoodMode::Mass);

// Robust (pathwise) window update: gauge-transformed forward PDE over
// [t, t+T]; observation enters only through cumulative increments.
// Advances state.t by the window length and adds the window's log-likelihood.
void robust_window_update(const DiffusionModel& model, FilterState& state,
                          const ObservationRecord& obs, std::size_t step_begin,
                          std::size_t step_count);

struct KernelMatrix {
    TorusGrid grid;
    std::vector<double> entries;
    double t0 = 0.0, t1 = 0.0;
    double lower_bound = 0.0, upper_bound = 0.0;

    // entries layout: column x-index c (source cell), row z-index r (target):
    // entries[r * size + c].
    double at(std::size_t r, std::size_t c) const;
};

// Columns are the unnormalized robust window flow of unit point masses; the
// common scale across columns is preserved. Aborts on a non-positive entry.
KernelMatrix extract_kernel(const DiffusionModel& model, const TorusGrid& grid,
                            const ObservationRecord& obs, std::size_t step_begin,
                            std::size_t step_count);

GridDensity apply_kernel(const KernelMatrix& K, const GridDensity& mu);

// Innovation increments dW = dY - pi_t[h] dt from a run's checkpointed means
// (requires stride 1).
std::vector<std::vector<double>> innovation_path(const FilterTrajectory& traj,
                                                 const ObservationRecord& obs);

}  // namespace pomle
