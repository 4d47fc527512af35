#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pomle/filter.hpp"
#include "pomle/model.hpp"
#include "pomle/sde.hpp"

namespace pomle {

struct LikelihoodSurface {
    ParameterSpace space;
    std::vector<double> times;
    // Row-major, logL[checkpoint * n_hyp + hypothesis].
    std::vector<double> logL;

    double at(std::size_t checkpoint, std::size_t hyp) const;
    void save_csv(const std::string& path) const;
};

// One splitting filter per hypothesis on the shared record, all started from
// the same nu. checkpoint_times are matched to the nearest step time.
LikelihoodSurface likelihood_surface(const ModelFamily& family,
                                     const ParameterSpace& space,
                                     const GridDensity& nu,
                                     const ObservationRecord& obs,
                                     const std::vector<double>& checkpoint_times,
                                     int n_threads = 0);

struct MleResult {
    ParameterPoint point;
    std::size_t index = 0;
    std::vector<std::size_t> ties;  // all argmax indices, including `index`
};

// Argmax over hypotheses at one checkpoint time; ties broken by lowest index.
MleResult mle_estimate(const LikelihoodSurface& surface, double t);

// (1/T) left-point quadrature of |pi^theta_s[h] - pi^theta'_s[h]|^2 over
// [0, T] from two trajectories recorded on the same checkpoint grid.
double normalized_ratio_statistic(const FilterTrajectory& run_a,
                                  const FilterTrajectory& run_b, double T);

struct ContrastEstimate {
    Vec theta, theta_prime;
    double lambda_hat = 0.0;
    double std_err = 0.0;
    double horizon = 0.0;
    int n_replicas = 0;
    std::vector<double> replicas;  // per-replica tail averages
};

// Monte-Carlo estimate of the contrast between theta and theta': replicas
// simulate under theta started from its stationary law, both filters start
// from their own stationary laws, and the squared filter-mean gap is averaged
// over the tail half of [0, T].
ContrastEstimate contrast_estimate(const ModelFamily& family, const Vec& theta,
                                   const Vec& theta_prime, const TorusGrid& grid,
                                   double dt, double T, int n_replicas,
                                   std::uint64_t seed, int n_threads = 0);

struct LambdaCurve {
    std::vector<double> horizons;
    std::vector<double> gap_sq_mean;   // mean over replicas of |gap|^2 near T
    std::vector<double> ratio_mean;    // mean of the time-averaged statistic
    std::vector<double> ratio_var;     // variance across replicas of the same
    // Mean over replicas of |(1/T) integral gap^T dW~|, the martingale part
    // of the normalized log-likelihood ratio.
    std::vector<double> mart_mean;
    // Per-replica time-averaged statistics, row-major [replica][horizon].
    std::vector<double> ratio_samples;
    int n_replicas = 0;
};

// One record per replica at the largest horizon; the time-averaged statistic
// is recorded at every horizon prefix. Optional nu_filter overrides the
// stationary filter initializations (both filters) to probe initial-condition
// forgetting.
LambdaCurve lambda_convergence_curve(const ModelFamily& family, const Vec& theta,
                                     const Vec& theta_prime, const TorusGrid& grid,
                                     double dt, const std::vector<double>& horizons,
                                     int n_replicas, std::uint64_t seed,
                                     const GridDensity* nu_filter = nullptr,
                                     int n_threads = 0);

struct RobustnessModulus {
    std::vector<double> deltas;
    std::vector<double> times;
    // Row-major table[delta_index * times.size() + time_index].
    std::vector<double> mean;
    std::vector<double> std_err;

    double at(std::size_t di, std::size_t ti) const;
    void save_csv(const std::string& path) const;
};

// E sup over hypothesis pairs within distance delta of the filter-mean gap,
// per (delta, t). Records simulate under theta_true; every hypothesis filter
// starts from the same nu.
RobustnessModulus robustness_modulus(const ModelFamily& family,
                                     const ParameterSpace& space,
                                     const Vec& theta_true, const GridDensity& nu,
                                     const std::vector<double>& deltas,
                                     const std::vector<double>& times,
                                     const TorusGrid& grid, double dt,
                                     int n_replicas, std::uint64_t seed,
                                     int n_threads = 0);

}  // namespace pomle
