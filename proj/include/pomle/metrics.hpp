#pragma once

#include <string>
#include <vector>

#include "pomle/filter.hpp"
#include "pomle/numerics.hpp"

namespace pomle {

// Hilbert pseudo-metric H(f,g) = (1 - r) / (1 + r) with
// r = inf(f/g) / sup(f/g), ratios taken over {g > 0}. Returns infinity if f
// carries mass where g vanishes. Scale invariant, values in [0,1] u {inf}.
double hilbert_metric(const std::vector<double>& f, const std::vector<double>& g);
double hilbert_metric(const GridDensity& f, const GridDensity& g);

// 1/2 sum |mu_i - nu_i| dx^q.
double tv_distance(const GridDensity& mu, const GridDensity& nu);

// Euclidean norm of the componentwise ranges of a sampled vector path.
double oscillation(const std::vector<std::vector<double>>& path);
double oscillation(const std::vector<double>& path);

struct ContractionWindow {
    std::size_t index = 0;
    double t_begin = 0.0, t_end = 0.0;
    double h_before = 0.0, h_after = 0.0;
    double gamma_hat = 0.0;  // -log(h_after / h_before); NaN when undefined
    double osc = 0.0;        // oscillation of Y over the window
    bool exact_agreement = false;  // h_before == 0
    bool increased = false;
};

struct ContractionAudit {
    std::vector<ContractionWindow> windows;
    std::size_t n_increased = 0;
    std::size_t n_exact = 0;

    void save_csv(const std::string& path) const;
};

// Runs two splitting filters from nu and nu_prime over the same record and
// reports the Hilbert distance across consecutive windows of `window_steps`
// observation steps (a unit window at dt = 1e-3 is 1000 steps).
ContractionAudit contraction_audit(const DiffusionModel& model,
                                   const ObservationRecord& obs,
                                   const GridDensity& nu,
                                   const GridDensity& nu_prime,
                                   std::size_t window_steps);

}  // namespace pomle
