#include "pomle/filter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pomle {

namespace {

std::shared_ptr<const std::vector<double>> sample_h(const DiffusionModel& model,
                                                    const TorusGrid& grid) {
    auto h = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(model.m) * grid.size());
    std::vector<double> x(grid.q), hv(model.m);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid.node(i, x.data());
        model.h(x.data(), hv.data());
        for (int j = 0; j < model.m; ++j)
            (*h)[static_cast<std::size_t>(j) * grid.size() + i] = hv[j];
    }
    return h;
}

}  // namespace

FilterState filter_init(const DiffusionModel& model, const GridDensity& nu,
                        Scheme scheme, LogLikelihoodMode ll_mode) {
    FilterState s;
    s.density = nu;
    s.density.normalize();
    s.density.check_invariants();
    s.t = 0.0;
    s.log_likelihood = 0.0;
    s.op = std::make_shared<FokkerPlanckOp>(model, nu.grid);
    s.h_nodes = sample_h(model, nu.grid);
    s.m = model.m;
    s.scheme = scheme;
    s.ll_mode = ll_mode;
    return s;
}

std::vector<double> filter_mean(const FilterState& state) {
    const std::size_t sz = state.density.grid.size();
    const double vol = state.density.grid.cell_volume();
    std::vector<double> mean(state.m, 0.0);
    for (int j = 0; j < state.m; ++j) {
        const double* h = state.h_nodes->data() + static_cast<std::size_t>(j) * sz;
        double s = 0.0;
        for (std::size_t i = 0; i < sz; ++i) s += h[i] * state.density.values[i];
        mean[j] = s * vol;
    }
    return mean;
}

void filter_step(FilterState& state, const std::vector<double>& dY, double dt) {
    if (static_cast<int>(dY.size()) != state.m)
        throw std::invalid_argument("filter_step: observation dimension mismatch");
    const std::size_t sz = state.density.grid.size();
    const double vol = state.density.grid.cell_volume();

    std::vector<double> pre_mean;
    if (state.ll_mode == LogLikelihoodMode::Quadrature) pre_mean = filter_mean(state);

    state.op->step(state.density, dt, state.scheme);

    // Multiplicative correction exp(h^T dY - 1/2 |h|^2 dt).
    auto& v = state.density.values;
    double mass = 0.0;
    for (std::size_t i = 0; i < sz; ++i) {
        double expo = 0.0;
        for (int j = 0; j < state.m; ++j) {
            double h = (*state.h_nodes)[static_cast<std::size_t>(j) * sz + i];
            expo += h * dY[j] - 0.5 * h * h * dt;
        }
        v[i] *= std::exp(expo);
        mass += v[i];
    }
    mass *= vol;
    if (!(mass > 0.0))
        throw std::runtime_error("filter_step: total mass underflow");

    if (state.ll_mode == LogLikelihoodMode::Mass) {
        state.log_likelihood += std::log(mass);
    } else {
        double inc = 0.0;
        for (int j = 0; j < state.m; ++j)
            inc += pre_mean[j] * dY[j] - 0.5 * pre_mean[j] * pre_mean[j] * dt;
        state.log_likelihood += inc;
    }
    state.density.normalize();
    state.t += dt;
}

FilterTrajectory run_filter(const DiffusionModel& model, const GridDensity& nu,
                            const ObservationRecord& obs, std::size_t stride,
                            const std::vector<double>& snapshot_times,
                            Scheme scheme, LogLikelihoodMode ll_mode) {
    if (stride == 0) stride = 1;
    FilterTrajectory traj;
    FilterState state = filter_init(model, nu, scheme, ll_mode);
    const double dt = obs.dt();

    auto record = [&] {
        traj.times.push_back(state.t);
        traj.means.push_back(filter_mean(state));
        traj.log_likelihood.push_back(state.log_likelihood);
    };
    std::vector<bool> snap_done(snapshot_times.size(), false);
    auto maybe_snapshot = [&] {
        for (std::size_t si = 0; si < snapshot_times.size(); ++si) {
            if (!snap_done[si] && state.t + 1e-12 >= snapshot_times[si]) {
                traj.snapshots.push_back(state.density);
                traj.snapshot_times.push_back(state.t);
                snap_done[si] = true;
            }
        }
    };

    record();
    maybe_snapshot();
    for (std::size_t k = 0; k < obs.steps(); ++k) {
        filter_step(state, obs.dY[k], dt);
        if ((k + 1) % stride == 0 || k + 1 == obs.steps()) record();
        maybe_snapshot();
    }
    traj.final_state = std::move(state);
    return traj;
}

namespace {

// Per-step gauge fields of one observation window, shared across densities
// evolved through that window.
struct WindowCoeffs {
    std::vector<GaugeCoefficients> per_step;  // at the left endpoint of each step
    std::vector<double> final_log_E;
    double dt = 0.0;
};

WindowCoeffs build_window_coeffs(const DiffusionModel& model, const TorusGrid& grid,
                                 const ObservationRecord& obs,
                                 std::size_t step_begin, std::size_t step_count) {
    if (step_begin + step_count > obs.steps())
        throw std::invalid_argument("robust window longer than the record");
    if (step_count == 0)
        throw std::invalid_argument("robust window must contain at least one step");
    WindowCoeffs wc;
    wc.dt = obs.dt();
    wc.per_step.reserve(step_count);
    std::vector<double> cum(model.m, 0.0);
    for (std::size_t k = 0; k < step_count; ++k) {
        double s = wc.dt * static_cast<double>(k);
        wc.per_step.push_back(gauge_coefficients(model, grid, cum, s));
        for (int j = 0; j < model.m; ++j) cum[j] += obs.dY[step_begin + k][j];
    }
    double T = wc.dt * static_cast<double>(step_count);
    wc.final_log_E = gauge_coefficients(model, grid, cum, T).log_E;
    return wc;
}

// Forward evolution of the gauge density through the window; returns the
// accumulated log of the unnormalized mass.
double evolve_window(const FokkerPlanckOp& op, GridDensity& v,
                     const WindowCoeffs& wc, Scheme scheme) {
    double log_mass = 0.0;
    for (const auto& gc : wc.per_step) {
        double ratio =
            op.step_with_gauge(v, wc.dt, &gc.g_faces, &gc.f_nodes, scheme);
        log_mass += std::log(ratio);
    }
    return log_mass;
}

}  // namespace

void robust_window_update(const DiffusionModel& model, FilterState& state,
                          const ObservationRecord& obs, std::size_t step_begin,
                          std::size_t step_count) {
    const TorusGrid& grid = state.density.grid;
    WindowCoeffs wc = build_window_coeffs(model, grid, obs, step_begin, step_count);

    GridDensity v = state.density;
    double log_mass = evolve_window(*state.op, v, wc, state.scheme);

    // Undo the gauge: p ~ v / E, window likelihood = accumulated mass of v/E.
    const double vol = grid.cell_volume();
    double mass = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        v.values[i] *= std::exp(-wc.final_log_E[i]);
        mass += v.values[i];
    }
    mass *= vol;
    if (!(mass > 0.0))
        throw std::runtime_error("robust_window_update: mass underflow");
    v.normalize();
    state.density = std::move(v);
    state.log_likelihood += log_mass + std::log(mass);
    state.t += wc.dt * static_cast<double>(step_count);
}

double KernelMatrix::at(std::size_t r, std::size_t c) const {
    return entries[r * grid.size() + c];
}

KernelMatrix extract_kernel(const DiffusionModel& model, const TorusGrid& grid,
                            const ObservationRecord& obs, std::size_t step_begin,
                            std::size_t step_count) {
    WindowCoeffs wc = build_window_coeffs(model, grid, obs, step_begin, step_count);
    FokkerPlanckOp op(model, grid);
    const std::size_t sz = grid.size();
    const double vol = grid.cell_volume();

    KernelMatrix K;
    K.grid = grid;
    K.entries.resize(sz * sz);
    K.t0 = obs.times[step_begin];
    K.t1 = obs.times[step_begin + step_count];

    for (std::size_t j = 0; j < sz; ++j) {
        GridDensity col(grid);
        std::fill(col.values.begin(), col.values.end(), 0.0);
        col.values[j] = 1.0 / vol;  // unit point mass at cell j
        double log_mass = evolve_window(op, col, wc, Scheme::Implicit);
        double scale = std::exp(log_mass);
        for (std::size_t i = 0; i < sz; ++i) {
            double entry = col.values[i] * scale * std::exp(-wc.final_log_E[i]);
            K.entries[i * sz + j] = entry;
        }
    }
    K.lower_bound = *std::min_element(K.entries.begin(), K.entries.end());
    K.upper_bound = *std::max_element(K.entries.begin(), K.entries.end());
    if (!(K.lower_bound > 0.0))
        throw std::runtime_error(
            "extract_kernel: non-positive kernel entry (scheme failure)");
    return K;
}

GridDensity apply_kernel(const KernelMatrix& K, const GridDensity& mu) {
    if (!(mu.grid == K.grid))
        throw std::invalid_argument("apply_kernel: grid mismatch");
    const std::size_t sz = K.grid.size();
    const double vol = K.grid.cell_volume();
    GridDensity out(K.grid);
    for (std::size_t i = 0; i < sz; ++i) {
        double s = 0.0;
        const double* row = K.entries.data() + i * sz;
        for (std::size_t j = 0; j < sz; ++j) s += row[j] * mu.values[j];
        out.values[i] = s * vol;
    }
    out.normalize();
    return out;
}

std::vector<std::vector<double>> innovation_path(const FilterTrajectory& traj,
                                                 const ObservationRecord& obs) {
    if (traj.means.size() != obs.steps() + 1)
        throw std::invalid_argument(
            "innovation_path: trajectory must be recorded at every step");
    const double dt = obs.dt();
    std::vector<std::vector<double>> dW(obs.steps());
    for (std::size_t k = 0; k < obs.steps(); ++k) {
        const auto& mean = traj.means[k];
        dW[k].resize(obs.dY[k].size());
        for (std::size_t j = 0; j < dW[k].size(); ++j)
            dW[k][j] = obs.dY[k][j] - mean[j] * dt;
    }
    return dW;
}

}  // namespace pomle
