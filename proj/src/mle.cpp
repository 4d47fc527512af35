#include "pomle/mle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "pomle/parallel.hpp"
#include "pomle/rng.hpp"

namespace pomle {

namespace {

std::uint64_t replica_seed(std::uint64_t seed, std::size_t r) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (r + 1));
    return splitmix64(s);
}

std::size_t nearest_step(double t, double dt, std::size_t n_steps) {
    if (dt <= 0.0) throw std::invalid_argument("record has no time step");
    auto k = static_cast<long long>(std::llround(t / dt));
    if (k < 0) k = 0;
    if (k > static_cast<long long>(n_steps)) k = static_cast<long long>(n_steps);
    return static_cast<std::size_t>(k);
}

double squared_gap(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

void mean_and_stderr(const std::vector<double>& x, double& mean, double& se) {
    mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= std::max<std::size_t>(1, x.size() - 1);
    se = std::sqrt(var / static_cast<double>(x.size()));
}

}  // namespace

double LikelihoodSurface::at(std::size_t checkpoint, std::size_t hyp) const {
    return logL[checkpoint * space.size() + hyp];
}

void LikelihoodSurface::save_csv(const std::string& path) const {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot open " + path);
    std::fprintf(fp, "time");
    for (std::size_t h = 0; h < space.size(); ++h)
        std::fprintf(fp, ",logL_%zu", h);
    std::fprintf(fp, "\n");
    for (std::size_t c = 0; c < times.size(); ++c) {
        std::fprintf(fp, "%.10g", times[c]);
        for (std::size_t h = 0; h < space.size(); ++h)
            std::fprintf(fp, ",%.17g", at(c, h));
        std::fprintf(fp, "\n");
    }
    std::fclose(fp);
}

LikelihoodSurface likelihood_surface(const ModelFamily& family,
                                     const ParameterSpace& space,
                                     const GridDensity& nu,
                                     const ObservationRecord& obs,
                                     const std::vector<double>& checkpoint_times,
                                     int n_threads) {
    if (space.points.empty())
        throw std::invalid_argument("likelihood_surface: empty hypothesis space");
    const double dt = obs.dt();
    std::vector<std::size_t> ck_steps;
    ck_steps.reserve(checkpoint_times.size());
    for (double t : checkpoint_times)
        ck_steps.push_back(nearest_step(t, dt, obs.steps()));

    LikelihoodSurface out;
    out.space = space;
    for (std::size_t s : ck_steps)
        out.times.push_back(dt * static_cast<double>(s));
    out.logL.assign(ck_steps.size() * space.size(), 0.0);

    std::vector<std::string> errors(space.size());
    parallel_for(space.size(), [&](std::size_t h) {
        try {
            DiffusionModel model = make_model(family, space.points[h]);
            FilterState state = filter_init(model, nu);
            std::size_t next = 0;
            auto record_due = [&](std::size_t step_idx) {
                while (next < ck_steps.size() && ck_steps[next] == step_idx) {
                    out.logL[next * space.size() + h] = state.log_likelihood;
                    ++next;
                }
            };
            record_due(0);
            for (std::size_t k = 0; k < obs.steps() && next < ck_steps.size(); ++k) {
                filter_step(state, obs.dY[k], dt);
                record_due(k + 1);
            }
        } catch (const std::exception& e) {
            errors[h] = e.what();
        }
    }, static_cast<unsigned>(n_threads));

    for (std::size_t h = 0; h < space.size(); ++h)
        if (!errors[h].empty())
            throw std::runtime_error("likelihood_surface: hypothesis " +
                                     std::to_string(h) + ": " + errors[h]);
    return out;
}

MleResult mle_estimate(const LikelihoodSurface& surface, double t) {
    if (surface.times.empty())
        throw std::invalid_argument("mle_estimate: empty surface");
    std::size_t ck = 0;
    double best = std::abs(surface.times[0] - t);
    for (std::size_t c = 1; c < surface.times.size(); ++c) {
        double d = std::abs(surface.times[c] - t);
        if (d < best) { best = d; ck = c; }
    }
    const std::size_t n = surface.space.size();
    double vmax = surface.at(ck, 0);
    for (std::size_t h = 1; h < n; ++h) vmax = std::max(vmax, surface.at(ck, h));
    double tol = 1e-12 * std::max(1.0, std::abs(vmax));
    MleResult res;
    for (std::size_t h = 0; h < n; ++h)
        if (surface.at(ck, h) >= vmax - tol) res.ties.push_back(h);
    res.index = res.ties.front();
    res.point = surface.space.points[res.index];
    return res;
}

double normalized_ratio_statistic(const FilterTrajectory& run_a,
                                  const FilterTrajectory& run_b, double T) {
    if (run_a.times.size() != run_b.times.size() || run_a.times.size() < 2)
        throw std::invalid_argument("normalized_ratio_statistic: trajectory mismatch");
    double dt = run_a.times[1] - run_a.times[0];
    if (std::abs(dt - (run_b.times[1] - run_b.times[0])) > 1e-12 * std::max(1.0, dt))
        throw std::invalid_argument("normalized_ratio_statistic: time grids differ");
    std::size_t steps = nearest_step(T, dt, run_a.times.size() - 1);
    if (steps == 0 || dt * static_cast<double>(steps) < T - 0.5 * dt)
        throw std::invalid_argument("normalized_ratio_statistic: horizon too short");
    double s = 0.0;
    for (std::size_t k = 0; k < steps; ++k)
        s += squared_gap(run_a.means[k], run_b.means[k]);
    return s * dt / (dt * static_cast<double>(steps));
}

ContrastEstimate contrast_estimate(const ModelFamily& family, const Vec& theta,
                                   const Vec& theta_prime, const TorusGrid& grid,
                                   double dt, double T, int n_replicas,
                                   std::uint64_t seed, int n_threads) {
    if (n_replicas < 2)
        throw std::invalid_argument("contrast_estimate: need at least 2 replicas");
    DiffusionModel m_true = make_model(family, ParameterPoint{theta});
    DiffusionModel m_alt = make_model(family, ParameterPoint{theta_prime});
    GridDensity nu0 = stationary_density(m_true, grid, 1e-10);
    GridDensity nu0_alt = stationary_density(m_alt, grid, 1e-10);

    ContrastEstimate est;
    est.theta = theta;
    est.theta_prime = theta_prime;
    est.horizon = T;
    est.n_replicas = n_replicas;
    est.replicas.assign(static_cast<std::size_t>(n_replicas), 0.0);

    parallel_for(static_cast<std::size_t>(n_replicas), [&](std::size_t r) {
        SimulationConfig cfg;
        cfg.dt_sim = dt;
        cfg.T = T;
        cfg.seed = replica_seed(seed, r);
        cfg.initial_density = nu0;
        ObservationRecord obs = simulate_signal_observation(m_true, cfg, false);

        FilterState fa = filter_init(m_true, nu0);
        FilterState fb = filter_init(m_alt, nu0_alt);
        const double half = 0.5 * T;
        double acc = 0.0;
        std::size_t n_tail = 0;
        for (std::size_t k = 0; k < obs.steps(); ++k) {
            if (fa.t >= half - 1e-12) {
                acc += squared_gap(filter_mean(fa), filter_mean(fb));
                ++n_tail;
            }
            filter_step(fa, obs.dY[k], dt);
            filter_step(fb, obs.dY[k], dt);
        }
        est.replicas[r] = acc / static_cast<double>(std::max<std::size_t>(1, n_tail));
    }, static_cast<unsigned>(n_threads));

    mean_and_stderr(est.replicas, est.lambda_hat, est.std_err);
    return est;
}

LambdaCurve lambda_convergence_curve(const ModelFamily& family, const Vec& theta,
                                     const Vec& theta_prime, const TorusGrid& grid,
                                     double dt, const std::vector<double>& horizons,
                                     int n_replicas, std::uint64_t seed,
                                     const GridDensity* nu_filter, int n_threads) {
    if (horizons.empty() || n_replicas < 2)
        throw std::invalid_argument("lambda_convergence_curve: bad arguments");
    if (!std::is_sorted(horizons.begin(), horizons.end()))
        throw std::invalid_argument("lambda_convergence_curve: horizons not increasing");

    DiffusionModel m_true = make_model(family, ParameterPoint{theta});
    DiffusionModel m_alt = make_model(family, ParameterPoint{theta_prime});
    GridDensity nu0 = stationary_density(m_true, grid, 1e-10);
    GridDensity nu0_alt = stationary_density(m_alt, grid, 1e-10);
    const GridDensity& init_a = nu_filter ? *nu_filter : nu0;
    const GridDensity& init_b = nu_filter ? *nu_filter : nu0_alt;

    const double T_max = horizons.back();
    std::size_t total_steps = static_cast<std::size_t>(std::llround(T_max / dt));
    std::vector<std::size_t> h_steps;
    for (double T : horizons) h_steps.push_back(nearest_step(T, dt, total_steps));

    const std::size_t nh = horizons.size();
    const std::size_t nr = static_cast<std::size_t>(n_replicas);
    LambdaCurve curve;
    curve.horizons = horizons;
    curve.n_replicas = n_replicas;
    curve.ratio_samples.assign(nr * nh, 0.0);
    std::vector<double> gap_samples(nr * nh, 0.0);
    std::vector<double> mart_samples(nr * nh, 0.0);

    parallel_for(nr, [&](std::size_t r) {
        SimulationConfig cfg;
        cfg.dt_sim = dt;
        cfg.T = T_max;
        cfg.seed = replica_seed(seed, r);
        cfg.initial_density = nu0;
        ObservationRecord obs = simulate_signal_observation(m_true, cfg, false);

        FilterState fa = filter_init(m_true, init_a);
        FilterState fb = filter_init(m_alt, init_b);
        std::vector<double> gap2(obs.steps());
        std::vector<double> mart(obs.steps());  // increments of int gap^T dW~
        for (std::size_t k = 0; k < obs.steps(); ++k) {
            std::vector<double> ma = filter_mean(fa);
            std::vector<double> mb = filter_mean(fb);
            gap2[k] = squared_gap(ma, mb);
            double inc = 0.0;
            for (std::size_t j = 0; j < ma.size(); ++j)
                inc += (ma[j] - mb[j]) * (obs.dY[k][j] - ma[j] * dt);
            mart[k] = inc;
            filter_step(fa, obs.dY[k], dt);
            filter_step(fb, obs.dY[k], dt);
        }
        std::vector<double> prefix(gap2.size() + 1, 0.0);
        std::vector<double> mprefix(mart.size() + 1, 0.0);
        for (std::size_t k = 0; k < gap2.size(); ++k) {
            prefix[k + 1] = prefix[k] + gap2[k];
            mprefix[k + 1] = mprefix[k] + mart[k];
        }
        for (std::size_t j = 0; j < nh; ++j) {
            std::size_t hs = std::min(h_steps[j], gap2.size());
            curve.ratio_samples[r * nh + j] =
                prefix[hs] / static_cast<double>(hs);
            std::size_t tail = std::max<std::size_t>(1, hs / 20);
            gap_samples[r * nh + j] =
                (prefix[hs] - prefix[hs - tail]) / static_cast<double>(tail);
            mart_samples[r * nh + j] =
                std::abs(mprefix[hs]) / (dt * static_cast<double>(hs));
        }
    }, static_cast<unsigned>(n_threads));

    curve.gap_sq_mean.assign(nh, 0.0);
    curve.ratio_mean.assign(nh, 0.0);
    curve.ratio_var.assign(nh, 0.0);
    curve.mart_mean.assign(nh, 0.0);
    for (std::size_t j = 0; j < nh; ++j) {
        double mg = 0.0, mr = 0.0, mm = 0.0;
        for (std::size_t r = 0; r < nr; ++r) {
            mg += gap_samples[r * nh + j];
            mr += curve.ratio_samples[r * nh + j];
            mm += mart_samples[r * nh + j];
        }
        curve.mart_mean[j] = mm / static_cast<double>(nr);
        mg /= static_cast<double>(nr);
        mr /= static_cast<double>(nr);
        double var = 0.0;
        for (std::size_t r = 0; r < nr; ++r) {
            double d = curve.ratio_samples[r * nh + j] - mr;
            var += d * d;
        }
        var /= static_cast<double>(nr - 1);
        curve.gap_sq_mean[j] = mg;
        curve.ratio_mean[j] = mr;
        curve.ratio_var[j] = var;
    }
    return curve;
}

double RobustnessModulus::at(std::size_t di, std::size_t ti) const {
    return mean[di * times.size() + ti];
}

void RobustnessModulus::save_csv(const std::string& path) const {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot open " + path);
    std::fprintf(fp, "delta,t,modulus,std_err\n");
    for (std::size_t di = 0; di < deltas.size(); ++di)
        for (std::size_t ti = 0; ti < times.size(); ++ti)
            std::fprintf(fp, "%.10g,%.10g,%.17g,%.17g\n", deltas[di], times[ti],
                         at(di, ti), std_err[di * times.size() + ti]);
    std::fclose(fp);
}

RobustnessModulus robustness_modulus(const ModelFamily& family,
                                     const ParameterSpace& space,
                                     const Vec& theta_true, const GridDensity& nu,
                                     const std::vector<double>& deltas,
                                     const std::vector<double>& times,
                                     const TorusGrid& grid, double dt,
                                     int n_replicas, std::uint64_t seed,
                                     int n_threads) {
    if (space.points.empty() || deltas.empty() || times.empty() || n_replicas < 2)
        throw std::invalid_argument("robustness_modulus: bad arguments");
    const std::size_t nh = space.size();
    const std::size_t nd = deltas.size();
    const std::size_t nt = times.size();
    const std::size_t nr = static_cast<std::size_t>(n_replicas);

    DiffusionModel m_true = make_model(family, ParameterPoint{theta_true});
    GridDensity nu0 = stationary_density(m_true, grid, 1e-10);
    std::vector<DiffusionModel> models;
    models.reserve(nh);
    for (const auto& p : space.points) models.push_back(make_model(family, p));

    // Hypothesis pairs eligible for each delta.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs(nd);
    for (std::size_t i = 0; i < nh; ++i)
        for (std::size_t j = i + 1; j < nh; ++j) {
            double d = param_metric(space, space.points[i], space.points[j]);
            for (std::size_t di = 0; di < nd; ++di)
                if (d <= deltas[di] + 1e-12) pairs[di].emplace_back(i, j);
        }

    const double T_max = *std::max_element(times.begin(), times.end());
    std::size_t total_steps = static_cast<std::size_t>(std::llround(T_max / dt));
    std::vector<std::size_t> t_steps;
    for (double t : times) t_steps.push_back(nearest_step(t, dt, total_steps));

    std::vector<double> samples(nr * nd * nt, 0.0);
    parallel_for(nr, [&](std::size_t r) {
        SimulationConfig cfg;
        cfg.dt_sim = dt;
        cfg.T = T_max;
        cfg.seed = replica_seed(seed, r);
        cfg.initial_density = nu0;
        ObservationRecord obs = simulate_signal_observation(m_true, cfg, false);

        std::vector<FilterState> filters;
        filters.reserve(nh);
        for (const auto& m : models) filters.push_back(filter_init(m, nu));

        std::vector<std::vector<double>> means(nh);
        auto record_at = [&](std::size_t step_idx) {
            for (std::size_t ti = 0; ti < nt; ++ti) {
                if (t_steps[ti] != step_idx) continue;
                for (std::size_t i = 0; i < nh; ++i)
                    means[i] = filter_mean(filters[i]);
                for (std::size_t di = 0; di < nd; ++di) {
                    double worst = 0.0;
                    for (auto [i, j] : pairs[di])
                        worst = std::max(worst,
                                         std::sqrt(squared_gap(means[i], means[j])));
                    samples[(r * nd + di) * nt + ti] = worst;
                }
            }
        };
        record_at(0);
        for (std::size_t k = 0; k < total_steps; ++k) {
            for (auto& f : filters) filter_step(f, obs.dY[k], dt);
            record_at(k + 1);
        }
    }, static_cast<unsigned>(n_threads));

    RobustnessModulus table;
    table.deltas = deltas;
    table.times = times;
    table.mean.assign(nd * nt, 0.0);
    table.std_err.assign(nd * nt, 0.0);
    std::vector<double> col(nr);
    for (std::size_t di = 0; di < nd; ++di)
        for (std::size_t ti = 0; ti < nt; ++ti) {
            for (std::size_t r = 0; r < nr; ++r)
                col[r] = samples[(r * nd + di) * nt + ti];
            mean_and_stderr(col, table.mean[di * nt + ti],
                            table.std_err[di * nt + ti]);
        }
    return table;
}

}  // namespace pomle
