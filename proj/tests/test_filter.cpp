#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pomle/filter.hpp"
#include "pomle/model.hpp"
#include "pomle/sde.hpp"
#include "pomle/stats.hpp"

using namespace pomle;

namespace {

ObservationRecord make_record(const DiffusionModel& m, double dt, double T,
                              std::uint64_t seed, double x0 = 0.3) {
    SimulationConfig cfg;
    cfg.dt_sim = dt;
    cfg.T = T;
    cfg.seed = seed;
    cfg.initial_point = Vec{x0};
    return simulate_signal_observation(m, cfg, true);
}

// Plain bootstrap particle filter for the scalar torus signal, used as an
// independent reference for the grid filter mean pi_t[h].
struct ParticleFilter {
    std::vector<double> x;
    std::mt19937_64 rng;

    ParticleFilter(std::size_t n, std::uint64_t seed) : x(n), rng(seed) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& p : x) p = u(rng);
    }

    double step(const DiffusionModel& m, double dY, double dt) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> w(x.size());
        double b, s, h;
        for (std::size_t i = 0; i < x.size(); ++i) {
            m.h(&x[i], &h);
            w[i] = std::exp(h * dY - 0.5 * h * h * dt);
            m.b(&x[i], &b);
            m.sigma(&x[i], &s);
            x[i] = project_to_torus(x[i] + b * dt + s * std::sqrt(dt) * gauss(rng));
        }
        // Systematic resampling every step keeps the weights flat.
        double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double step_u = u(rng) / static_cast<double>(x.size());
        std::vector<double> nx(x.size());
        double cum = 0.0;
        std::size_t j = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double target = wsum * (step_u + static_cast<double>(i) / x.size());
            while (cum + w[j] < target && j + 1 < x.size()) cum += w[j++];
            nx[i] = x[j];
        }
        x = nx;
        double mean_h = 0.0;
        for (double p : x) {
            m.h(&p, &h);
            mean_h += h;
        }
        return mean_h / static_cast<double>(x.size());
    }
};

}  // namespace

TEST_CASE("constant sensor gives the closed form log-likelihood") {
    const double c = 0.7;
    DiffusionModel m = make_model("constant-h", {{c}});
    ObservationRecord obs = make_record(m, 1e-3, 2.0, 11);
    double Y_T = 0.0;
    for (const auto& d : obs.dY) Y_T += d[0];
    double exact = c * Y_T - 0.5 * c * c * obs.horizon();

    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    for (auto mode : {LogLikelihoodMode::Mass, LogLikelihoodMode::Quadrature}) {
        FilterTrajectory traj =
            run_filter(m, nu, obs, obs.steps(), {}, Scheme::Implicit, mode);
        CHECK(traj.final_state.log_likelihood ==
              doctest::Approx(exact).epsilon(1e-10));
        // The correction is spatially flat so the density never moves.
        for (double v : traj.final_state.density.values)
            CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("mass and quadrature likelihoods agree to discretization order") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    ObservationRecord obs = make_record(m, 1e-3, 2.0, 21);
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    FilterTrajectory a =
        run_filter(m, nu, obs, obs.steps(), {}, Scheme::Implicit, LogLikelihoodMode::Mass);
    FilterTrajectory b = run_filter(m, nu, obs, obs.steps(), {}, Scheme::Implicit,
                                    LogLikelihoodMode::Quadrature);
    // Both accumulate the same Girsanov integrand up to the quadrature rule
    // used for the stochastic integral; measured gap on this record is ~0.03.
    CHECK(std::abs(a.final_state.log_likelihood - b.final_state.log_likelihood) < 0.1);
}

TEST_CASE("grid filter tracks a bootstrap particle filter") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    const double dt = 2e-3, T = 2.0;
    ObservationRecord obs = make_record(m, dt, T, 31);
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    FilterTrajectory traj = run_filter(m, nu, obs, 1);

    ParticleFilter pf(20000, 777);
    double max_gap = 0.0;
    for (std::size_t k = 0; k < obs.steps(); ++k) {
        double pf_mean = pf.step(m, obs.dY[k][0], dt);
        if ((k + 1) % 100 == 0) {
            double grid_mean = traj.means[k + 1][0];
            max_gap = std::max(max_gap, std::abs(grid_mean - pf_mean));
        }
    }
    CHECK(max_gap < 0.08);
}

TEST_CASE("robust window engine matches the splitting filter") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    const double dt = 1e-3, T = 1.0;
    ObservationRecord obs = make_record(m, dt, T, 41);
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);

    FilterTrajectory split = run_filter(m, nu, obs, obs.steps());

    FilterState rob = filter_init(m, nu);
    const std::size_t win = static_cast<std::size_t>(std::lround(0.1 / dt));
    for (std::size_t s = 0; s < obs.steps(); s += win)
        robust_window_update(m, rob, obs, s, std::min(win, obs.steps() - s));

    double l1 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        l1 += std::abs(rob.density.values[i] - split.final_state.density.values[i]) *
              g.cell_volume();
    double dx = g.dx();
    CHECK(l1 < 20.0 * (dt + dx * dx));
    CHECK(rob.log_likelihood ==
          doctest::Approx(split.final_state.log_likelihood).epsilon(0.02));
    CHECK(rob.t == doctest::Approx(T).epsilon(1e-12));
}

TEST_CASE("extracted kernel is positive and reproduces the window flow") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    const double dt = 2e-3;
    ObservationRecord obs = make_record(m, dt, 0.5, 51);
    TorusGrid g(1, 32);
    const std::size_t win = 50;

    KernelMatrix K = extract_kernel(m, g, obs, 0, win);
    CHECK(K.lower_bound > 0.0);
    CHECK(K.upper_bound >= K.lower_bound);
    CHECK(K.t0 == doctest::Approx(0.0));
    CHECK(K.t1 == doctest::Approx(win * dt).epsilon(1e-12));
    for (std::size_t r = 0; r < g.size(); ++r)
        for (std::size_t c = 0; c < g.size(); ++c)
            CHECK(K.at(r, c) > 0.0);

    // Applying the kernel to nu must agree with running the robust window on
    // nu directly; both are the same linear flow.
    GridDensity nu = GridDensity::uniform(g);
    GridDensity via_kernel = apply_kernel(K, nu);
    FilterState st = filter_init(m, nu);
    robust_window_update(m, st, obs, 0, win);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(via_kernel.values[i] ==
              doctest::Approx(st.density.values[i]).epsilon(1e-8));

    // A second starting law exercises linearity away from the uniform case.
    double x0 = 0.25;
    GridDensity pm = GridDensity::point_mass(g, &x0);
    GridDensity via_kernel2 = apply_kernel(K, pm);
    FilterState st2 = filter_init(m, pm);
    robust_window_update(m, st2, obs, 0, win);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(via_kernel2.values[i] ==
              doctest::Approx(st2.density.values[i]).epsilon(1e-8));
}

TEST_CASE("innovations from the true model look like white noise") {
    // With a constant sensor the innovation increments are exactly the
    // driving Brownian increments of the observation.
    const double c = 0.5, dt = 1e-3, T = 8.0;
    DiffusionModel m = make_model("constant-h", {{c}});
    ObservationRecord obs = make_record(m, dt, T, 61);
    TorusGrid g(1, 32);
    GridDensity nu = GridDensity::uniform(g);
    FilterTrajectory traj = run_filter(m, nu, obs, 1);
    auto dW = innovation_path(traj, obs);
    REQUIRE(dW.size() == obs.steps());

    std::vector<double> v(dW.size());
    for (std::size_t k = 0; k < dW.size(); ++k) v[k] = dW[k][0];
    double mean = sample_mean(v);
    double var = 0.0;
    for (double w : v) var += (w - mean) * (w - mean);
    var /= static_cast<double>(v.size() - 1);
    CHECK(var == doctest::Approx(dt).epsilon(0.1));

    double ac = 0.0;
    for (std::size_t k = 0; k + 1 < v.size(); ++k)
        ac += (v[k] - mean) * (v[k + 1] - mean);
    ac /= var * static_cast<double>(v.size() - 1);
    CHECK(std::abs(ac) < 3.0 / std::sqrt(static_cast<double>(v.size())));

    // Stride mismatch is rejected.
    FilterTrajectory coarse = run_filter(m, nu, obs, 10);
    CHECK_THROWS(innovation_path(coarse, obs));
}
