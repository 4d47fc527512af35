#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pomle/model.hpp"
#include "pomle/sde.hpp"
#include "pomle/stats.hpp"

using namespace pomle;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string tmp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("simulation is deterministic in the seed") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    SimulationConfig cfg;
    cfg.dt_sim = 1e-3;
    cfg.T = 0.5;
    cfg.seed = 42;
    cfg.initial_point = Vec{0.3};
    ObservationRecord a = simulate_signal_observation(m, cfg, true);
    ObservationRecord b = simulate_signal_observation(m, cfg, true);
    REQUIRE(a.steps() == b.steps());
    CHECK(a.dY == b.dY);
    CHECK(a.hidden_X == b.hidden_X);

    cfg.seed = 43;
    ObservationRecord c = simulate_signal_observation(m, cfg, true);
    CHECK(a.dY != c.dY);
}

TEST_CASE("record round trips through csv and binary") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    SimulationConfig cfg;
    cfg.dt_sim = 1e-2;
    cfg.T = 0.2;
    cfg.seed = 5;
    cfg.initial_point = Vec{0.1};
    ObservationRecord rec = simulate_signal_observation(m, cfg, true);

    std::string bpath = tmp_file("pomle_rec.bin");
    rec.save_binary(bpath, m.q, m.m);
    ObservationRecord back = ObservationRecord::load_binary(bpath);
    REQUIRE(back.steps() == rec.steps());
    CHECK(back.dt() == doctest::Approx(rec.dt()).epsilon(1e-14));
    for (std::size_t k = 0; k < rec.steps(); ++k)
        CHECK(back.dY[k][0] == rec.dY[k][0]);
    REQUIRE(back.hidden_X.size() == rec.hidden_X.size());
    CHECK(back.hidden_X.back()[0] == rec.hidden_X.back()[0]);

    std::string cpath = tmp_file("pomle_rec.csv");
    rec.save_csv(cpath);
    ObservationRecord cback = ObservationRecord::load_csv(cpath, m.m, m.q);
    REQUIRE(cback.steps() == rec.steps());
    for (std::size_t k = 0; k < rec.steps(); ++k)
        CHECK(cback.dY[k][0] == doctest::Approx(rec.dY[k][0]).epsilon(1e-15));

    CHECK_THROWS(ObservationRecord::load_binary(cpath));  // wrong magic
    std::filesystem::remove(bpath);
    std::filesystem::remove(cpath);
}

TEST_CASE("Euler increments have the right first two moments") {
    // Driftless unit-noise signal observed through h == 0.4: X_T - X_0 is
    // N(0, T) and Y_T is N(0.4 T, T).
    DiffusionModel m = make_model("constant-h", {{0.4}});
    const double T = 1.0;
    const int R = 4000;
    std::vector<double> dx(R), yT(R);
    for (int r = 0; r < R; ++r) {
        SimulationConfig cfg;
        cfg.dt_sim = 1e-2;
        cfg.T = T;
        cfg.seed = 1000 + static_cast<std::uint64_t>(r);
        cfg.initial_point = Vec{0.0};
        ObservationRecord rec = simulate_signal_observation(m, cfg, true);
        dx[r] = rec.hidden_X.back()[0];
        double y = 0.0;
        for (const auto& d : rec.dY) y += d[0];
        yT[r] = y;
    }
    double mx = sample_mean(dx), sx = sample_std_err(dx);
    CHECK(std::abs(mx) < 3.0 * sx);
    double var = 0.0;
    for (double v : dx) var += (v - mx) * (v - mx);
    var /= R - 1;
    CHECK(var == doctest::Approx(T).epsilon(0.1));

    double my = sample_mean(yT), sy = sample_std_err(yT);
    CHECK(std::abs(my - 0.4 * T) < 3.0 * sy);
}

TEST_CASE("stationary density matches the Gibbs closed form") {
    const double tb = 1.4, s0 = 0.8;
    DiffusionModel m = make_model("gradient-sine", {{tb, 1.0, 0.0, s0}});
    TorusGrid g(1, 128);
    GridDensity psi = stationary_density(m, g, 1e-10);
    psi.check_invariants();

    GridDensity gibbs(g);
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        gibbs.values[i] = std::exp(-tb * std::cos(kTwoPi * x) / (M_PI * s0 * s0));
    }
    gibbs.normalize();
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        err += std::abs(psi.values[i] - gibbs.values[i]) * g.cell_volume();
    CHECK(err < 2e-3);
    for (double v : psi.values) CHECK(v > 0.0);
}

TEST_CASE("reflection coupling couples and then moves in lockstep") {
    DiffusionModel m = make_model("gradient-sine", {{0.8, 1.0, 0.0, 1.0}});
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    double x0 = 0.25;
    GridDensity nu_prime = GridDensity::point_mass(g, &x0);

    int coupled_count = 0;
    for (int r = 0; r < 20; ++r) {
        SimulationConfig cfg;
        cfg.dt_sim = 1e-3;
        cfg.T = 30.0;
        cfg.seed = 99 + static_cast<std::uint64_t>(r);
        CouplingResult res = simulate_coupled_pair(m, nu, nu_prime, cfg);
        if (!res.coupled()) continue;
        ++coupled_count;
        CHECK(res.tau >= 0.0);
        CHECK(res.tau <= 30.0);
        // After tau the difference equals the frozen integer offset exactly.
        REQUIRE(res.integer_offset.size() == 1);
        for (std::size_t k = 0; k < res.times.size(); ++k) {
            if (res.times[k] <= res.tau) continue;
            CHECK(res.path_tilde[k][0] - res.path_bar[k][0] ==
                  doctest::Approx(res.integer_offset[0]).epsilon(1e-12));
        }
    }
    CHECK(coupled_count >= 18);  // coupling is overwhelmingly likely by T=30
}

TEST_CASE("coupling time tail is exponential-ish and the API is deterministic") {
    DiffusionModel m = make_model("gradient-sine", {{0.8, 1.0, 0.0, 1.0}});
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    double x0 = 0.75;
    GridDensity nu_prime = GridDensity::point_mass(g, &x0);

    CouplingTail t1 = coupling_tail(m, nu, nu_prime, 300, 15.0, 2e-3, 7, 4);
    CouplingTail t2 = coupling_tail(m, nu, nu_prime, 300, 15.0, 2e-3, 7, 2);
    CHECK(t1.survival == t2.survival);  // thread count must not matter
    CHECK(t1.log_slope < 0.0);
    CHECK(t1.r2 > 0.8);
    CHECK(t1.n_uncoupled < 30);
    CHECK_THROWS(coupling_tail(m, nu, nu_prime, 10, 15.0, 2e-3, 7, 1));
}

TEST_CASE("coupled marginals agree with independent simulation") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.9}});
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);
    double x0 = 0.5;
    GridDensity nu_prime = GridDensity::point_mass(g, &x0);
    const int R = 400;
    const double T = 3.0;
    std::vector<double> coupled_m(R), indep_m(R);
    for (int r = 0; r < R; ++r) {
        SimulationConfig cfg;
        cfg.dt_sim = 2e-3;
        cfg.T = T;
        cfg.seed = 5000 + static_cast<std::uint64_t>(r);
        CouplingResult res = simulate_coupled_pair(m, nu, nu_prime, cfg);
        coupled_m[r] = project_to_torus(res.path_bar.back()[0]);

        SimulationConfig ci;
        ci.dt_sim = 2e-3;
        ci.T = T;
        ci.seed = 90000 + static_cast<std::uint64_t>(r);
        ci.initial_density = nu_prime;
        ObservationRecord rec = simulate_signal_observation(m, ci, true);
        indep_m[r] = project_to_torus(rec.hidden_X.back()[0]);
    }
    CHECK(ks_2sample_pvalue(coupled_m, indep_m) > 0.005);
}
