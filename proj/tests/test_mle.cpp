#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pomle/filter.hpp"
#include "pomle/mle.hpp"
#include "pomle/model.hpp"
#include "pomle/sde.hpp"

using namespace pomle;

namespace {

ObservationRecord constant_drift_record(double slope, double dt, double T) {
    // Deterministic record with dY = slope * dt each step, handy for closed
    // form likelihood checks under the constant-h family.
    ObservationRecord rec;
    auto steps = static_cast<std::size_t>(std::lround(T / dt));
    rec.times.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) rec.times[k] = dt * static_cast<double>(k);
    rec.dY.assign(steps, {slope * dt});
    return rec;
}

ObservationRecord simulated_record(const DiffusionModel& m, double dt, double T,
                                   std::uint64_t seed) {
    SimulationConfig cfg;
    cfg.dt_sim = dt;
    cfg.T = T;
    cfg.seed = seed;
    cfg.initial_point = Vec{0.3};
    return simulate_signal_observation(m, cfg, true);
}

}  // namespace

TEST_CASE("singleton surface reproduces the plain filter likelihood") {
    ModelFamily fam = get_family("gradient-sine");
    ParameterSpace space;
    space.points = {{{1.0, 1.0, 0.0, 0.8}}};
    DiffusionModel m = make_model("gradient-sine", space.points[0]);
    ObservationRecord obs = simulated_record(m, 1e-3, 1.0, 3);
    TorusGrid g(1, 64);
    GridDensity nu = GridDensity::uniform(g);

    LikelihoodSurface s = likelihood_surface(fam, space, nu, obs, {0.5, 1.0});
    FilterTrajectory traj = run_filter(m, nu, obs, obs.steps() / 2);
    REQUIRE(s.times.size() == 2);
    CHECK(s.at(0, 0) == doctest::Approx(traj.log_likelihood[1]).epsilon(1e-12));
    CHECK(s.at(1, 0) ==
          doctest::Approx(traj.final_state.log_likelihood).epsilon(1e-12));
}

TEST_CASE("constant-h surface columns match the closed form") {
    ModelFamily fam = get_family("constant-h");
    ParameterSpace space;
    space.points = {{{0.0}}, {{0.5}}, {{1.0}}};
    DiffusionModel truth = make_model("constant-h", space.points[1]);
    ObservationRecord obs = simulated_record(truth, 1e-3, 2.0, 7);
    double Y_T = 0.0;
    for (const auto& d : obs.dY) Y_T += d[0];

    TorusGrid g(1, 32);
    GridDensity nu = GridDensity::uniform(g);
    LikelihoodSurface s = likelihood_surface(fam, space, nu, obs, {2.0});
    for (std::size_t j = 0; j < 3; ++j) {
        double c = space.points[j].coords[0];
        CHECK(s.at(0, j) ==
              doctest::Approx(c * Y_T - 0.5 * c * c * 2.0).epsilon(1e-8));
    }
}

TEST_CASE("mle_estimate picks the argmax and reports ties") {
    ParameterSpace space;
    space.points = {{{0.0}}, {{0.5}}, {{0.5}}};  // duplicate hypothesis
    LikelihoodSurface s;
    s.space = space;
    s.times = {1.0, 2.0};
    s.logL = {0.1, 0.7, 0.7,   // t = 1: tie between indices 1 and 2
              0.9, 0.2, 0.2};  // t = 2: index 0 wins alone

    MleResult r1 = mle_estimate(s, 1.0);
    CHECK(r1.index == 1);  // lowest index among the tied argmax set
    REQUIRE(r1.ties.size() == 2);
    CHECK(r1.ties[0] == 1);
    CHECK(r1.ties[1] == 2);

    MleResult r2 = mle_estimate(s, 2.0);
    CHECK(r2.index == 0);
    CHECK(r2.ties.size() == 1);
    CHECK(r2.point.coords[0] == 0.0);

    // Nearest checkpoint lookup and shift invariance of the argmax.
    CHECK(mle_estimate(s, 1.4).index == 1);
    for (auto& v : s.logL) v += 123.456;
    CHECK(mle_estimate(s, 1.0).index == 1);
    CHECK(mle_estimate(s, 2.0).index == 0);
}

TEST_CASE("a drifting record identifies the matching constant sensor") {
    ObservationRecord obs = constant_drift_record(0.5, 1e-3, 4.0);
    ModelFamily fam = get_family("constant-h");
    ParameterSpace space;
    space.points = {{{0.0}}, {{0.5}}, {{1.0}}};
    TorusGrid g(1, 32);
    GridDensity nu = GridDensity::uniform(g);
    LikelihoodSurface s = likelihood_surface(fam, space, nu, obs, {4.0});
    MleResult r = mle_estimate(s, 4.0);
    CHECK(r.point.coords[0] == 0.5);
    // logL(c) = T (0.5 c - c^2 / 2) here, so the gaps are known exactly.
    CHECK(s.at(0, 1) - s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(s.at(0, 1) - s.at(0, 2) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("normalized ratio statistic has an exact constant-h value") {
    ObservationRecord obs = constant_drift_record(0.3, 1e-3, 2.0);
    TorusGrid g(1, 32);
    GridDensity nu = GridDensity::uniform(g);
    DiffusionModel ma = make_model("constant-h", {{0.2}});
    DiffusionModel mb = make_model("constant-h", {{0.9}});
    FilterTrajectory ta = run_filter(ma, nu, obs, 1);
    FilterTrajectory tb = run_filter(mb, nu, obs, 1);

    CHECK(normalized_ratio_statistic(ta, ta, 2.0) == 0.0);
    // Gap is identically 0.7 so the statistic is 0.49 for every T.
    CHECK(normalized_ratio_statistic(ta, tb, 2.0) ==
          doctest::Approx(0.49).epsilon(1e-12));
    CHECK(normalized_ratio_statistic(ta, tb, 1.0) ==
          doctest::Approx(0.49).epsilon(1e-12));
    CHECK_THROWS(normalized_ratio_statistic(ta, tb, 5.0));  // beyond the record
}

TEST_CASE("contrast vanishes on the diagonal and separates distinct sensors") {
    ModelFamily fam = get_family("gradient-sine");
    TorusGrid g(1, 64);
    Vec theta = {1.0, 1.0, 0.0, 0.8};
    ContrastEstimate same =
        contrast_estimate(fam, theta, theta, g, 2e-3, 4.0, 4, 13);
    CHECK(same.lambda_hat == 0.0);
    CHECK(same.std_err == 0.0);
    REQUIRE(same.replicas.size() == 4);

    Vec theta_p = {1.0, 1.6, 0.3, 0.8};
    ContrastEstimate diff =
        contrast_estimate(fam, theta, theta_p, g, 2e-3, 4.0, 6, 13);
    CHECK(diff.lambda_hat > 0.0);
    CHECK(diff.lambda_hat > 3.0 * diff.std_err);
    CHECK(diff.n_replicas == 6);
}

TEST_CASE("lambda curve stores per-replica samples and prefix statistics") {
    ModelFamily fam = get_family("constant-h");
    TorusGrid g(1, 32);
    LambdaCurve curve = lambda_convergence_curve(fam, {0.2}, {0.9}, g, 1e-2,
                                                 {1.0, 2.0}, 5, 99);
    REQUIRE(curve.horizons.size() == 2);
    CHECK(curve.n_replicas == 5);
    REQUIRE(curve.ratio_samples.size() == 10);
    // Constant sensors have a constant gap, so the time average is exactly
    // |c - c'|^2 at every horizon and the variance across replicas is zero.
    for (double v : curve.ratio_samples) CHECK(v == doctest::Approx(0.49).epsilon(1e-12));
    for (double v : curve.ratio_mean) CHECK(v == doctest::Approx(0.49).epsilon(1e-12));
    for (double v : curve.ratio_var) CHECK(v < 1e-20);
    for (double v : curve.gap_sq_mean) CHECK(v == doctest::Approx(0.49).epsilon(1e-12));
    // The martingale average shrinks with the horizon on average.
    CHECK(curve.mart_mean[0] >= 0.0);
    CHECK(curve.mart_mean[1] >= 0.0);
}

TEST_CASE("robustness modulus is zero at delta zero and monotone in delta") {
    ModelFamily fam = get_family("constant-h");
    ParameterSpace space;
    space.points = {{{0.3}}, {{0.5}}, {{1.0}}};
    TorusGrid g(1, 32);
    GridDensity nu = GridDensity::uniform(g);
    std::vector<double> deltas = {0.0, 0.2, 0.7};
    std::vector<double> times = {0.5, 1.0};
    RobustnessModulus rm = robustness_modulus(fam, space, {0.5}, nu, deltas,
                                              times, g, 1e-2, 4, 5);
    REQUIRE(rm.deltas.size() == 3);
    REQUIRE(rm.times.size() == 2);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        CHECK(rm.at(0, ti) == 0.0);  // no pairs are separated by zero
        CHECK(rm.at(1, ti) <= rm.at(2, ti) + 1e-15);
        // Constant sensors give exact pairwise gaps: the worst pair within
        // 0.2 is 0.2 apart, the worst within 0.7 is 0.7 apart.
        CHECK(rm.at(1, ti) == doctest::Approx(0.2).epsilon(1e-10));
        CHECK(rm.at(2, ti) == doctest::Approx(0.7).epsilon(1e-10));
    }
}
