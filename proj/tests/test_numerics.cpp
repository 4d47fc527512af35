#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pomle/model.hpp"
#include "pomle/numerics.hpp"
#include "pomle/rng.hpp"

using namespace pomle;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

DiffusionModel brownian_model(double sigma0) {
    DiffusionModel m;
    m.q = m.d = m.m = 1;
    m.b = [](const double*, double* out) { out[0] = 0.0; };
    m.sigma = [sigma0](const double*, double* out) { out[0] = sigma0; };
    m.h = [](const double*, double* out) { out[0] = 0.0; };
    m.declared_ellipticity = sigma0 * sigma0;
    return m;
}

// Wrapped heat kernel on the circle: sum of Gaussian images.
double wrapped_gaussian(double x, double mean, double var) {
    double s = 0.0;
    for (int k = -8; k <= 8; ++k) {
        double d = x - mean + k;
        s += std::exp(-0.5 * d * d / var) / std::sqrt(kTwoPi * var);
    }
    return s;
}

}  // namespace

TEST_CASE("grid geometry round trips") {
    TorusGrid g(1, 32);
    CHECK(g.size() == 32);
    CHECK(g.dx() == doctest::Approx(1.0 / 32));
    double x;
    g.node(5, &x);
    CHECK(x == doctest::Approx((5 + 0.5) / 32.0));
    CHECK(g.cell_of(&x) == 5);

    TorusGrid g2(2, 16);
    CHECK(g2.size() == 256);
    CHECK(g2.cell_volume() == doctest::Approx(1.0 / 256));
    double xy[2];
    g2.node(100, xy);
    CHECK(g2.cell_of(xy) == 100);
    double wrapped[2] = {xy[0] + 3.0, xy[1] - 2.0};
    CHECK(g2.cell_of(wrapped) == 100);

    CHECK_THROWS(TorusGrid(3, 32));
    CHECK_THROWS(TorusGrid(1, 4));
}

TEST_CASE("density invariants and normalization") {
    TorusGrid g(1, 16);
    GridDensity u = GridDensity::uniform(g);
    CHECK(u.mass() == doctest::Approx(1.0).epsilon(1e-12));
    u.check_invariants();

    double x = 0.31;
    GridDensity p = GridDensity::point_mass(g, &x);
    CHECK(p.mass() == doctest::Approx(1.0).epsilon(1e-12));

    GridDensity bad = u;
    bad.values[3] = -0.5;
    CHECK_THROWS(bad.check_invariants());
    double clipped = bad.normalize();
    CHECK(clipped == doctest::Approx(0.5 / 16));
    bad.check_invariants();
}

TEST_CASE("density_from_samples is an empirical histogram") {
    TorusGrid g(1, 8);
    std::vector<Vec> samples = {{0.05}, {0.05}, {0.55}, {0.95}};
    GridDensity d = density_from_samples(g, samples);
    CHECK(d.mass() == doctest::Approx(1.0));
    CHECK(d.values[0] == doctest::Approx(2.0 / 4 * 8));
    CHECK(d.values[4] == doctest::Approx(1.0 / 4 * 8));
    CHECK_THROWS(density_from_samples(g, {}));
}

TEST_CASE("Fokker-Planck steps conserve mass exactly") {
    DiffusionModel m = make_model("gradient-sine", {{1.5, 1.0, 0.0, 0.8}});
    TorusGrid g(1, 64);
    FokkerPlanckOp op(m, g);
    RngStream rng(7);
    GridDensity p = GridDensity::uniform(g);
    for (auto& v : p.values) v = 0.5 + rng.uniform();
    p.normalize();

    GridDensity pe = p;
    for (int k = 0; k < 50; ++k) {
        op.step(pe, 0.9 * op.max_stable_dt(), Scheme::Explicit);
        CHECK(pe.mass() == doctest::Approx(1.0).epsilon(1e-12));
    }
    GridDensity pi = p;
    for (int k = 0; k < 50; ++k) {
        op.step(pi, 1e-3, Scheme::Implicit);
        CHECK(pi.mass() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("explicit scheme refuses to break the CFL bound") {
    DiffusionModel m = brownian_model(1.0);
    TorusGrid g(1, 64);
    FokkerPlanckOp op(m, g);
    GridDensity p = GridDensity::uniform(g);
    CHECK_THROWS(op.step(p, 10.0 * op.max_stable_dt(), Scheme::Explicit));
}

TEST_CASE("pure diffusion matches the wrapped heat kernel") {
    const double sigma0 = 0.7;
    DiffusionModel m = brownian_model(sigma0);
    TorusGrid g(1, 128);
    const double var0 = 0.002, T = 0.1;

    GridDensity p(g);
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        p.values[i] = wrapped_gaussian(x, 0.5, var0);
    }
    p.normalize();

    for (Scheme scheme : {Scheme::Explicit, Scheme::Implicit}) {
        GridDensity q = p;
        FokkerPlanckOp op(m, g);
        double dt = scheme == Scheme::Explicit ? 0.9 * op.max_stable_dt() : 2e-4;
        auto steps = static_cast<int>(std::llround(T / dt));
        dt = T / steps;
        for (int k = 0; k < steps; ++k) op.step(q, dt, scheme);

        double err = 0.0;
        const double varT = var0 + sigma0 * sigma0 * T;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.node(i, &x);
            err += std::abs(q.values[i] - wrapped_gaussian(x, 0.5, varT)) *
                   g.cell_volume();
        }
        CHECK(err < 2e-3);  // O(dx^2 + dt) for this resolution
    }
}

TEST_CASE("drifted evolution preserves the Gibbs density") {
    // For b = theta_b sin(2 pi x) and constant sigma, the invariant density
    // is exp(-theta_b cos(2 pi x) / (pi sigma^2)) up to normalization.
    const double tb = 1.2, s0 = 0.85;
    DiffusionModel m = make_model("gradient-sine", {{tb, 1.0, 0.0, s0}});
    TorusGrid g(1, 128);
    GridDensity gibbs(g);
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        gibbs.values[i] = std::exp(-tb * std::cos(kTwoPi * x) / (M_PI * s0 * s0));
    }
    gibbs.normalize();

    FokkerPlanckOp op(m, g);
    GridDensity p = gibbs;
    double dt = 0.9 * op.max_stable_dt();
    for (int k = 0; k < 2000; ++k) op.step(p, dt, Scheme::Explicit);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        err += std::abs(p.values[i] - gibbs.values[i]) * g.cell_volume();
    CHECK(err < 1e-3);
}

TEST_CASE("two-dimensional diffusion spreads toward uniform and conserves mass") {
    DiffusionModel m;
    m.q = m.d = 2;
    m.m = 1;
    m.b = [](const double* x, double* out) {
        out[0] = 0.3 * std::sin(kTwoPi * x[1]);
        out[1] = -0.2 * std::sin(kTwoPi * x[0]);
    };
    m.sigma = [](const double*, double* out) {
        out[0] = 0.8;
        out[1] = 0.0;
        out[2] = 0.1;
        out[3] = 0.7;
    };
    m.h = [](const double*, double* out) { out[0] = 0.0; };
    TorusGrid g(2, 32);
    FokkerPlanckOp op(m, g);
    double x0[2] = {0.3, 0.6};
    GridDensity p = GridDensity::point_mass(g, x0);
    for (int k = 0; k < 400; ++k) {
        op.step(p, 2e-3, Scheme::Implicit);
        CHECK(p.mass() == doctest::Approx(1.0).epsilon(1e-10));
    }
    // After ~1 time unit of strong diffusion the density is near uniform.
    double dev = 0.0;
    for (double v : p.values) dev = std::max(dev, std::abs(v - 1.0));
    CHECK(dev < 0.05);
}

TEST_CASE("backward gauge PDE reproduces the heat semigroup closed form") {
    // d_t u + 1/2 u'' = 0 with u(T) = cos(2 pi x) has
    // u(s) = exp(-2 pi^2 (T - s)) cos(2 pi x).
    DiffusionModel m = brownian_model(1.0);
    TorusGrid g(1, 128);
    const double T = 0.25;
    std::vector<double> phi(g.size());
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        phi[i] = std::cos(kTwoPi * x);
    }
    GaugePdeResult res =
        solve_gauge_pde(m, g, nullptr, nullptr, phi, T, 1e-4, Scheme::Implicit);
    REQUIRE(res.u.front().size() == g.size());
    const double decay = std::exp(-2.0 * M_PI * M_PI * T);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        err = std::max(err, std::abs(res.u.front()[i] - decay * std::cos(kTwoPi * x)));
    }
    CHECK(err < 5e-3);
}

TEST_CASE("backward gauge PDE with constant reaction scales by exp(f T)") {
    DiffusionModel m = brownian_model(1.0);
    TorusGrid g(1, 64);
    const double T = 0.2, f0 = 0.8;
    std::vector<double> phi(g.size(), 1.0);
    std::function<void(double, std::vector<double>&)> f_of_s =
        [&](double, std::vector<double>& f) { f.assign(g.size(), f0); };
    GaugePdeResult res =
        solve_gauge_pde(m, g, nullptr, &f_of_s, phi, T, 1e-4, Scheme::Implicit);
    for (double v : res.u.front())
        CHECK(v == doctest::Approx(std::exp(f0 * T)).epsilon(1e-3));
}

TEST_CASE("backward solution is dual to the forward flow") {
    // int u(0,x) p_0(x) dx == int phi(x) p_T(x) dx for the same generator.
    DiffusionModel m = make_model("gradient-sine", {{0.9, 1.0, 0.0, 0.8}});
    TorusGrid g(1, 96);
    const double T = 0.3, dt = 1e-4;
    std::vector<double> phi(g.size());
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        phi[i] = std::sin(kTwoPi * x) + 0.5 * std::cos(2 * kTwoPi * x);
    }
    GaugePdeResult res =
        solve_gauge_pde(m, g, nullptr, nullptr, phi, T, dt, Scheme::Implicit);

    GridDensity p(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        p.values[i] = wrapped_gaussian(x, 0.3, 0.01);
    }
    p.normalize();
    double lhs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        lhs += res.u.front()[i] * p.values[i] * g.cell_volume();

    FokkerPlanckOp op(m, g);
    GridDensity pT = p;
    auto steps = static_cast<int>(std::llround(T / dt));
    for (int k = 0; k < steps; ++k) op.step(pT, T / steps, Scheme::Implicit);
    double rhs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        rhs += phi[i] * pT.values[i] * g.cell_volume();
    CHECK(lhs == doctest::Approx(rhs).epsilon(2e-3));
}

TEST_CASE("gauge coefficients match the analytic derivatives of log E") {
    DiffusionModel m = make_model("gradient-sine", {{0.7, 1.1, 0.3, 0.9}});
    TorusGrid g(1, 256);
    const double s = 0.4;
    std::vector<double> dY = {0.23};
    GaugeCoefficients gc = gauge_coefficients(m, g, dY, s);

    auto logE = [&](double xx) {
        double h = 1.1 * std::cos(kTwoPi * xx) + 0.3;
        return 0.5 * h * h * s - h * dY[0];
    };
    auto dlogE = [&](double xx) {
        double h = 1.1 * std::cos(kTwoPi * xx) + 0.3;
        double hp = -1.1 * kTwoPi * std::sin(kTwoPi * xx);
        return h * hp * s - hp * dY[0];
    };
    auto d2logE = [&](double xx) {
        double h = 1.1 * std::cos(kTwoPi * xx) + 0.3;
        double hp = -1.1 * kTwoPi * std::sin(kTwoPi * xx);
        double hpp = -1.1 * kTwoPi * kTwoPi * std::cos(kTwoPi * xx);
        return (hp * hp + h * hpp) * s - hpp * dY[0];
    };
    const double a0 = 0.81;
    double x;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.node(i, &x);
        CHECK(gc.log_E[i] == doctest::Approx(logE(x)).epsilon(1e-12));
        double face_x = x - 0.5 * g.dx();
        CHECK(std::abs(gc.g_faces[i] - a0 * dlogE(face_x)) < 2e-3);
        double b = 0.7 * std::sin(kTwoPi * x);
        double f_exact = 0.5 * a0 * d2logE(x) + b * dlogE(x) +
                         0.5 * a0 * dlogE(x) * dlogE(x);
        CHECK(std::abs(gc.f_nodes[i] - f_exact) < 5e-2);
    }
}
