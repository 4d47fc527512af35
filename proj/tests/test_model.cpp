#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pomle/model.hpp"

using namespace pomle;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

TEST_CASE("gradient-sine family evaluates its coefficient formulas") {
    DiffusionModel m = make_model("gradient-sine", {{1.3, 0.7, 0.2, 0.9}});
    REQUIRE(m.q == 1);
    REQUIRE(m.m == 1);
    double x = 0.37, out = 0.0;
    m.b(&x, &out);
    CHECK(out == doctest::Approx(1.3 * std::sin(kTwoPi * 0.37)).epsilon(1e-14));
    m.sigma(&x, &out);
    CHECK(out == doctest::Approx(0.9));
    m.h(&x, &out);
    CHECK(out == doctest::Approx(0.7 * std::cos(kTwoPi * 0.37) + 0.2).epsilon(1e-14));
    double a = 0.0;
    m.diffusion_matrix(&x, &a);
    CHECK(a == doctest::Approx(0.81));
}

TEST_CASE("constant-h family is the trivial signal with a constant sensor") {
    DiffusionModel m = make_model("constant-h", {{0.4}});
    double x = 0.9, out = 1.0;
    m.b(&x, &out);
    CHECK(out == 0.0);
    m.sigma(&x, &out);
    CHECK(out == 1.0);
    m.h(&x, &out);
    CHECK(out == 0.4);
}

TEST_CASE("family plumbing rejects bad parameters") {
    CHECK_THROWS(get_family("no-such-family"));
    CHECK_THROWS(make_model("gradient-sine", {{1.0}}));
    CHECK_THROWS(make_model("gradient-sine", {{1.0, 1.0, 0.0, -0.5}}));
    CHECK_THROWS(make_model("constant-h", {{0.1, 0.2}}));
}

TEST_CASE("verify_assumptions passes for the built-in families") {
    for (auto theta : {Vec{1.0, 1.0, 0.0, 0.8}, Vec{0.0, 2.0, -1.0, 1.5}}) {
        DiffusionModel m = make_model("gradient-sine", {theta});
        AssumptionReport rep = verify_assumptions(m, 512);
        CHECK(rep.all_passed());
        CHECK(rep.checks.size() == 5);
    }
    DiffusionModel c = make_model("constant-h", {{0.7}});
    CHECK(verify_assumptions(c, 512).all_passed());
}

TEST_CASE("verify_assumptions flags an aperiodic drift") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    m.b = [](const double* x, double* out) { out[0] = x[0]; };  // not 1-periodic
    AssumptionReport rep = verify_assumptions(m, 256);
    CHECK_FALSE(rep.all_passed());
    bool found = false;
    for (const auto& c : rep.checks)
        if (c.name == "b_periodic") {
            found = true;
            CHECK_FALSE(c.passed);
            CHECK(c.worst_violation > 1e-3);
        }
    CHECK(found);
}

TEST_CASE("verify_assumptions flags degenerate diffusion") {
    DiffusionModel m = make_model("gradient-sine", {{1.0, 1.0, 0.0, 0.8}});
    m.sigma = [](const double*, double* out) { out[0] = 0.0; };
    AssumptionReport rep = verify_assumptions(m, 256);
    bool found = false;
    for (const auto& c : rep.checks)
        if (c.name == "ellipticity") {
            found = true;
            CHECK_FALSE(c.passed);
        }
    CHECK(found);
}

TEST_CASE("parameter space membership and metric") {
    ParameterSpace space;
    space.points = {{{0.0, 0.0}}, {{3.0, 4.0}}, {{1.0, 1.0}}};
    CHECK(space.contains({{3.0, 4.0}}));
    CHECK(space.index_of({{1.0, 1.0}}) == 2);
    CHECK(space.index_of({{9.0, 9.0}}) == -1);
    CHECK(param_metric(space, {{0.0, 0.0}}, {{3.0, 4.0}}) == doctest::Approx(5.0));
    CHECK(param_metric(space, {{1.0, 1.0}}, {{1.0, 1.0}}) == 0.0);
    CHECK_THROWS(param_metric(space, {{0.0, 0.0}}, {{9.0, 9.0}}));
    ParameterSpace weird = space;
    weird.metric = "manhattan";
    CHECK_THROWS(param_metric(weird, {{0.0, 0.0}}, {{3.0, 4.0}}));
}

TEST_CASE("equivalence class keeps theta and its duplicates, drops separated points") {
    ModelFamily fam = get_family("gradient-sine");
    ParameterSpace space;
    space.points = {{{1.0, 1.0, 0.0, 0.8}},
                    {{1.0, 1.0, 0.0, 0.8}},   // exact duplicate
                    {{1.0, 1.6, 0.3, 0.8}}};  // separated in the sensor
    auto cls = equivalence_class(space, space.points[0], fam, 0.02);
    CHECK(cls.size() == 2);
    for (const auto& p : cls)
        CHECK(p == space.points[0]);

    // A singleton space always yields the point itself.
    ParameterSpace single;
    single.points = {{{1.0, 1.0, 0.0, 0.8}}};
    CHECK(equivalence_class(single, single.points[0], fam, 0.02).size() == 1);
}
