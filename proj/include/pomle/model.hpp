#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pomle {

using Vec = std::vector<double>;

// A point in the hypothesis space. Coordinate meaning is fixed by the
// model family that interprets it.
struct ParameterPoint {
    Vec coords;

    bool operator==(const ParameterPoint& o) const { return coords == o.coords; }
};

struct ParameterSpace {
    std::vector<ParameterPoint> points;
    std::string metric = "euclidean";

    std::size_t size() const { return points.size(); }
    bool contains(const ParameterPoint& p) const;
    int index_of(const ParameterPoint& p) const;  // -1 when absent
};

double param_metric(const ParameterSpace& space, const ParameterPoint& a,
                    const ParameterPoint& b);

// Diffusion with 1-periodic coefficients: signal drift b, dispersion sigma
// (q x d, row-major), observation field h, plus declared bounds used by the
// assumption checks.
struct DiffusionModel {
    int q = 1;  // signal dimension
    int d = 1;  // driving noise dimension
    int m = 1;  // observation dimension

    std::function<void(const double* x, double* out)> b;      // out[q]
    std::function<void(const double* x, double* out)> sigma;  // out[q*d]
    std::function<void(const double* x, double* out)> h;      // out[m]

    double declared_ellipticity = 0.0;  // lambda_min of a = sigma sigma^T
    double declared_sup_a = 0.0;
    double declared_sup_b = 0.0;
    double declared_sup_h = 0.0;
    double declared_sup_d2h = 0.0;

    void drift(const double* x, double* out) const { b(x, out); }
    // a = sigma sigma^T, out[q*q] row-major.
    void diffusion_matrix(const double* x, double* out) const;
    void observation(const double* x, double* out) const { h(x, out); }
};

struct AssumptionCheck {
    std::string name;
    bool passed = true;
    double worst_violation = 0.0;
    Vec worst_witness;  // sample point (and direction, for ellipticity)
};

struct AssumptionReport {
    std::vector<AssumptionCheck> checks;
    bool all_passed() const;
};

// Samples the torus and checks 1-periodicity of (b, sigma, h), uniform
// ellipticity of a against the declared constant, and finite-difference
// smoothness of h against the declared bounds. Violations are reported,
// never thrown.
AssumptionReport verify_assumptions(const DiffusionModel& model, int n_samples,
                                    std::uint64_t seed = 12345);

struct ModelFamily {
    std::string name;
    int param_dim = 0;
    std::function<DiffusionModel(const ParameterPoint&)> builder;
};

// Built-in families:
//   "gradient-sine": q = m = 1, coords (theta_b, theta_h, theta_c, sigma0),
//       b(x) = theta_b sin(2 pi x), sigma = sigma0, h(x) = theta_h cos(2 pi x) + theta_c.
//   "constant-h":    q = m = 1, coords (theta_c), b = 0, sigma = 1, h = theta_c.
ModelFamily get_family(const std::string& name);

DiffusionModel make_model(const ModelFamily& family, const ParameterPoint& theta);
DiffusionModel make_model(const std::string& family_name, const ParameterPoint& theta);

// All hypotheses whose law-determining fingerprint (stationary density plus
// the histogram of h under it) matches theta's within tol. Always contains
// theta itself.
std::vector<ParameterPoint> equivalence_class(const ParameterSpace& space,
                                              const ParameterPoint& theta,
                                              const ModelFamily& family,
                                              double tol);

}  // namespace pomle
