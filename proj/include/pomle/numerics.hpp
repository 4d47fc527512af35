#pragma once

#include <cstddef>
#include <vector>

#include "pomle/model.hpp"

namespace pomle {

// Uniform cell-centered grid on [0,1)^q, q in {1, 2}. Nodes at (i + 1/2)/n
// per axis.
struct TorusGrid {
    int q = 1;
    int n = 0;

    TorusGrid() = default;
    TorusGrid(int q_, int n_);

    double dx() const { return 1.0 / n; }
    std::size_t size() const;
    double cell_volume() const;

    // Node coordinates of flat index, out[q].
    void node(std::size_t idx, double* out) const;
    // Flat index of the cell containing a torus point.
    std::size_t cell_of(const double* x) const;

    bool operator==(const TorusGrid& o) const { return q == o.q && n == o.n; }
};

struct GridField {
    TorusGrid grid;
    std::vector<double> values;

    GridField() = default;
    explicit GridField(const TorusGrid& g, double fill = 0.0)
        : grid(g), values(g.size(), fill) {}
};

// Nonnegative density on the grid; sum(values) * dx^q == 1.
struct GridDensity {
    TorusGrid grid;
    std::vector<double> values;

    GridDensity() = default;
    explicit GridDensity(const TorusGrid& g);  // uniform

    double mass() const;
    // Clips negatives, floors underflow, renormalizes. Returns clipped mass.
    double normalize();
    void check_invariants() const;  // throws on violation

    static GridDensity uniform(const TorusGrid& g);
    static GridDensity point_mass(const TorusGrid& g, const double* x);
};

void project_to_torus(const double* x, double* out, int q);
double project_to_torus(double x);

GridDensity density_from_samples(const TorusGrid& grid,
                                 const std::vector<Vec>& samples);

// Scheme selection for the parabolic steppers. Explicit enforces the CFL
// bound dt <= dx^2 / (2 q max a); implicit treats diffusion implicitly
// (backward Euler) and is unconditionally stable in the diffusion part.
enum class Scheme { Explicit, Implicit };

// Precomputed conservative discretization of one diffusion model on one
// grid. step() advances dp/dt = 1/2 sum d^2(a_ij p) - sum d(b_i p) with
// periodic boundary; mass is conserved exactly up to roundoff.
class FokkerPlanckOp {
public:
    FokkerPlanckOp(const DiffusionModel& model, const TorusGrid& grid);

    // One step; clip telemetry accumulates in clipped_mass().
    void step(GridDensity& p, double dt, Scheme scheme = Scheme::Explicit) const;

    // Same operator with an extra face drift and node reaction:
    // dp/dt = 1/2 d^2(a p) - d((b + g) p) + f p. Used by the gauge-PDE
    // engines; g and f may be null. Returns the pre-normalization mass ratio
    // (new mass / old mass); the density is renormalized.
    double step_with_gauge(GridDensity& p, double dt,
                           const std::vector<double>* g_faces,
                           const std::vector<double>* f_nodes,
                           Scheme scheme) const;

    double max_stable_dt() const { return cfl_dt_; }
    double max_a() const { return max_a_; }
    double clipped_mass() const { return clipped_mass_; }
    void reset_telemetry() const { clipped_mass_ = 0.0; }

    const TorusGrid& grid() const { return grid_; }
    // Drift evaluated at faces; axis-major, q * size() entries (q=1: size()).
    const std::vector<double>& face_drift() const { return b_faces_; }
    const std::vector<double>& node_a() const { return a_nodes_; }

private:
    TorusGrid grid_;
    int q_;
    std::vector<double> a_nodes_;    // a_11 (q=1) or a_11,a_22,a_12 blocks (q=2)
    std::vector<double> b_faces_;
    double max_a_ = 0.0;
    double cfl_dt_ = 0.0;
    mutable std::vector<double> scratch_;
    mutable std::vector<double> tmp_;
    mutable double clipped_mass_ = 0.0;

    void explicit_rhs(const std::vector<double>& p, std::vector<double>& out,
                      const std::vector<double>* g_faces) const;
    // Advection (plus cross diffusion for q=2) only; used by the implicit mode.
    void advective_rhs(const std::vector<double>& p, std::vector<double>& out,
                       const std::vector<double>* g_faces) const;
    void implicit_diffusion_solve(std::vector<double>& p, double dt) const;
};

GridDensity fokker_planck_step(const DiffusionModel& model, const GridDensity& p,
                               double dt, Scheme scheme = Scheme::Explicit);

// Backward Cauchy problem d_t u + L u + g^T grad u + f u = 0, u(T,.) = phi,
// on [0, T]. f and g are sampled per step via callbacks of the elapsed
// forward time s in [0, T] (g at faces, f at nodes); either may be null.
// Returns u at the requested forward times (0 = first entry), including
// u(T,.) = phi last.
struct GaugePdeResult {
    std::vector<double> times;
    std::vector<std::vector<double>> u;  // one field per time
};

GaugePdeResult solve_gauge_pde(
    const DiffusionModel& model, const TorusGrid& grid,
    const std::function<void(double s, std::vector<double>& g_faces)>* g_of_s,
    const std::function<void(double s, std::vector<double>& f_nodes)>* f_of_s,
    const std::vector<double>& phi, double T, double dt,
    Scheme scheme = Scheme::Implicit);

// Gauge fields of one observation window. log E_s(x) = 1/2 |h(x)|^2 s
// - h(x)^T (Y_{t+s} - Y_t), computed directly in log space;
// g = a grad log E, f = L log E + 1/2 grad log E^T a grad log E with grid
// finite differences.
struct GaugeCoefficients {
    std::vector<double> log_E;    // nodes
    std::vector<double> g_faces;  // axis-major face values of a grad log E
    std::vector<double> f_nodes;
};

GaugeCoefficients gauge_coefficients(const DiffusionModel& model,
                                     const TorusGrid& grid,
                                     const std::vector<double>& cum_dY,  // m entries
                                     double s);

}  // namespace pomle
