#include "pomle/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pomle {

namespace {

// Periodic tridiagonal solve via Thomas + Sherman-Morrison.
// Row i couples (i-1, i, i+1) mod n with entries (lower[i], diag[i], upper[i]).
void solve_cyclic_tridiag(std::vector<double>& lower, std::vector<double>& diag,
                          std::vector<double>& upper, std::vector<double>& rhs,
                          std::vector<double>& work) {
    const std::size_t n = diag.size();
    if (n == 1) {
        rhs[0] /= (diag[0] + lower[0] + upper[0]);
        return;
    }
    if (n == 2) {
        // Wrapped neighbours coincide; dense 2x2 solve.
        double a00 = diag[0], a01 = upper[0] + lower[0];
        double a10 = lower[1] + upper[1], a11 = diag[1];
        double det = a00 * a11 - a01 * a10;
        double r0 = rhs[0], r1 = rhs[1];
        rhs[0] = (a11 * r0 - a01 * r1) / det;
        rhs[1] = (a00 * r1 - a10 * r0) / det;
        return;
    }
    const double beta_up = upper[n - 1];  // A[n-1][0]
    const double beta_lo = lower[0];      // A[0][n-1]
    const double gamma = -diag[0];

    work.assign(2 * n, 0.0);
    double* u = work.data();
    double* cp = work.data() + n;  // modified upper coefficients

    std::vector<double> d(diag);
    d[0] -= gamma;
    d[n - 1] -= beta_up * beta_lo / gamma;
    u[0] = gamma;
    u[n - 1] = beta_up;

    // Thomas on both right-hand sides simultaneously.
    cp[0] = upper[0] / d[0];
    rhs[0] /= d[0];
    u[0] /= d[0];
    for (std::size_t i = 1; i < n; ++i) {
        double m = d[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / m;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
        u[i] = (u[i] - lower[i] * u[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        rhs[i] -= cp[i] * rhs[i + 1];
        u[i] -= cp[i] * u[i + 1];
    }
    const double vx = rhs[0] + beta_lo / gamma * rhs[n - 1];
    const double vz = u[0] + beta_lo / gamma * u[n - 1];
    const double factor = vx / (1.0 + vz);
    for (std::size_t i = 0; i < n; ++i) rhs[i] -= factor * u[i];
}

}  // namespace

TorusGrid::TorusGrid(int q_, int n_) : q(q_), n(n_) {
    if (q < 1 || q > 2) throw std::invalid_argument("TorusGrid: q must be 1 or 2");
    if (n < 8) throw std::invalid_argument("TorusGrid: n >= 8 required");
}

std::size_t TorusGrid::size() const {
    std::size_t s = 1;
    for (int i = 0; i < q; ++i) s *= static_cast<std::size_t>(n);
    return s;
}

double TorusGrid::cell_volume() const {
    double v = 1.0;
    for (int i = 0; i < q; ++i) v *= dx();
    return v;
}

void TorusGrid::node(std::size_t idx, double* out) const {
    for (int axis = 0; axis < q; ++axis) {
        out[axis] = (static_cast<double>(idx % n) + 0.5) / n;
        idx /= n;
    }
}

std::size_t TorusGrid::cell_of(const double* x) const {
    std::size_t idx = 0;
    std::size_t stride = 1;
    for (int axis = 0; axis < q; ++axis) {
        double xi = project_to_torus(x[axis]);
        auto i = static_cast<std::size_t>(xi * n);
        if (i >= static_cast<std::size_t>(n)) i = n - 1;
        idx += i * stride;
        stride *= n;
    }
    return idx;
}

double project_to_torus(double x) {
    if (!std::isfinite(x))
        throw std::invalid_argument("project_to_torus: non-finite input");
    double y = x - std::floor(x);
    if (y >= 1.0) y = 0.0;  // guard against roundoff at the seam
    return y;
}

void project_to_torus(const double* x, double* out, int q) {
    for (int i = 0; i < q; ++i) out[i] = project_to_torus(x[i]);
}

GridDensity::GridDensity(const TorusGrid& g)
    : grid(g), values(g.size(), 1.0) {}

GridDensity GridDensity::uniform(const TorusGrid& g) { return GridDensity(g); }

GridDensity GridDensity::point_mass(const TorusGrid& g, const double* x) {
    GridDensity d(g);
    std::fill(d.values.begin(), d.values.end(), 0.0);
    d.values[g.cell_of(x)] = 1.0 / g.cell_volume();
    return d;
}

double GridDensity::mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.cell_volume();
}

double GridDensity::normalize() {
    double clipped = 0.0;
    for (double& v : values) {
        if (v < 0.0) {
            clipped -= v;
            v = 0.0;
        } else if (v > 0.0 && v < 1e-300) {
            v = 1e-300;
        }
    }
    clipped *= grid.cell_volume();
    double m = mass();
    if (!(m > 0.0))
        throw std::runtime_error("GridDensity::normalize: total mass underflow");
    double inv = 1.0 / m;
    for (double& v : values) v *= inv;
    return clipped;
}

void GridDensity::check_invariants() const {
    for (double v : values)
        if (!(v >= 0.0))
            throw std::runtime_error("GridDensity: negative or NaN value");
    if (std::abs(mass() - 1.0) > 1e-10)
        throw std::runtime_error("GridDensity: mass not normalized");
}

GridDensity density_from_samples(const TorusGrid& grid,
                                 const std::vector<Vec>& samples) {
    if (samples.empty())
        throw std::invalid_argument("density_from_samples: empty sample list");
    GridDensity d(grid);
    std::fill(d.values.begin(), d.values.end(), 0.0);
    for (const auto& x : samples) d.values[grid.cell_of(x.data())] += 1.0;
    double inv = 1.0 / (static_cast<double>(samples.size()) * grid.cell_volume());
    for (double& v : d.values) v *= inv;
    return d;
}

FokkerPlanckOp::FokkerPlanckOp(const DiffusionModel& model, const TorusGrid& grid)
    : grid_(grid), q_(grid.q) {
    if (model.q != grid.q)
        throw std::invalid_argument("FokkerPlanckOp: model/grid dimension mismatch");
    const int n = grid.n;
    const std::size_t sz = grid.size();
    const int n_a = (q_ == 1) ? 1 : 3;  // a11 | a11, a22, a12
    a_nodes_.resize(static_cast<std::size_t>(n_a) * sz);
    b_faces_.resize(static_cast<std::size_t>(q_) * sz);
    std::vector<double> x(q_), a(static_cast<std::size_t>(q_) * q_), b(q_);
    for (std::size_t i = 0; i < sz; ++i) {
        grid.node(i, x.data());
        model.diffusion_matrix(x.data(), a.data());
        for (double v : a)
            if (!std::isfinite(v))
                throw std::runtime_error("FokkerPlanckOp: NaN in diffusion coefficient");
        a_nodes_[i] = a[0];
        if (q_ == 2) {
            a_nodes_[sz + i] = a[3];
            a_nodes_[2 * sz + i] = a[1];
        }
        for (int k = 0; k < q_; ++k) max_a_ = std::max(max_a_, a[k * q_ + k]);
    }
    // Drift at faces: axis `ax` face of cell i sits at x_ax = i_ax / n.
    for (int ax = 0; ax < q_; ++ax) {
        for (std::size_t i = 0; i < sz; ++i) {
            std::size_t rem = i;
            for (int k = 0; k < q_; ++k) {
                double c = (static_cast<double>(rem % n) + (k == ax ? 0.0 : 0.5)) / n;
                x[k] = c;
                rem /= n;
            }
            model.drift(x.data(), b.data());
            if (!std::isfinite(b[ax]))
                throw std::runtime_error("FokkerPlanckOp: NaN in drift coefficient");
            b_faces_[static_cast<std::size_t>(ax) * sz + i] = b[ax];
        }
    }
    cfl_dt_ = grid.dx() * grid.dx() / (2.0 * q_ * std::max(max_a_, 1e-300));
    scratch_.resize(sz);
    tmp_.resize(sz);
}

void FokkerPlanckOp::explicit_rhs(const std::vector<double>& p,
                                  std::vector<double>& out,
                                  const std::vector<double>* g_faces) const {
    const int n = grid_.n;
    const double dx = grid_.dx();
    const std::size_t sz = grid_.size();
    if (q_ == 1) {
        // Face flux between cells i-1 and i:
        //   F_i = 1/2 d(a p)/dx - (b + g) avg(p)
        auto& flux = tmp_;
        for (int i = 0; i < n; ++i) {
            int im1 = (i + n - 1) % n;
            double diff = 0.5 * (a_nodes_[i] * p[i] - a_nodes_[im1] * p[im1]) / dx;
            double drift = b_faces_[i];
            if (g_faces) drift += (*g_faces)[i];
            double adv = drift * 0.5 * (p[im1] + p[i]);
            flux[i] = diff - adv;
        }
        for (int i = 0; i < n; ++i) {
            int ip1 = (i + 1) % n;
            out[i] = (flux[ip1] - flux[i]) / dx;
        }
        return;
    }
    // q == 2; index = iy * n + ix.
    const double* a11 = a_nodes_.data();
    const double* a22 = a_nodes_.data() + sz;
    const double* a12 = a_nodes_.data() + 2 * sz;
    auto idx = [n](int ix, int iy) {
        return static_cast<std::size_t>(((iy + n) % n) * n + ((ix + n) % n));
    };
    std::fill(out.begin(), out.end(), 0.0);
    // x-direction fluxes.
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            std::size_t c = idx(ix, iy), l = idx(ix - 1, iy);
            double diff = 0.5 * (a11[c] * p[c] - a11[l] * p[l]) / dx;
            double cross = (a12[idx(ix, iy + 1)] * p[idx(ix, iy + 1)] -
                            a12[idx(ix, iy - 1)] * p[idx(ix, iy - 1)] +
                            a12[idx(ix - 1, iy + 1)] * p[idx(ix - 1, iy + 1)] -
                            a12[idx(ix - 1, iy - 1)] * p[idx(ix - 1, iy - 1)]) /
                           (8.0 * dx);
            double drift = b_faces_[c];
            if (g_faces) drift += (*g_faces)[c];
            tmp_[c] = diff + cross - drift * 0.5 * (p[l] + p[c]);
        }
    }
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            out[idx(ix, iy)] += (tmp_[idx(ix + 1, iy)] - tmp_[idx(ix, iy)]) / dx;
    // y-direction fluxes.
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            std::size_t c = idx(ix, iy), dcell = idx(ix, iy - 1);
            double diff = 0.5 * (a22[c] * p[c] - a22[dcell] * p[dcell]) / dx;
            double cross = (a12[idx(ix + 1, iy)] * p[idx(ix + 1, iy)] -
                            a12[idx(ix - 1, iy)] * p[idx(ix - 1, iy)] +
                            a12[idx(ix + 1, iy - 1)] * p[idx(ix + 1, iy - 1)] -
                            a12[idx(ix - 1, iy - 1)] * p[idx(ix - 1, iy - 1)]) /
                           (8.0 * dx);
            double drift = b_faces_[sz + c];
            if (g_faces) drift += (*g_faces)[sz + c];
            tmp_[c] = diff + cross - drift * 0.5 * (p[dcell] + p[c]);
        }
    }
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            out[idx(ix, iy)] += (tmp_[idx(ix, iy + 1)] - tmp_[idx(ix, iy)]) / dx;
}

void FokkerPlanckOp::advective_rhs(const std::vector<double>& p,
                                   std::vector<double>& out,
                                   const std::vector<double>* g_faces) const {
    const int n = grid_.n;
    const double dx = grid_.dx();
    const std::size_t sz = grid_.size();
    if (q_ == 1) {
        auto& flux = tmp_;
        for (int i = 0; i < n; ++i) {
            int im1 = (i + n - 1) % n;
            double drift = b_faces_[i];
            if (g_faces) drift += (*g_faces)[i];
            flux[i] = -drift * 0.5 * (p[im1] + p[i]);
        }
        for (int i = 0; i < n; ++i) {
            int ip1 = (i + 1) % n;
            out[i] = (flux[ip1] - flux[i]) / dx;
        }
        return;
    }
    const double* a12 = a_nodes_.data() + 2 * sz;
    auto idx = [n](int ix, int iy) {
        return static_cast<std::size_t>(((iy + n) % n) * n + ((ix + n) % n));
    };
    std::fill(out.begin(), out.end(), 0.0);
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            std::size_t c = idx(ix, iy), l = idx(ix - 1, iy);
            double cross = (a12[idx(ix, iy + 1)] * p[idx(ix, iy + 1)] -
                            a12[idx(ix, iy - 1)] * p[idx(ix, iy - 1)] +
                            a12[idx(ix - 1, iy + 1)] * p[idx(ix - 1, iy + 1)] -
                            a12[idx(ix - 1, iy - 1)] * p[idx(ix - 1, iy - 1)]) /
                           (8.0 * dx);
            double drift = b_faces_[c];
            if (g_faces) drift += (*g_faces)[c];
            tmp_[c] = cross - drift * 0.5 * (p[l] + p[c]);
        }
    }
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            out[idx(ix, iy)] += (tmp_[idx(ix + 1, iy)] - tmp_[idx(ix, iy)]) / dx;
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            std::size_t c = idx(ix, iy), dcell = idx(ix, iy - 1);
            double cross = (a12[idx(ix + 1, iy)] * p[idx(ix + 1, iy)] -
                            a12[idx(ix - 1, iy)] * p[idx(ix - 1, iy)] +
                            a12[idx(ix + 1, iy - 1)] * p[idx(ix + 1, iy - 1)] -
                            a12[idx(ix - 1, iy - 1)] * p[idx(ix - 1, iy - 1)]) /
                           (8.0 * dx);
            double drift = b_faces_[sz + c];
            if (g_faces) drift += (*g_faces)[sz + c];
            tmp_[c] = cross - drift * 0.5 * (p[dcell] + p[c]);
        }
    }
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
            out[idx(ix, iy)] += (tmp_[idx(ix, iy + 1)] - tmp_[idx(ix, iy)]) / dx;
}

void FokkerPlanckOp::implicit_diffusion_solve(std::vector<double>& p,
                                              double dt) const {
    const int n = grid_.n;
    const double dx = grid_.dx();
    const std::size_t sz = grid_.size();
    static thread_local std::vector<double> lower, diag, upper, rhs, work;
    lower.resize(n);
    diag.resize(n);
    upper.resize(n);
    rhs.resize(n);
    if (q_ == 1) {
        for (int i = 0; i < n; ++i) {
            int im1 = (i + n - 1) % n, ip1 = (i + 1) % n;
            double c = dt * 0.5 / (dx * dx);
            lower[i] = -c * a_nodes_[im1];
            diag[i] = 1.0 + 2.0 * c * a_nodes_[i];
            upper[i] = -c * a_nodes_[ip1];
        }
        solve_cyclic_tridiag(lower, diag, upper, p, work);
        return;
    }
    // q == 2: approximate factorization, one cyclic solve per row then per
    // column. Cross terms stay explicit.
    const double* a11 = a_nodes_.data();
    const double* a22 = a_nodes_.data() + sz;
    const double c = dt * 0.5 / (dx * dx);
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            int im1 = (ix + n - 1) % n, ip1 = (ix + 1) % n;
            std::size_t row = static_cast<std::size_t>(iy) * n;
            lower[ix] = -c * a11[row + im1];
            diag[ix] = 1.0 + 2.0 * c * a11[row + ix];
            upper[ix] = -c * a11[row + ip1];
            rhs[ix] = p[row + ix];
        }
        solve_cyclic_tridiag(lower, diag, upper, rhs, work);
        for (int ix = 0; ix < n; ++ix) p[static_cast<std::size_t>(iy) * n + ix] = rhs[ix];
    }
    for (int ix = 0; ix < n; ++ix) {
        for (int iy = 0; iy < n; ++iy) {
            int jm1 = (iy + n - 1) % n, jp1 = (iy + 1) % n;
            lower[iy] = -c * a22[static_cast<std::size_t>(jm1) * n + ix];
            diag[iy] = 1.0 + 2.0 * c * a22[static_cast<std::size_t>(iy) * n + ix];
            upper[iy] = -c * a22[static_cast<std::size_t>(jp1) * n + ix];
            rhs[iy] = p[static_cast<std::size_t>(iy) * n + ix];
        }
        solve_cyclic_tridiag(lower, diag, upper, rhs, work);
        for (int iy = 0; iy < n; ++iy) p[static_cast<std::size_t>(iy) * n + ix] = rhs[iy];
    }
}

void FokkerPlanckOp::step(GridDensity& p, double dt, Scheme scheme) const {
    double ratio = step_with_gauge(p, dt, nullptr, nullptr, scheme);
    (void)ratio;
}

double FokkerPlanckOp::step_with_gauge(GridDensity& p, double dt,
                                       const std::vector<double>* g_faces,
                                       const std::vector<double>* f_nodes,
                                       Scheme scheme) const {
    if (!(p.grid == grid_))
        throw std::invalid_argument("FokkerPlanckOp::step: grid mismatch");
    const std::size_t sz = grid_.size();
    auto& v = p.values;
    if (scheme == Scheme::Explicit) {
        if (dt > cfl_dt_ * (1.0 + 1e-12))
            throw std::invalid_argument(
                "FokkerPlanckOp: explicit step violates the CFL bound, dt <= " +
                std::to_string(cfl_dt_) + " required");
        explicit_rhs(v, scratch_, g_faces);
        for (std::size_t i = 0; i < sz; ++i) {
            double reaction = f_nodes ? (*f_nodes)[i] * v[i] : 0.0;
            v[i] += dt * (scratch_[i] + reaction);
        }
    } else {
        // Advection (and cross diffusion for q=2) explicit, axis diffusion
        // implicit. The advective part reuses explicit_rhs minus the axis
        // diffusion, assembled as flux differences with zero a.
        static thread_local std::vector<double> adv;
        adv.resize(sz);
        advective_rhs(v, adv, g_faces);
        for (std::size_t i = 0; i < sz; ++i) {
            v[i] += dt * adv[i];
            if (f_nodes) v[i] += dt * (*f_nodes)[i] * v[i];
        }
        implicit_diffusion_solve(v, dt);
    }
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error("FokkerPlanckOp: NaN after step");
    double m = p.mass();
    clipped_mass_ += p.normalize();
    return m;
}

GridDensity fokker_planck_step(const DiffusionModel& model, const GridDensity& p,
                               double dt, Scheme scheme) {
    FokkerPlanckOp op(model, p.grid);
    GridDensity out = p;
    op.step(out, dt, scheme);
    return out;
}

GaugeCoefficients gauge_coefficients(const DiffusionModel& model,
                                     const TorusGrid& grid,
                                     const std::vector<double>& cum_dY,
                                     double s) {
    if (static_cast<int>(cum_dY.size()) != model.m)
        throw std::invalid_argument("gauge_coefficients: increment dimension mismatch");
    if (s < 0.0)
        throw std::invalid_argument("gauge_coefficients: s outside window");
    const int n = grid.n;
    const double dx = grid.dx();
    const std::size_t sz = grid.size();
    GaugeCoefficients out;
    out.log_E.resize(sz);
    out.g_faces.assign(static_cast<std::size_t>(grid.q) * sz, 0.0);
    out.f_nodes.assign(sz, 0.0);

    std::vector<double> x(grid.q), h(model.m), b(grid.q),
        a(static_cast<std::size_t>(grid.q) * grid.q);
    for (std::size_t i = 0; i < sz; ++i) {
        grid.node(i, x.data());
        model.h(x.data(), h.data());
        double h2 = 0.0, hdY = 0.0;
        for (int k = 0; k < model.m; ++k) {
            h2 += h[k] * h[k];
            hdY += h[k] * cum_dY[k];
        }
        out.log_E[i] = 0.5 * h2 * s - hdY;
    }

    if (grid.q == 1) {
        std::vector<double> d1(sz), d2(sz), a_n(sz), b_n(sz);
        for (int i = 0; i < n; ++i) {
            int im1 = (i + n - 1) % n, ip1 = (i + 1) % n;
            d1[i] = (out.log_E[ip1] - out.log_E[im1]) / (2.0 * dx);
            d2[i] = (out.log_E[ip1] - 2.0 * out.log_E[i] + out.log_E[im1]) / (dx * dx);
            double xi = (i + 0.5) / n;
            model.diffusion_matrix(&xi, a.data());
            a_n[i] = a[0];
            model.drift(&xi, b.data());
            b_n[i] = b[0];
        }
        for (int i = 0; i < n; ++i) {
            // Face value of a grad log E between cells i-1 and i.
            int im1 = (i + n - 1) % n;
            double a_face = 0.5 * (a_n[im1] + a_n[i]);
            out.g_faces[i] = a_face * (out.log_E[i] - out.log_E[im1]) / dx;
            out.f_nodes[i] =
                0.5 * a_n[i] * d2[i] + b_n[i] * d1[i] + 0.5 * a_n[i] * d1[i] * d1[i];
        }
        return out;
    }

    // q == 2.
    auto idx = [n](int ix, int iy) {
        return static_cast<std::size_t>(((iy + n) % n) * n + ((ix + n) % n));
    };
    std::vector<double> a11(sz), a22(sz), a12(sz), b1(sz), b2(sz);
    for (std::size_t i = 0; i < sz; ++i) {
        grid.node(i, x.data());
        model.diffusion_matrix(x.data(), a.data());
        a11[i] = a[0];
        a22[i] = a[3];
        a12[i] = a[1];
        model.drift(x.data(), b.data());
        b1[i] = b[0];
        b2[i] = b[1];
    }
    const auto& L = out.log_E;
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            std::size_t c = idx(ix, iy);
            double ux = (L[idx(ix + 1, iy)] - L[idx(ix - 1, iy)]) / (2 * dx);
            double uy = (L[idx(ix, iy + 1)] - L[idx(ix, iy - 1)]) / (2 * dx);
            double uxx = (L[idx(ix + 1, iy)] - 2 * L[c] + L[idx(ix - 1, iy)]) / (dx * dx);
            double uyy = (L[idx(ix, iy + 1)] - 2 * L[c] + L[idx(ix, iy - 1)]) / (dx * dx);
            double uxy = (L[idx(ix + 1, iy + 1)] - L[idx(ix + 1, iy - 1)] -
                          L[idx(ix - 1, iy + 1)] + L[idx(ix - 1, iy - 1)]) /
                         (4 * dx * dx);
            out.f_nodes[c] =
                0.5 * (a11[c] * uxx + 2 * a12[c] * uxy + a22[c] * uyy) +
                b1[c] * ux + b2[c] * uy +
                0.5 * (a11[c] * ux * ux + 2 * a12[c] * ux * uy + a22[c] * uy * uy);
            // Face gradients (cross component averaged to the face).
            std::size_t l = idx(ix - 1, iy);
            double gx = (L[c] - L[l]) / dx;
            double gy_face = (L[idx(ix, iy + 1)] - L[idx(ix, iy - 1)] +
                              L[idx(ix - 1, iy + 1)] - L[idx(ix - 1, iy - 1)]) /
                             (4 * dx);
            double a11f = 0.5 * (a11[l] + a11[c]);
            double a12f = 0.5 * (a12[l] + a12[c]);
            out.g_faces[c] = a11f * gx + a12f * gy_face;
            std::size_t dcell = idx(ix, iy - 1);
            double gy = (L[c] - L[dcell]) / dx;
            double gx_face = (L[idx(ix + 1, iy)] - L[idx(ix - 1, iy)] +
                              L[idx(ix + 1, iy - 1)] - L[idx(ix - 1, iy - 1)]) /
                             (4 * dx);
            double a22f = 0.5 * (a22[dcell] + a22[c]);
            double a12fy = 0.5 * (a12[dcell] + a12[c]);
            out.g_faces[sz + c] = a22f * gy + a12fy * gx_face;
        }
    }
    return out;
}

GaugePdeResult solve_gauge_pde(
    const DiffusionModel& model, const TorusGrid& grid,
    const std::function<void(double s, std::vector<double>& g_faces)>* g_of_s,
    const std::function<void(double s, std::vector<double>& f_nodes)>* f_of_s,
    const std::vector<double>& phi, double T, double dt, Scheme scheme) {
    if (!(T > 0) || !(dt > 0))
        throw std::invalid_argument("solve_gauge_pde: T and dt must be positive");
    if (phi.size() != grid.size())
        throw std::invalid_argument("solve_gauge_pde: phi size mismatch");
    const auto n_steps = static_cast<std::size_t>(std::llround(T / dt));
    if (n_steps < 1 || n_steps > 100000000)
        throw std::invalid_argument("solve_gauge_pde: step count out of range");
    const double dt_eff = T / static_cast<double>(n_steps);
    const int n = grid.n;
    const double dx = grid.dx();
    const std::size_t sz = grid.size();

    // Node coefficients of the generator.
    std::vector<double> x(grid.q), a(static_cast<std::size_t>(grid.q) * grid.q),
        b(grid.q);
    std::vector<double> a11(sz), a22, a12, b1(sz), b2;
    if (grid.q == 2) {
        a22.resize(sz);
        a12.resize(sz);
        b2.resize(sz);
    }
    for (std::size_t i = 0; i < sz; ++i) {
        grid.node(i, x.data());
        model.diffusion_matrix(x.data(), a.data());
        model.drift(x.data(), b.data());
        a11[i] = a[0];
        b1[i] = b[0];
        if (grid.q == 2) {
            a22[i] = a[3];
            a12[i] = a[1];
            b2[i] = b[1];
        }
    }

    GaugePdeResult result;
    result.times.resize(n_steps + 1);
    result.u.resize(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k)
        result.times[k] = dt_eff * static_cast<double>(k);
    result.u[n_steps] = phi;

    std::vector<double> g_faces, f_nodes, rhs(sz), u(phi);
    std::vector<double> lower(n), diag(n), upper(n), tri_rhs(n), work;
    auto idx2 = [n](int ix, int iy) {
        return static_cast<std::size_t>(((iy + n) % n) * n + ((ix + n) % n));
    };

    for (std::size_t k = n_steps; k-- > 0;) {
        const double s_eval = result.times[k + 1];
        if (g_of_s) (*g_of_s)(s_eval, g_faces);
        if (f_of_s) (*f_of_s)(s_eval, f_nodes);

        // Lower-order terms at the known level.
        if (grid.q == 1) {
            for (int i = 0; i < n; ++i) {
                int im1 = (i + n - 1) % n, ip1 = (i + 1) % n;
                double du = (u[ip1] - u[im1]) / (2.0 * dx);
                double g_node = 0.0;
                if (g_of_s) g_node = 0.5 * (g_faces[i] + g_faces[ip1]);
                double r = (b1[i] + g_node) * du;
                if (f_of_s) r += f_nodes[i] * u[i];
                rhs[i] = u[i] + dt_eff * r;
                if (scheme == Scheme::Explicit)
                    rhs[i] += dt_eff * 0.5 * a11[i] *
                              (u[ip1] - 2.0 * u[i] + u[im1]) / (dx * dx);
            }
            if (scheme == Scheme::Implicit) {
                for (int i = 0; i < n; ++i) {
                    double c = dt_eff * 0.5 * a11[i] / (dx * dx);
                    lower[i] = -c;
                    diag[i] = 1.0 + 2.0 * c;
                    upper[i] = -c;
                }
                solve_cyclic_tridiag(lower, diag, upper, rhs, work);
            }
            u = rhs;
        } else {
            for (int iy = 0; iy < n; ++iy) {
                for (int ix = 0; ix < n; ++ix) {
                    std::size_t c = idx2(ix, iy);
                    double dux = (u[idx2(ix + 1, iy)] - u[idx2(ix - 1, iy)]) / (2 * dx);
                    double duy = (u[idx2(ix, iy + 1)] - u[idx2(ix, iy - 1)]) / (2 * dx);
                    double uxy = (u[idx2(ix + 1, iy + 1)] - u[idx2(ix + 1, iy - 1)] -
                                  u[idx2(ix - 1, iy + 1)] + u[idx2(ix - 1, iy - 1)]) /
                                 (4 * dx * dx);
                    double gx = 0.0, gy = 0.0;
                    if (g_of_s) {
                        gx = 0.5 * (g_faces[c] + g_faces[idx2(ix + 1, iy)]);
                        gy = 0.5 * (g_faces[sz + c] + g_faces[sz + idx2(ix, iy + 1)]);
                    }
                    double r = (b1[c] + gx) * dux + (b2[c] + gy) * duy + a12[c] * uxy;
                    if (f_of_s) r += f_nodes[c] * u[c];
                    rhs[c] = u[c] + dt_eff * r;
                    if (scheme == Scheme::Explicit)
                        rhs[c] += dt_eff * 0.5 *
                                  (a11[c] * (u[idx2(ix + 1, iy)] - 2 * u[c] +
                                             u[idx2(ix - 1, iy)]) +
                                   a22[c] * (u[idx2(ix, iy + 1)] - 2 * u[c] +
                                             u[idx2(ix, iy - 1)])) /
                                  (dx * dx);
                }
            }
            if (scheme == Scheme::Implicit) {
                const double cf = dt_eff * 0.5 / (dx * dx);
                for (int iy = 0; iy < n; ++iy) {
                    for (int ix = 0; ix < n; ++ix) {
                        double c = cf * a11[idx2(ix, iy)];
                        lower[ix] = -c;
                        diag[ix] = 1.0 + 2.0 * c;
                        upper[ix] = -c;
                        tri_rhs[ix] = rhs[idx2(ix, iy)];
                    }
                    solve_cyclic_tridiag(lower, diag, upper, tri_rhs, work);
                    for (int ix = 0; ix < n; ++ix) rhs[idx2(ix, iy)] = tri_rhs[ix];
                }
                for (int ix = 0; ix < n; ++ix) {
                    for (int iy = 0; iy < n; ++iy) {
                        double c = cf * a22[idx2(ix, iy)];
                        lower[iy] = -c;
                        diag[iy] = 1.0 + 2.0 * c;
                        upper[iy] = -c;
                        tri_rhs[iy] = rhs[idx2(ix, iy)];
                    }
                    solve_cyclic_tridiag(lower, diag, upper, tri_rhs, work);
                    for (int iy = 0; iy < n; ++iy) rhs[idx2(ix, iy)] = tri_rhs[iy];
                }
            }
            u = rhs;
        }
        for (double val : u)
            if (!std::isfinite(val))
                throw std::runtime_error("solve_gauge_pde: NaN in solution");
        result.u[k] = u;
    }
    return result;
}

}  // namespace pomle
