#include "pomle/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "pomle/numerics.hpp"
#include "pomle/rng.hpp"
#include "pomle/sde.hpp"

namespace pomle {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

bool ParameterSpace::contains(const ParameterPoint& p) const {
    return index_of(p) >= 0;
}

int ParameterSpace::index_of(const ParameterPoint& p) const {
    for (std::size_t i = 0; i < points.size(); ++i)
        if (points[i] == p) return static_cast<int>(i);
    return -1;
}

double param_metric(const ParameterSpace& space, const ParameterPoint& a,
                    const ParameterPoint& b) {
    if (!space.contains(a) || !space.contains(b))
        throw std::invalid_argument("param_metric: point not in space");
    if (space.metric != "euclidean")
        throw std::invalid_argument("param_metric: unknown metric " + space.metric);
    if (a.coords.size() != b.coords.size())
        throw std::invalid_argument("param_metric: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.coords.size(); ++i) {
        double d = a.coords[i] - b.coords[i];
        s += d * d;
    }
    return std::sqrt(s);
}

void DiffusionModel::diffusion_matrix(const double* x, double* out) const {
    std::vector<double> s(static_cast<std::size_t>(q) * d);
    sigma(x, s.data());
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            double v = 0.0;
            for (int k = 0; k < d; ++k) v += s[i * d + k] * s[j * d + k];
            out[i * q + j] = v;
        }
}

bool AssumptionReport::all_passed() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return true;
}

namespace {

// Worst relative periodicity violation of one vector field over the samples.
AssumptionCheck check_periodicity(
    const std::string& name,
    const std::function<void(const double*, double*)>& field, int q, int out_dim,
    const std::vector<Vec>& samples) {
    AssumptionCheck check{name + "_periodic", true, 0.0, {}};
    std::vector<double> fx(out_dim), fs(out_dim), shifted(q);
    for (const auto& x : samples) {
        field(x.data(), fx.data());
        for (int axis = 0; axis < q; ++axis) {
            shifted.assign(x.begin(), x.end());
            shifted[axis] += 1.0;
            field(shifted.data(), fs.data());
            for (int k = 0; k < out_dim; ++k) {
                double rel = std::abs(fx[k] - fs[k]) / (1.0 + std::abs(fx[k]));
                if (rel > check.worst_violation) {
                    check.worst_violation = rel;
                    check.worst_witness = x;
                }
            }
        }
    }
    check.passed = check.worst_violation <= 1e-12;
    return check;
}

}  // namespace

AssumptionReport verify_assumptions(const DiffusionModel& model, int n_samples,
                                    std::uint64_t seed) {
    if (n_samples < 1)
        throw std::invalid_argument("verify_assumptions: n_samples >= 1 required");
    RngStream rng(seed);
    std::vector<Vec> samples(static_cast<std::size_t>(n_samples), Vec(model.q));
    for (auto& x : samples)
        for (auto& xi : x) xi = rng.uniform();

    AssumptionReport report;
    report.checks.push_back(
        check_periodicity("b", model.b, model.q, model.q, samples));
    report.checks.push_back(
        check_periodicity("sigma", model.sigma, model.q, model.q * model.d, samples));
    report.checks.push_back(
        check_periodicity("h", model.h, model.q, model.m, samples));

    // Ellipticity: xi^T a(x) xi >= lambda_min |xi|^2 along coordinate and
    // random directions.
    AssumptionCheck ell{"ellipticity", true, 0.0, {}};
    std::vector<double> a(static_cast<std::size_t>(model.q) * model.q);
    std::vector<double> xi(model.q);
    double worst_quad = std::numeric_limits<double>::infinity();
    for (const auto& x : samples) {
        model.diffusion_matrix(x.data(), a.data());
        for (int dir = 0; dir < model.q + 4; ++dir) {
            double norm2 = 0.0;
            for (int i = 0; i < model.q; ++i) {
                xi[i] = dir < model.q ? (i == dir ? 1.0 : 0.0) : rng.normal();
                norm2 += xi[i] * xi[i];
            }
            if (norm2 == 0.0) continue;
            double quad = 0.0;
            for (int i = 0; i < model.q; ++i)
                for (int j = 0; j < model.q; ++j)
                    quad += xi[i] * a[i * model.q + j] * xi[j];
            quad /= norm2;
            if (quad < worst_quad) {
                worst_quad = quad;
                ell.worst_witness = x;
                ell.worst_witness.insert(ell.worst_witness.end(), xi.begin(), xi.end());
            }
        }
    }
    double lambda_min = model.declared_ellipticity > 0 ? model.declared_ellipticity : 1e-12;
    ell.passed = worst_quad >= lambda_min * (1.0 - 1e-9);
    ell.worst_violation = ell.passed ? 0.0 : lambda_min - worst_quad;
    report.checks.push_back(ell);

    // Smoothness of h: centered second differences bounded.
    AssumptionCheck smooth{"h_second_derivative", true, 0.0, {}};
    const double fd = 1e-4;
    std::vector<double> hp(model.m), hm(model.m), h0(model.m), xs(model.q);
    double worst_d2 = 0.0;
    for (const auto& x : samples) {
        model.h(x.data(), h0.data());
        for (int axis = 0; axis < model.q; ++axis) {
            xs.assign(x.begin(), x.end());
            xs[axis] = x[axis] + fd;
            model.h(xs.data(), hp.data());
            xs[axis] = x[axis] - fd;
            model.h(xs.data(), hm.data());
            for (int k = 0; k < model.m; ++k) {
                double d2 = std::abs(hp[k] - 2.0 * h0[k] + hm[k]) / (fd * fd);
                if (d2 > worst_d2) {
                    worst_d2 = d2;
                    smooth.worst_witness = x;
                }
            }
        }
    }
    double bound = model.declared_sup_d2h > 0 ? model.declared_sup_d2h
                                              : std::numeric_limits<double>::infinity();
    smooth.passed = worst_d2 <= bound * (1.0 + 1e-6) + 1e-9;
    smooth.worst_violation = smooth.passed ? 0.0 : worst_d2 - bound;
    report.checks.push_back(smooth);

    return report;
}

ModelFamily get_family(const std::string& name) {
    if (name == "gradient-sine") {
        ModelFamily fam;
        fam.name = name;
        fam.param_dim = 4;
        fam.builder = [](const ParameterPoint& theta) {
            if (theta.coords.size() != 4)
                throw std::invalid_argument(
                    "gradient-sine expects coords (theta_b, theta_h, theta_c, sigma0)");
            const double tb = theta.coords[0], th = theta.coords[1],
                         tc = theta.coords[2], s0 = theta.coords[3];
            if (!(s0 > 0))
                throw std::invalid_argument("gradient-sine: sigma0 must be positive");
            DiffusionModel m;
            m.q = m.d = m.m = 1;
            m.b = [tb](const double* x, double* out) {
                out[0] = tb * std::sin(kTwoPi * x[0]);
            };
            m.sigma = [s0](const double*, double* out) { out[0] = s0; };
            m.h = [th, tc](const double* x, double* out) {
                out[0] = th * std::cos(kTwoPi * x[0]) + tc;
            };
            m.declared_ellipticity = s0 * s0;
            m.declared_sup_a = s0 * s0;
            m.declared_sup_b = std::abs(tb);
            m.declared_sup_h = std::abs(th) + std::abs(tc);
            m.declared_sup_d2h = std::abs(th) * kTwoPi * kTwoPi + 1e-6;
            return m;
        };
        return fam;
    }
    if (name == "constant-h") {
        ModelFamily fam;
        fam.name = name;
        fam.param_dim = 1;
        fam.builder = [](const ParameterPoint& theta) {
            if (theta.coords.size() != 1)
                throw std::invalid_argument("constant-h expects coords (theta_c)");
            const double tc = theta.coords[0];
            DiffusionModel m;
            m.q = m.d = m.m = 1;
            m.b = [](const double*, double* out) { out[0] = 0.0; };
            m.sigma = [](const double*, double* out) { out[0] = 1.0; };
            m.h = [tc](const double*, double* out) { out[0] = tc; };
            m.declared_ellipticity = 1.0;
            m.declared_sup_a = 1.0;
            m.declared_sup_b = 0.0;
            m.declared_sup_h = std::abs(tc);
            m.declared_sup_d2h = 1e-6;
            return m;
        };
        return fam;
    }
    throw std::invalid_argument("unknown model family: " + name);
}

DiffusionModel make_model(const ModelFamily& family, const ParameterPoint& theta) {
    if (static_cast<int>(theta.coords.size()) != family.param_dim)
        throw std::invalid_argument("make_model: parameter dimension mismatch for " +
                                    family.name);
    return family.builder(theta);
}

DiffusionModel make_model(const std::string& family_name, const ParameterPoint& theta) {
    return make_model(get_family(family_name), theta);
}

std::vector<ParameterPoint> equivalence_class(const ParameterSpace& space,
                                              const ParameterPoint& theta,
                                              const ModelFamily& family,
                                              double tol) {
    if (!(tol > 0)) throw std::invalid_argument("equivalence_class: tol must be > 0");

    const TorusGrid grid(1, 64);
    const int n_hist = 64;

    // Fingerprint: (stationary density, histogram of h pushed forward by it).
    auto fingerprint = [&](const ParameterPoint& p) {
        DiffusionModel model = make_model(family, p);
        GridDensity psi0 = stationary_density(model, grid, 1e-10);
        // Histogram of h(X), X ~ psi0, over a fixed range.
        std::vector<double> hist(n_hist, 0.0);
        double x, hval;
        const double h_lo = -4.0, h_hi = 4.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            grid.node(i, &x);
            model.h(&x, &hval);
            int bin = static_cast<int>((hval - h_lo) / (h_hi - h_lo) * n_hist);
            bin = std::max(0, std::min(n_hist - 1, bin));
            hist[bin] += psi0.values[i] * grid.cell_volume();
        }
        return std::make_pair(psi0, hist);
    };

    auto [psi_ref, hist_ref] = fingerprint(theta);
    std::vector<ParameterPoint> cls;
    for (const auto& cand : space.points) {
        if (cand == theta) {
            cls.push_back(cand);
            continue;
        }
        auto [psi_c, hist_c] = fingerprint(cand);
        double d_psi = 0.0;
        for (std::size_t i = 0; i < psi_ref.values.size(); ++i)
            d_psi += std::abs(psi_ref.values[i] - psi_c.values[i]) *
                     grid.cell_volume();
        double d_hist = 0.0;
        for (int i = 0; i < n_hist; ++i)
            d_hist += std::abs(hist_ref[i] - hist_c[i]);
        if (d_psi <= tol && d_hist <= tol) cls.push_back(cand);
    }
    if (cls.empty()) cls.push_back(theta);  // theta may itself be outside space
    return cls;
}

}  // namespace pomle
