#include "pomle/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pomle {

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("linear_fit: need >= 3 paired samples");
    const std::size_t n = x.size();
    double mx = sample_mean(x), my = sample_mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw std::invalid_argument("linear_fit: degenerate x");
    LinearFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - (fit.intercept + fit.slope * x[i]);
        ss_res += r * r;
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    double sigma2 = ss_res / static_cast<double>(n - 2);
    fit.slope_std_err = std::sqrt(sigma2 / sxx);
    return fit;
}

double sample_mean(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("sample_mean: empty");
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_std_err(const std::vector<double>& x) {
    if (x.size() < 2) throw std::invalid_argument("sample_std_err: need >= 2");
    double m = sample_mean(x);
    double var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    var /= static_cast<double>(x.size() - 1);
    return std::sqrt(var / static_cast<double>(x.size()));
}

std::vector<double> ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("spearman_rho: need >= 3 paired samples");
    std::vector<double> rx = ranks(x), ry = ranks(y);
    double mx = sample_mean(rx), my = sample_mean(ry);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::invalid_argument("spearman_rho: constant input");
    return sxy / std::sqrt(sxx * syy);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

// Asymptotic Kolmogorov distribution complement Q(lambda).
double kolmogorov_q(double lambda) {
    if (lambda < 1e-8) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, 2.0 * sum));
}

}  // namespace

double ks_2sample_pvalue(std::vector<double> a, std::vector<double> b,
                         double* d_stat) {
    if (a.size() < 5 || b.size() < 5)
        throw std::invalid_argument("ks_2sample_pvalue: samples too small");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double va = a[i], vb = b[j];
        if (va <= vb) ++i;
        if (vb <= va) ++j;
        double diff = std::abs(static_cast<double>(i) / na -
                               static_cast<double>(j) / nb);
        if (diff > d) d = diff;
    }
    if (d_stat) *d_stat = d;
    double ne = std::sqrt(na * nb / (na + nb));
    double lambda = (ne + 0.12 + 0.11 / ne) * d;
    return kolmogorov_q(lambda);
}

double batch_means_std_err(const std::vector<double>& x, std::size_t batch) {
    if (batch < 1 || x.size() < 2 * batch)
        throw std::invalid_argument("batch_means_std_err: too few samples");
    std::size_t nb = x.size() / batch;
    std::vector<double> means(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < batch; ++k) s += x[b * batch + k];
        means[b] = s / static_cast<double>(batch);
    }
    // The overall mean is the mean of the (approximately independent) batch
    // means, so its standard error is that of the batch-mean sample.
    return sample_std_err(means);
}

}  // namespace pomle
