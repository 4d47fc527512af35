#pragma once

#include <cstddef>
#include <vector>

namespace pomle {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_std_err = 0.0;
    std::size_t n = 0;
};

// Ordinary least squares y ~ intercept + slope * x.
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

double sample_mean(const std::vector<double>& x);
// Standard error of the mean (sample standard deviation / sqrt(n)).
double sample_std_err(const std::vector<double>& x);

// Midranks with average ties.
std::vector<double> ranks(const std::vector<double>& x);

// Spearman rank correlation.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

double normal_cdf(double z);

// Two-sample Kolmogorov-Smirnov test; returns the asymptotic p-value.
double ks_2sample_pvalue(std::vector<double> a, std::vector<double> b,
                         double* d_stat = nullptr);

// Standard error of the mean of a weakly dependent series via batch means.
double batch_means_std_err(const std::vector<double>& x, std::size_t batch);

}  // namespace pomle
