#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace trialbridge::stats {

double mean(std::span<const double> x);
/// Sample variance with n-1 denominator; 0 for fewer than two values.
double variance(std::span<const double> x);
double sd(std::span<const double> x);

double weighted_mean(std::span<const double> x, std::span<const double> w);
/// Reliability-weighted variance: sum w (x-m)^2 / (V1 - V2/V1). Reduces to
/// the n-1 sample variance when all weights are equal.
double weighted_variance(std::span<const double> x, std::span<const double> w);

/// Nearest-rank percentile, p in [0, 100]. p = 0 returns the minimum.
double nearest_rank(std::span<const double> x, double p);
/// Nearest-rank percentile on an already sorted sample.
double nearest_rank_sorted(std::span<const double> sorted, double p);

double normal_quantile(double p);
double normal_cdf(double x);
double student_t_quantile(double p, double df);

double logit(double p);
double expit(double x);

/// Two-sided critical value for a (1 - alpha) interval.
double z_critical(double alpha);

}  // namespace trialbridge::stats
