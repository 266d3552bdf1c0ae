#pragma once

#include <limits>
#include <span>
#include <vector>

#include "befa/rng.hpp"

namespace befa {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_cdf(double x);
/// Upper tail 1 - Phi(x), accurate for large positive x.
double normal_sf(double x);
double normal_quantile(double p);
double normal_logpdf(double x);

/// log(Phi(b) - Phi(a)) for a < b, stable in both tails. Either bound may
/// be infinite.
double log_normal_interval(double a, double b);

/// Cumulative sums of exp(rho): strictly increasing, all positive.
std::vector<double> cutpoints_from_increments(std::span<const double> rho);

/// Ordinal level l in 1..levels with gamma[l-2] < t <= gamma[l-1]
/// (gamma holds the levels-1 finite cutpoints; the outer ones are -inf/+inf).
int score_from_latent(double t, std::span<const double> gamma, int levels);

/// Lower and upper cutpoint bracketing level `score`.
inline double lower_cut(std::span<const double> gamma, int score) {
  return score <= 1 ? -kInf : gamma[score - 2];
}
inline double upper_cut(std::span<const double> gamma, int score) {
  return score > static_cast<int>(gamma.size()) ? kInf : gamma[score - 1];
}

/// Draw from Normal(mean, 1) restricted to (lower, upper]. Inverse-CDF in the
/// body; exponential or uniform rejection once the interval lies more than 5
/// standard deviations from the mean.
double sample_truncated_normal(double mean, double lower, double upper, Rng& rng);

/// Per-dimension cutpoint parameters.
struct DimCutpoints {
  std::vector<double> rho;    // unconstrained increments, levels - 1 of them
  std::vector<double> gamma;  // derived cutpoints
  double tau = 1.0;           // prior sd of rho, in (0, 100)

  void refresh() { gamma = cutpoints_from_increments(rho); }
};

struct CutpointState {
  std::vector<DimCutpoints> dims;  // global dimension order
};

/// Upper bound of the Uniform prior on tau.
inline constexpr double kTauUpper = 100.0;

/// Increments giving cutpoints at the empirical probit quantiles of the
/// level frequencies. Cutpoints are floored at `min_gap` so they stay
/// positive and strictly increasing.
std::vector<double> increments_from_frequencies(std::span<const long> level_counts,
                                                double min_gap = 0.05);

}  // namespace befa
