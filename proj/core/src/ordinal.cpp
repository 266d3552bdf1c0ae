#include "befa/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <boost/math/special_functions/erf.hpp>

#include "befa/error.hpp"

namespace befa {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))
constexpr double kTailSwitch = 5.0;

// log(1 - Phi(x)); asymptotic series where erfc underflows.
double log_sf(double x) {
  if (x < 35.0) return std::log(normal_sf(x));
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(x) - kLogSqrt2Pi + std::log(series);
}

// Standardized draw on (a, b] with a > kTailSwitch.
double sample_right_tail(double a, double b, Rng& rng) {
  if (std::isfinite(b) && (b - a) * a < 1.0) {
    // Uniform proposal; acceptance >= exp(-(b - a)(a + b) / 2) stays high.
    while (true) {
      const double z = a + (b - a) * rng.uniform_open();
      if (rng.uniform() <= std::exp(0.5 * (a * a - z * z))) return z;
    }
  }
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  while (true) {
    const double z = a - std::log(rng.uniform_open()) / alpha;
    if (z > b) continue;
    const double d = z - alpha;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double normal_sf(double x) { return 0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw NumericalError("normal_quantile: probability outside [0, 1]");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double normal_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

double log_normal_interval(double a, double b) {
  if (!(a < b)) return -kInf;
  if (a >= 0.0) {
    const double la = log_sf(a);
    if (std::isinf(b)) return la;
    const double lb = log_sf(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if (b <= 0.0) return log_normal_interval(-b, -a);
  const double outside = normal_cdf(a) + normal_sf(b);
  return std::log1p(-outside);
}

std::vector<double> cutpoints_from_increments(std::span<const double> rho) {
  std::vector<double> gamma(rho.size());
  double acc = 0.0;
  for (std::size_t l = 0; l < rho.size(); ++l) {
    if (!std::isfinite(rho[l])) throw NumericalError("cutpoint increment is not finite");
    acc += std::exp(rho[l]);
    gamma[l] = acc;
  }
  return gamma;
}

int score_from_latent(double t, std::span<const double> gamma, int levels) {
  // first cutpoint with t <= gamma_l; right-closed brackets
  const auto it = std::lower_bound(gamma.begin(), gamma.begin() + (levels - 1), t);
  return static_cast<int>(it - gamma.begin()) + 1;
}

double sample_truncated_normal(double mean, double lower, double upper, Rng& rng) {
  if (!(lower < upper)) {
    throw NumericalError("sample_truncated_normal: lower bound must be below upper bound");
  }
  const double a = lower - mean;
  const double b = upper - mean;
  double z;
  if (a > kTailSwitch) {
    z = sample_right_tail(a, b, rng);
  } else if (b < -kTailSwitch) {
    z = -sample_right_tail(-b, -a, rng);
  } else if (a > 0.0) {
    const double pa = normal_sf(a);
    const double pb = normal_sf(b);
    z = -normal_quantile(pb + (pa - pb) * rng.uniform_open());
  } else {
    const double pa = normal_cdf(a);
    const double pb = normal_cdf(b);
    z = normal_quantile(pa + (pb - pa) * rng.uniform_open());
  }
  double x = mean + z;
  if (x <= lower) x = std::nextafter(lower, kInf);
  if (x > upper) x = upper;
  return x;
}

std::vector<double> increments_from_frequencies(std::span<const long> level_counts, double min_gap) {
  const std::size_t levels = level_counts.size();
  const double total = std::accumulate(level_counts.begin(), level_counts.end(), 0.0);
  std::vector<double> rho(levels - 1);
  double prev = 0.0;
  double cum = 0.0;
  for (std::size_t l = 0; l + 1 < levels; ++l) {
    cum += static_cast<double>(level_counts[l]);
    const double p = total > 0 ? std::clamp(cum / total, 0.01, 0.99) : (l + 1.0) / levels;
    const double g = std::max(normal_quantile(p), prev + min_gap);
    rho[l] = std::log(g - prev);
    prev = g;
  }
  return rho;
}

}  // namespace befa
