#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace befa {

/// Per-teacher estimates of an external construct with their reliability.
struct ExternalMeasure {
  std::string name;
  std::vector<std::string> teacher_ids;
  std::vector<double> estimates;
  double reliability = 1.0;
};

/// CSV `teacher_id,estimate`; reliability must lie in (0, 1].
ExternalMeasure load_external_measure(const std::filesystem::path& path, const std::string& name,
                                      double reliability);

/// Pearson correlation; NaN when either vector has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct DisattenuatedResult {
  int factor = 0;
  std::vector<double> draws;  // C_b / sqrt(r); NaN for undefined draws
  int undefined_draws = 0;
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  int teachers_used = 0;
  int teachers_missing = 0;   // in the factor scores but without an estimate
  int beyond_one = 0;         // draws with |value| > 1, reported unclipped
};

/// Correlates column `factor` of every score draw (N x K, rows follow
/// `teacher_ids`) with the measure and divides by sqrt(reliability).
DisattenuatedResult disattenuated_corr(const std::vector<Eigen::MatrixXd>& score_draws,
                                       const std::vector<std::string>& teacher_ids,
                                       const ExternalMeasure& measure, int factor);

struct KdeGrid {
  std::vector<double> x;
  std::vector<double> density;
  double bandwidth = 0.0;
};

/// Gaussian kernel density on an evenly spaced grid with Silverman's
/// rule-of-thumb bandwidth; non-finite values are ignored.
KdeGrid kernel_density(std::span<const double> values, int points = 256);

}  // namespace befa
