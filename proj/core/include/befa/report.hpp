#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "befa/modelcheck.hpp"
#include "befa/stage2.hpp"

namespace befa {

/// LPML against K: averaged value as a line, per-chain values as dots.
std::string lpml_svg(const std::vector<LpmlResult>& results);

/// Posterior-mean eigenvalues with 95% intervals and the null threshold line.
std::string eigen_svg(const ParallelAnalysisResult& result);

/// Squared loadings divided by each dimension's total variance
/// (communality + uniqueness), so each row sums to at most 1.
Eigen::MatrixXd variance_share(const Eigen::MatrixXd& loadings, const Eigen::VectorXd& uniqueness);

/// Heatmap of variance_share with dimension names on the rows.
std::string loading_heatmap_svg(const Eigen::MatrixXd& share, const std::vector<std::string>& dims);

struct DensityCurve {
  std::string label;
  KdeGrid grid;
  double q025 = 0.0;
  double q975 = 0.0;
};

/// Overlaid density curves with the 0.025 and 0.975 quantiles as dots.
std::string density_svg(const std::vector<DensityCurve>& curves, const std::string& x_label);

}  // namespace befa
