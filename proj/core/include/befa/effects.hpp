#pragma once

#include <map>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "befa/ratings.hpp"

namespace befa {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A (lesson, rater, protocol) combination carrying a rater-by-lesson effect.
struct RaterLessonCell {
  int lesson = 0;
  int rater = 0;
  int protocol = 0;
  auto operator<=>(const RaterLessonCell&) const = default;
};

/// The nuisance and teacher effect blocks of the latent mean decomposition
///   mu_i = teacher + section + lesson + rater + rater_lesson
/// Combined blocks hold one row per unit in global dimension order;
/// rater-by-lesson effects are protocol-local vectors, one per cell.
struct EffectBlocks {
  RowMatrix teacher;
  RowMatrix section;
  RowMatrix lesson;
  RowMatrix rater;
  std::vector<Eigen::VectorXd> rater_lesson;
  std::vector<RaterLessonCell> cells;
  std::map<RaterLessonCell, int> cell_index;

  Eigen::MatrixXd section_precision;
  Eigen::MatrixXd lesson_precision;
  Eigen::MatrixXd rater_precision;
  std::vector<Eigen::MatrixXd> rater_lesson_precision;  // per protocol

  /// Zero effects sized for `ds` with identity precisions.
  static EffectBlocks zeros(const RatingDataset& ds);
  int cell_of(int lesson, int rater, int protocol) const;
};

/// Latent mean of an event's protocol sub-vector (protocol-local order).
Eigen::VectorXd mu_for_event(const EffectBlocks& blocks, const RatingDataset& ds,
                             const ScoringEvent& event);

enum class UniquenessPrior {
  kGammaPrecision,  // 1/u_dd ~ Gamma(shape, rate)
  kUniformSd,       // sqrt(u_dd) ~ Uniform(0, uniform_sd_bound)
};

struct FactorPriors {
  double shape = 1.5;
  double rate = 1.5;
  UniquenessPrior uniqueness = UniquenessPrior::kGammaPrecision;
  double uniform_sd_bound = 100.0;
};

/// Parameter-expanded factor model for teacher effects:
///   teacher_j = working_loadings * working_scores_j + e_j,  e_j ~ N(0, diag(uniqueness))
///   working_scores_j ~ N(0, diag(expansion_precision)^-1)
/// with N(0, 1) working loadings and Gamma(shape, rate) expansion precisions.
struct FactorState {
  Eigen::MatrixXd working_loadings;       // D x K
  Eigen::VectorXd expansion_precision;    // K
  Eigen::MatrixXd working_scores;         // N_teach x K
  Eigen::VectorXd uniqueness;             // D, variances

  int factors() const { return static_cast<int>(working_loadings.cols()); }
};

struct IdentifiedFactors {
  Eigen::MatrixXd loadings;  // D x K
  Eigen::MatrixXd scores;    // N_teach x K
};

/// Removes the expansion: loadings scaled by precision^-1/2 per column,
/// scores by precision^1/2.
IdentifiedFactors identified_loadings(const FactorState& fs);

/// Q = loadings * loadings'.
Eigen::MatrixXd communality(const Eigen::MatrixXd& loadings);

/// Joint prior log density of (working loadings, expansion precisions,
/// uniqueness variances), up to a constant.
double factor_prior_log_density(const FactorState& fs, const FactorPriors& priors);

/// Wishart log density (scale/df convention with mean df * scale), up to the
/// normalizing constant in `x`.
double wishart_log_kernel(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scale, double df);

/// Degrees of freedom of the nuisance precision priors: one plus dimension.
inline double nuisance_prior_df(Eigen::Index dim) { return static_cast<double>(dim) + 1.0; }

}  // namespace befa
