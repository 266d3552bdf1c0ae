#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "befa/csv.hpp"
#include "befa/effects.hpp"
#include "befa/ratings.hpp"

namespace befa {

/// Ground truth and design of a simulated study.
struct TruthConfig {
  std::vector<ProtocolDef> protocols;
  int teachers = 150;
  int sections_per_teacher = 2;
  int lessons_per_section = 2;
  int segments_per_lesson = 3;
  int raters = 6;
  double double_rating_fraction = 0.2;

  Eigen::MatrixXd loadings;      // D x K, canonical dim order
  Eigen::VectorXd uniqueness;    // D
  Eigen::MatrixXd section_cov;   // D x D
  Eigen::MatrixXd lesson_cov;    // D x D
  Eigen::MatrixXd rater_cov;     // D x D
  std::vector<Eigen::MatrixXd> rater_lesson_cov;  // D_P x D_P per protocol
  std::vector<std::vector<double>> cutpoints;     // per dim, levels - 1 increasing values
  std::uint64_t seed = 20150601;

  int dimension_count() const;
  int factors() const { return static_cast<int>(loadings.cols()); }
};

/// Throws ConfigError when the config breaks an invariant (shapes, PSD
/// covariances, positive uniqueness, increasing cutpoints, counts).
void validate_truth(const TruthConfig& cfg);

/// Overlays `key = value` entries on the desk-scale defaults. Keys:
/// `schema` (path, relative to `base_dir`), `seed`, `teachers`,
/// `sections_per_teacher`, `lessons_per_section`, `segments_per_lesson`,
/// `raters`, `double_rating_fraction`, `factors`, `loadings` (D*K row-major),
/// `uniqueness` (D), `section_cov`, `lesson_cov`, `rater_cov` (D*D),
/// `rater_lesson_cov.PROTOCOL` and `cutpoints.PROTOCOL:DIM`. Unknown keys and
/// wrongly sized lists throw ConfigError naming the key.
TruthConfig load_truth_config(const std::vector<KeyValue>& entries,
                              const std::filesystem::path& base_dir = {});

/// Two 4-dimension protocols on a 1..4 scale, two factors that cut across
/// protocols, 150 teachers x 2 sections x 2 lessons x 3 segments, 6 raters,
/// 20% double rating.
TruthConfig desk_scale_config(std::uint64_t seed = 20150601);

/// Every latent quantity drawn by simulate().
struct TruthRecord {
  Eigen::MatrixXd factor_scores;   // N_teach x K
  RowMatrix teacher_effects;       // N_teach x D
  RowMatrix section_effects;
  RowMatrix lesson_effects;
  RowMatrix rater_effects;
  std::vector<RaterLessonCell> cells;
  std::vector<Eigen::VectorXd> rater_lesson_effects;
  std::vector<std::vector<double>> latent;  // per event, protocol-local order
};

std::pair<RatingDataset, TruthRecord> simulate(const TruthConfig& cfg);

/// Reorders the global dimensions: the new position q holds the dimension
/// previously at position perm[q]. Events are untouched; the composed
/// permutation is recorded in `canonical_at`.
RatingDataset permute_dimensions(const RatingDataset& ds, const std::vector<int>& perm);

/// Inverse of a permutation given as new-position -> old-position.
std::vector<int> invert_permutation(const std::vector<int>& perm);

/// Writes one CSV per latent block plus `truth_config.txt`.
void write_truth(const TruthConfig& cfg, const TruthRecord& truth, const RatingDataset& ds,
                 const std::filesystem::path& dir);

}  // namespace befa
