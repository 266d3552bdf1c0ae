#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "befa/archive.hpp"
#include "befa/effects.hpp"
#include "befa/ordinal.hpp"
#include "befa/ratings.hpp"
#include "befa/rng.hpp"

namespace befa {

/// Blocks held fixed at their initial values during sweeps. Used by oracle
/// tests that need a tractable sub-model.
struct FreezeMask {
  bool latent_scores = false;
  bool cutpoints = false;        // rho
  bool cutpoint_scale = false;   // tau
  bool nuisance_effects = false;
  bool nuisance_precisions = false;
  bool teacher_effects = false;
  bool factors = false;          // working loadings, scores, expansion precisions
  bool uniqueness = false;
};

struct SamplerConfig {
  int factors = 2;
  int n_adapt = 1000;
  int n_iter = 80000;   // post-adaptation iterations, burn-in included
  int n_burn = 50000;
  int thin = 1;
  int n_chains = 5;
  std::uint64_t seed = 1;             // master seed when `seeds` is empty
  std::vector<std::uint64_t> seeds;   // explicit per-chain seeds
  double rho_step = 0.1;
  double tau_step = 0.5;
  double target_acceptance = 0.44;
  FactorPriors priors;
  FreezeMask freeze;
  int threads = 1;
  bool keep_scores = true;
  bool keep_event_loglik = false;

  void validate() const;
  std::uint64_t chain_seed(int chain) const;
  int retained_per_chain() const { return (n_iter - n_burn) / thin; }
};

/// Dense index structures derived from a dataset, shared read-only by chains.
/// An observation is one non-missing (event, dimension) score.
struct ModelLayout {
  int dims = 0, teachers = 0, sections = 0, lessons = 0, raters = 0;
  std::vector<int> levels;  // per global dim
  std::vector<int> protocol_of_dim;

  std::vector<int> obs_event, obs_dim, obs_local, obs_score;
  std::vector<int> obs_teacher, obs_section, obs_lesson, obs_rater, obs_cell;
  std::vector<int> event_begin;  // observations of event i: [event_begin[i], event_begin[i+1])

  /// Observations per dimension sorted by score; dim_score_begin[d][y] is the
  /// first entry with score >= y (index y in 1..L, plus L+1 as the end).
  std::vector<std::vector<int>> dim_obs;
  std::vector<std::vector<int>> dim_score_begin;
  std::vector<std::vector<long>> level_counts;  // [d][y-1]

  std::vector<RaterLessonCell> cells;
  std::vector<int> cell_protocol;

  RowMatrix teacher_counts, section_counts, lesson_counts, rater_counts;
  std::vector<Eigen::VectorXd> cell_counts;

  // Units sharing a count vector share the conditional precision.
  struct CountPatterns {
    std::vector<int> pattern_of;
    std::vector<Eigen::VectorXd> patterns;
    std::vector<int> pattern_protocol;  // cells only; 0 for combined blocks
  };
  CountPatterns section_patterns, lesson_patterns, rater_patterns, cell_patterns;

  static ModelLayout build(const RatingDataset& ds);
  int observations() const { return static_cast<int>(obs_event.size()); }
  int events() const { return static_cast<int>(event_begin.size()) - 1; }
  /// Dimensions with some score level used fewer than `min_count` times.
  std::vector<int> sparse_level_dims(long min_count = 5) const;
};

/// Random-walk Metropolis proposal scale with Robbins-Monro adaptation.
struct AdaptiveStep {
  double log_step = 0.0;
  long proposals = 0;
  long accepts = 0;
  double acceptance() const { return proposals ? static_cast<double>(accepts) / proposals : 0.0; }
};

/// All latent quantities of one chain.
struct ChainState {
  int chain = 0;
  CutpointState cutpoints;
  std::vector<double> latent;  // per observation
  std::vector<double> mu;      // cached latent means per observation
  EffectBlocks effects;
  FactorState factors;
  Rng rng;
  long iteration = 0;
  std::vector<std::vector<AdaptiveStep>> rho_steps;  // [d][l]
  std::vector<AdaptiveStep> tau_steps;               // [d]
};

/// Metropolis-within-Gibbs sampler for the hierarchical ordinal factor model.
class GibbsSampler {
 public:
  GibbsSampler(const RatingDataset& ds, SamplerConfig cfg);

  const ModelLayout& layout() const { return layout_; }
  const SamplerConfig& config() const { return cfg_; }
  const RatingDataset& dataset() const { return *ds_; }

  /// Initial state: zero effects, small random working loadings, unit
  /// uniqueness, cutpoints at empirical probit quantiles, latent scores drawn.
  ChainState initialize(int chain, std::uint64_t seed) const;

  /// One full fixed-order sweep. `adapt_index` >= 0 adapts Metropolis steps
  /// with gain (adapt_index + 1)^-0.6.
  void sweep(ChainState& state, long adapt_index = -1) const;

  /// log f(y_i | effects, cutpoints), integrating only the latent scores.
  double event_loglik(const ChainState& state, int event) const;

  /// Recomputes the cached latent means from the effect blocks.
  void refresh_mu(ChainState& state) const;

  /// Redraws every latent score from its truncated-normal conditional.
  void draw_latent(ChainState& state) const;

 private:
  void update_nuisance(ChainState& s) const;
  void update_precisions(ChainState& s) const;
  void update_teacher(ChainState& s) const;
  void update_factors(ChainState& s) const;
  void update_uniqueness(ChainState& s) const;
  void update_cutpoints(ChainState& s, long adapt_index) const;
  void update_cutpoint_scale(ChainState& s, long adapt_index) const;
  void update_combined_block(ChainState& s, RowMatrix& block, const Eigen::MatrixXd& precision,
                             const std::vector<int>& obs_group,
                             const ModelLayout::CountPatterns& patterns, const char* name) const;
  void update_cells(ChainState& s) const;
  [[noreturn]] void fail(const ChainState& s, const std::string& what) const;

  const RatingDataset* ds_;
  SamplerConfig cfg_;
  ModelLayout layout_;
};

struct ChainReport {
  int chain = 0;
  std::uint64_t seed = 0;
  double seconds = 0.0;
  double rho_acceptance = 0.0;  // post-adaptation mean over all rho proposals
  double tau_acceptance = 0.0;
};

struct RunReport {
  std::vector<ChainReport> chains;
  std::vector<int> sparse_level_dims;
  double seconds = 0.0;
};

/// Runs cfg.n_chains chains (concurrently up to cfg.threads), each with
/// n_adapt adaptation sweeps, then n_iter sweeps keeping every `thin`-th draw
/// after the first n_burn.
DrawArchive run(const RatingDataset& ds, const SamplerConfig& cfg, RunReport* report = nullptr);

/// Runs one chain from a prepared state; used by `run` and by tests that
/// need custom initial values.
DrawArchive run_chain(const GibbsSampler& sampler, ChainState state, std::uint64_t seed,
                      ChainReport* report = nullptr);

/// Archive skeleton with metadata filled from the dataset and config.
DrawArchive make_archive_header(const RatingDataset& ds, const SamplerConfig& cfg);

}  // namespace befa
