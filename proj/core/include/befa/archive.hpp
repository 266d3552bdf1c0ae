#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "befa/effects.hpp"

namespace befa {

/// Posterior draws from one or more chains. Matrix-valued blocks are stored
/// one row per retained draw, flattened row-major (d outer, k inner).
struct DrawArchive {
  int factors = 0;
  std::vector<std::string> dim_names;   // global order, "protocol:dim"
  std::vector<int> dim_canonical;       // canonical index at each position
  std::vector<std::string> teacher_ids;
  std::vector<std::string> event_ids;
  int n_chains = 0;
  std::vector<std::uint64_t> seeds;
  int n_adapt = 0, n_iter = 0, n_burn = 0, thin = 1;
  std::string uniqueness_prior = "gamma";

  std::vector<int> chain;
  std::vector<long> iter;
  RowMatrix loadings;             // identified scale, D*K per row
  RowMatrix uniqueness;           // D
  RowMatrix communality;          // D*D
  RowMatrix scores;               // N_teach*K, identified scale; empty when not kept
  RowMatrix variance_components;  // nuisance effect variances
  std::vector<std::string> variance_component_names;
  RowMatrix cutpoints;
  std::vector<std::string> cutpoint_names;
  RowMatrix event_loglik;         // draws x events; empty unless requested

  /// Streaming harmonic-mean accumulators: log((1/B_c) sum_b exp(-loglik_ib))
  /// for chain c (rows) and event i (columns).
  RowMatrix cpo_log_mean_inv;
  std::vector<long> cpo_draws;    // B_c per chain

  int draw_count() const { return static_cast<int>(chain.size()); }
  int dims() const { return static_cast<int>(dim_names.size()); }
  int teachers() const { return static_cast<int>(teacher_ids.size()); }
  bool has_scores() const { return scores.rows() > 0; }

  Eigen::MatrixXd loadings_at(int draw) const;
  Eigen::MatrixXd communality_at(int draw) const;
  Eigen::VectorXd uniqueness_at(int draw) const;
  /// Q + U for one draw.
  Eigen::MatrixXd total_covariance_at(int draw) const;
  /// N_teach x K factor scores.
  Eigen::MatrixXd scores_at(int draw) const;
  std::vector<int> draws_of_chain(int c) const;
  /// Column of `block` for one chain, in draw order (for convergence checks).
  std::vector<double> chain_series(const RowMatrix& block, int column, int c) const;
};

/// Appends the rows of `part` (same metadata) to `into`. Per-chain CPO rows
/// and seeds are concatenated.
void merge_archive(DrawArchive& into, DrawArchive&& part);

/// Directory layout: `meta` (key = value), `teachers.csv`, `events.csv`,
/// one CSV per block with `chain,iter,<columns>`, `cpo_accumulators.csv`
/// and, when present, `event_loglik.csv` as `chain,iter,event_id,loglik`.
void save_archive(const DrawArchive& archive, const std::filesystem::path& dir);
DrawArchive load_archive(const std::filesystem::path& dir);

}  // namespace befa
