#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "befa/archive.hpp"

namespace befa {

struct LpmlResult {
  int factors = 0;
  std::vector<double> per_chain;
  double average = 0.0;
  double chain_sd = 0.0;
  double chain_min = 0.0;
  double chain_max = 0.0;
  std::vector<double> log_cpo;       // per event, averaged over chains
  std::vector<int> unstable_events;  // non-finite harmonic-mean denominator
};

/// log CPO_i = -log((1/B) sum_b exp(-loglik_ib)) per event for one chain
/// (draws x events), stabilized by the per-event maximum.
std::vector<double> log_cpo(const RowMatrix& loglik);

/// Per-chain LPML from the stored per-event log-likelihoods when present,
/// otherwise from the streaming CPO accumulators; then averaged over chains.
LpmlResult lpml(const DrawArchive& archive);

/// Same from per-chain log CPO vectors.
LpmlResult lpml_from_log_cpo(const std::vector<std::vector<double>>& per_chain, int factors = 0);

struct EigenPosterior {
  RowMatrix values;  // draws x D, each row nonincreasing
  int skipped = 0;   // draws whose covariance was not positive definite
};

/// Eigenvalues of the correlation matrix of each covariance draw.
EigenPosterior eigens_of_corr(const std::vector<Eigen::MatrixXd>& covariances);
/// From the Q + U draws of an archive.
EigenPosterior eigens_of_corr(const DrawArchive& archive);

/// Ordered eigenvalues of the sample correlation of an n x d data matrix.
Eigen::VectorXd sample_corr_eigenvalues(const Eigen::MatrixXd& data);

struct ParallelOptions {
  long n_null = 100000;
  double percentile = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  int max_eigen = 10;    // number of leading eigenvalues compared
  long block = 1000;     // null replicates per seeded block
};

struct ParallelAnalysisResult {
  std::vector<double> mean;       // posterior-mean eigenvalues
  std::vector<double> lower;      // 0.025 quantile
  std::vector<double> upper;      // 0.975 quantile
  std::vector<double> threshold;  // null percentile
  int selected = 0;
  bool small_sample = false;      // N <= D
};

/// Percentile thresholds of the leading null eigenvalues for n iid standard
/// Gaussian vectors of dimension d. Blocks of replicates use seeds derived
/// from the master seed, so the result does not depend on `threads`.
std::vector<double> null_eigen_thresholds(int n, int d, const ParallelOptions& options);

/// Compares posterior-mean eigenvalues to the null thresholds. The selected
/// K is the length of the leading run with mean > threshold.
ParallelAnalysisResult horn_select(const EigenPosterior& eig, const std::vector<double>& thresholds);
ParallelAnalysisResult horn_parallel(const EigenPosterior& eig, int n, const ParallelOptions& options);

/// Potential scale reduction factor; empty when the within-chain variance
/// is zero. Chains must have equal length >= 2.
std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& chains);

/// Hartigan's dip statistic of a sample (any order). 0 for a constant sample.
double dip_statistic(std::span<const double> sample);

struct DipOptions {
  int replicates = 10000;
  std::uint64_t seed = 20240101;
};

struct DipResult {
  double dip = 0.0;
  double p_value = 1.0;
};

/// Dip statistic with a Monte Carlo p-value against the uniform null. Null
/// tables are cached per (n, replicates, seed) and shared across threads.
DipResult dip_test(std::span<const double> sample, const DipOptions& options = {});

/// Null distribution of the dip for sample size n, sorted ascending.
const std::vector<double>& dip_null_table(int n, const DipOptions& options = {});

/// Empirical quantile with linear interpolation (type 7); NaN when empty.
double quantile(std::vector<double> values, double p);

}  // namespace befa
