#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace befa {

/// Mixes a master seed and a stream id into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Random source used throughout the library; one instance per chain or task.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  double uniform() { return unif_(engine_); }
  /// Uniform on the open interval (0, 1).
  double uniform_open();
  double normal() { return norm_(engine_); }
  double normal(double mean, double sd) { return mean + sd * norm_(engine_); }
  /// Gamma with shape/rate parameterization (mean shape / rate).
  double gamma(double shape, double rate);
  double chi_squared(double df) { return gamma(0.5 * df, 0.5); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer on [0, n).
  int index(int n);

  Eigen::VectorXd normal_vector(Eigen::Index n);

  /// Wishart draw W(scale, df) with E[W] = df * scale, via the Bartlett
  /// decomposition. `scale` must be symmetric positive definite and
  /// df > dim - 1.
  Eigen::MatrixXd wishart(const Eigen::MatrixXd& scale, double df);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace befa
