#include "befa/rng.hpp"

#include "befa/error.hpp"

namespace befa {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform_open() {
  double u;
  do {
    u = unif_(engine_);
  } while (u <= 0.0);
  return u;
}

double Rng::gamma(double shape, double rate) {
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return g(engine_);
}

int Rng::index(int n) {
  std::uniform_int_distribution<int> d(0, n - 1);
  return d(engine_);
}

Eigen::VectorXd Rng::normal_vector(Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

Eigen::MatrixXd Rng::wishart(const Eigen::MatrixXd& scale, double df) {
  const Eigen::Index p = scale.rows();
  if (df <= static_cast<double>(p) - 1.0) {
    throw NumericalError("wishart: degrees of freedom must exceed dim - 1");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("wishart: scale matrix is not positive definite");
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal();
  }
  const Eigen::MatrixXd la = llt.matrixL() * a;
  return la * la.transpose();
}

}  // namespace befa
