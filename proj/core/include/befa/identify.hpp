#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "befa/archive.hpp"

namespace befa {

/// K x K permutation matrix with +-1 entries, stored column-wise:
/// T(source[k], k) = sign[k], so column k of L*T is sign[k] * column source[k] of L.
struct SignedPermutation {
  std::vector<int> source;
  std::vector<int> sign;

  static SignedPermutation identity(int k);
  int size() const { return static_cast<int>(source.size()); }
  Eigen::MatrixXd matrix() const;
  /// L * T without forming T.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& loadings) const;
  /// The signed permutation equal to (*this) * next.
  SignedPermutation then(const SignedPermutation& next) const;
  bool operator==(const SignedPermutation&) const = default;
};

/// sum_k [ mean_d(L_dk^4) - (mean_d(L_dk^2))^2 ]
double varimax_criterion(const Eigen::MatrixXd& loadings);

struct VarimaxOptions {
  bool kaiser_normalize = false;
  double tolerance = 1e-10;   // on the criterion increase per sweep
  int max_sweeps = 500;
  int max_restarts = 5;       // random restarts when a run stalls
  std::uint64_t seed = 1;
};

struct VarimaxResult {
  Eigen::MatrixXd loadings;   // L * rotation
  Eigen::MatrixXd rotation;   // K x K orthogonal
  double criterion = 0.0;
  int sweeps = 0;
};

/// Maximizes the varimax criterion over orthogonal rotations by pairwise
/// planar rotations. Throws NumericalError on rank-deficient input and
/// ConvergenceError (with the criterion trace) when every restart stalls.
VarimaxResult varimax(const Eigen::MatrixXd& loadings, const VarimaxOptions& options = {});

inline constexpr int kSignedPermutationCap = 6;

/// All 2^K K! signed permutations: permutations in lexicographic order, and
/// for each the sign patterns in bitmask order (bit k set = column k negated).
std::vector<SignedPermutation> enumerate_signed_perms(int k, int cap = kSignedPermutationCap);

struct Orientation {
  SignedPermutation t;
  double distance = 0.0;  // squared Frobenius norm of target - candidate * T
};

/// Signed permutation T minimizing ||target - candidate * T||_F^2; the first
/// minimum in enumeration order wins ties.
Orientation best_orientation(const Eigen::MatrixXd& target, const Eigen::MatrixXd& candidate,
                             const std::vector<SignedPermutation>& all);
Orientation best_orientation(const Eigen::MatrixXd& target, const Eigen::MatrixXd& candidate);

/// Places the factor with the largest |mean loading| on `dim` at column
/// `factor`, signed so that loading is positive.
struct Anchor {
  int dim = 0;
  int factor = 0;
};

struct AlignOptions {
  std::uint64_t seed = 1;
  int max_passes = 100;
  std::vector<Anchor> anchors;
  int threads = 1;
};

struct IdentifiedPosterior {
  std::vector<Eigen::MatrixXd> loadings;          // Lambda_F per draw
  std::vector<Eigen::MatrixXd> scores;            // eta_F per draw (N x K) when available
  std::vector<SignedPermutation> orientation;     // T_b, final relabeling included
  SignedPermutation relabel;                      // final global relabeling
  std::vector<Eigen::MatrixXd> pivot_history;     // pivot used in each pass
  int pivot_draw = 0;
  int passes = 0;

  Eigen::MatrixXd mean_loadings() const;
};

/// Iterative pivot alignment of varimax loading draws.
IdentifiedPosterior align(const std::vector<Eigen::MatrixXd>& draws, const AlignOptions& options);

/// eta_F = eta_b (L_b' L_b)^-1 L_b' L_F with scores stored N x K, so that
/// L_F eta_F' = L_b eta_b'. Throws NumericalError if L_b is rank deficient.
Eigen::MatrixXd rotate_scores(const Eigen::MatrixXd& lambda_b, const Eigen::MatrixXd& lambda_f,
                              const Eigen::MatrixXd& eta_b);

struct IdentifyOptions {
  VarimaxOptions varimax;
  AlignOptions align;
};

struct ArchiveIdentification {
  std::vector<Eigen::MatrixXd> raw;      // Lambda_b
  std::vector<Eigen::MatrixXd> varimax;  // Lambda_Vb
  IdentifiedPosterior posterior;
};

/// varimax per draw, alignment, then factor-score rotation when the archive
/// holds scores.
ArchiveIdentification identify_archive(const DrawArchive& archive, const IdentifyOptions& options);

/// Parses `dim=NAME:factor=k` (k is 1-based) against the archive's dims;
/// NAME is qualified `protocol:dim` or an unambiguous bare dim name.
Anchor parse_anchor(const std::string& text, const std::vector<std::string>& dim_names);

}  // namespace befa
