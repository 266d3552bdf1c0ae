#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "befa/error.hpp"
#include "befa/identify.hpp"
#include "befa/rng.hpp"

using namespace befa;

namespace {

Eigen::MatrixXd from_rows(const std::vector<std::vector<double>>& rows) {
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Eigen::MatrixXd random_matrix(Rng& rng, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Eigen::MatrixXd random_orthogonal(Rng& rng, int k) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(rng, k, k));
  return qr.householderQ();
}

SignedPermutation random_signed_perm(Rng& rng, int k) {
  SignedPermutation t = SignedPermutation::identity(k);
  std::shuffle(t.source.begin(), t.source.end(), rng.engine());
  for (auto& s : t.sign) s = rng.uniform() < 0.5 ? -1 : 1;
  return t;
}

// Smallest max-abs deviation between a and b * T over all signed permutations T.
double signed_perm_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto o = best_orientation(a, b);
  return (a - o.t.apply(b)).cwiseAbs().maxCoeff();
}

// Brute-force minimum written independently of enumerate_signed_perms:
// explicit K x K matrices over std::next_permutation and sign masks.
std::pair<double, Eigen::MatrixXd> brute_force(const Eigen::MatrixXd& target, const Eigen::MatrixXd& cand) {
  const int k = static_cast<int>(target.cols());
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best = HUGE_VAL;
  Eigen::MatrixXd best_t;
  do {
    for (int mask = 0; mask < (1 << k); ++mask) {
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
      for (int c = 0; c < k; ++c) t(perm[c], c) = (mask >> c) & 1 ? -1.0 : 1.0;
      const Eigen::MatrixXd r = target - cand * t;
      const double dist = (r.transpose() * r).trace();
      if (dist < best) {
        best = dist;
        best_t = t;
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_t};
}

}  // namespace

TEST_CASE("varimax criterion of a perfectly simple matrix is 4/9") {
  const Eigen::MatrixXd l = from_rows({{1, 0}, {0, 1}, {1, 0}});
  CHECK(varimax_criterion(l) == doctest::Approx(4.0 / 9.0).epsilon(1e-14));
  const auto r = varimax(l);
  CHECK(r.criterion == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(signed_perm_gap(l, r.loadings) < 1e-10);
}

TEST_CASE("varimax with one factor is a reflection at most") {
  const Eigen::MatrixXd l = from_rows({{0.4}, {-0.9}, {0.2}});
  const auto r = varimax(l);
  CHECK(std::abs(std::abs(r.rotation(0, 0)) - 1.0) < 1e-14);
  CHECK((r.loadings.cwiseAbs() - l.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("varimax matches frozen reference rotations") {
  // numpy pairwise-rotation varimax run to convergence
  const Eigen::MatrixXd in7 = from_rows({{0.021, 0.816, 0.735},
                                         {-0.306, -0.179, -0.316},
                                         {0.342, -0.034, 0.448},
                                         {-1.108, 0.94, -0.058},
                                         {0.408, -0.082, -0.227},
                                         {0.278, 0.495, -0.122},
                                         {-0.092, 0.411, -0.522}});
  const Eigen::MatrixXd out7 =
      from_rows({{-0.3903574184413874, 0.0009506406037175262, 1.0267142650953174},
                 {-0.1719560865379623, -0.04796119391853258, -0.4400725260459436},
                 {0.33781295708672715, -0.14299290794690458, 0.42925450993694764},
                 {-1.4477686356443245, 0.032515856206169244, 0.1324261935560766},
                 {0.3554531953403553, 0.30205220826487617, -0.08446590675913589},
                 {-0.07643760397155572, 0.5016917233826875, 0.28223342712796523},
                 {-0.3633902763817267, 0.5316324109886993, -0.1875726169182351}});
  const Eigen::MatrixXd in6 = from_rows(
      {{-0.909, 0.237}, {-0.402, -1.152}, {-0.488, -0.281}, {-0.716, -0.895}, {0.022, 0.538}, {-0.14, -0.446}});
  const Eigen::MatrixXd out6 = from_rows({{-0.9309600107168334, -0.12555261226319941},
                                          {0.0650704949051199, -1.2183898516865617},
                                          {-0.3449221804277899, -0.44512210622360576},
                                          {-0.3229530570478003, -1.0997192018617659},
                                          {-0.18373934019933738, 0.5061302745964837},
                                          {0.039658888902410594, -0.4657715883681895}});
  CHECK(signed_perm_gap(out7, varimax(in7).loadings) < 1e-7);
  CHECK(signed_perm_gap(out6, varimax(in6).loadings) < 1e-7);
}

TEST_CASE("varimax recovers simple structure under 100 random rotations") {
  const Eigen::MatrixXd simple = from_rows(
      {{0.9, 0, 0}, {0.7, 0, 0}, {0.8, 0, 0}, {0, 0.6, 0}, {0, 0.85, 0}, {0, 0.75, 0}, {0, 0, 0.5}, {0, 0, 0.95}});
  const double target = varimax_criterion(simple);
  Rng rng(12);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::MatrixXd p = random_orthogonal(rng, 3);
    const auto r = varimax(simple * p.transpose());
    CHECK(r.criterion >= target - 1e-8);
    CHECK((r.rotation.transpose() * r.rotation - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
    worst = std::max(worst, signed_perm_gap(simple, r.loadings));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("varimax preserves the communality and rejects rank-deficient input") {
  Rng rng(3);
  const Eigen::MatrixXd l = random_matrix(rng, 9, 4);
  const auto r = varimax(l);
  CHECK((r.loadings * r.loadings.transpose() - l * l.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  VarimaxOptions kaiser;
  kaiser.kaiser_normalize = true;
  const auto rk = varimax(l, kaiser);
  CHECK((rk.loadings * rk.loadings.transpose() - l * l.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  Eigen::MatrixXd bad = l;
  bad.col(2) = 2.0 * bad.col(0);
  CHECK_THROWS_AS(varimax(bad), NumericalError);
}

TEST_CASE("signed permutation enumeration is exact and duplicate free") {
  const int expected[] = {0, 2, 8, 48, 384, 3840, 46080};
  for (int k = 1; k <= 5; ++k) {
    const auto all = enumerate_signed_perms(k);
    CHECK(static_cast<int>(all.size()) == expected[k]);
    std::set<std::pair<std::vector<int>, std::vector<int>>> seen;
    for (const auto& t : all) {
      seen.insert({t.source, t.sign});
      const Eigen::MatrixXd m = t.matrix();
      CHECK((m.transpose() * m).isIdentity());
    }
    CHECK(static_cast<int>(seen.size()) == expected[k]);
  }
  CHECK(enumerate_signed_perms(1)[1].sign == std::vector<int>{-1});
  CHECK_THROWS_AS(enumerate_signed_perms(7), ConfigError);
}

TEST_CASE("signed permutation algebra") {
  Rng rng(6);
  const Eigen::MatrixXd l = random_matrix(rng, 5, 3);
  const auto a = random_signed_perm(rng, 3), b = random_signed_perm(rng, 3);
  CHECK(a.apply(l).isApprox(l * a.matrix(), 0.0));
  CHECK(a.then(b).matrix() == a.matrix() * b.matrix());
  CHECK(SignedPermutation::identity(3).matrix().isIdentity());
}

TEST_CASE("best_orientation equals brute force for K <= 4") {
  Rng rng(19);
  for (int k = 1; k <= 4; ++k) {
    for (int rep = 0; rep < 25; ++rep) {
      const Eigen::MatrixXd target = random_matrix(rng, 7, k);
      const Eigen::MatrixXd cand = random_matrix(rng, 7, k);
      const auto o = best_orientation(target, cand);
      const auto [dist, t] = brute_force(target, cand);
      CHECK(o.distance == doctest::Approx(dist).epsilon(1e-12));
      CHECK(o.t.matrix() == t);
    }
  }
}

TEST_CASE("best_orientation recovers a known signed permutation exactly") {
  Rng rng(2);
  const Eigen::MatrixXd target = random_matrix(rng, 6, 3);
  CHECK(best_orientation(target, target).t == SignedPermutation::identity(3));
  CHECK(best_orientation(target, target).distance == 0.0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t0 = random_signed_perm(rng, 3);
    const auto o = best_orientation(target, target * t0.matrix().transpose());
    CHECK(o.t == t0);
    CHECK(o.distance < 1e-24);
  }
}

TEST_CASE("alignment of signed permutations of one matrix is exact") {
  Rng rng(8);
  const Eigen::MatrixXd base = random_matrix(rng, 8, 3);
  std::vector<Eigen::MatrixXd> draws;
  for (int b = 0; b < 200; ++b) draws.push_back(random_signed_perm(rng, 3).apply(base));
  const auto id = align(draws, {});
  for (const auto& l : id.loadings) CHECK((l - id.loadings[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(signed_perm_gap(base, id.loadings[0]) == 0.0);
  // final convention: nonnegative column sums
  CHECK((id.mean_loadings().colwise().sum().array() >= 0.0).all());
  CHECK(id.passes <= 3);
}

TEST_CASE("a single draw is returned up to the sign convention") {
  const Eigen::MatrixXd l = from_rows({{-0.8, 0.1}, {-0.7, -0.2}, {0.1, -0.9}});
  const auto id = align({l}, {});
  REQUIRE(id.loadings.size() == 1);
  Eigen::MatrixXd expect = l;
  expect.col(0) *= -1.0;
  expect.col(1) *= -1.0;
  CHECK(id.loadings[0] == expect);
}

TEST_CASE("alignment is equivariant to row permutations") {
  Rng rng(31);
  const Eigen::MatrixXd base = random_matrix(rng, 8, 2);
  std::vector<Eigen::MatrixXd> draws, permuted;
  std::vector<int> perm{5, 2, 7, 0, 1, 6, 3, 4};
  Eigen::PermutationMatrix<Eigen::Dynamic> p(8);
  for (int i = 0; i < 8; ++i) p.indices()[i] = perm[i];
  for (int b = 0; b < 300; ++b) {
    Eigen::MatrixXd noisy = base + 0.3 * random_matrix(rng, 8, 2);
    draws.push_back(random_signed_perm(rng, 2).apply(noisy));
    permuted.push_back(p * draws.back());
  }
  AlignOptions o;
  o.seed = 4;
  const auto a = align(draws, o), b = align(permuted, o);
  CHECK(a.pivot_draw == b.pivot_draw);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    CHECK(a.orientation[i] == b.orientation[i]);
    CHECK(((p * a.loadings[i]) - b.loadings[i]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("different pivots give the same mean up to one signed permutation") {
  Rng rng(44);
  const Eigen::MatrixXd base = from_rows(
      {{0.9, 0.1, 0.0}, {0.8, 0.0, 0.2}, {0.1, 0.7, 0.0}, {0.0, 0.9, 0.1}, {0.2, 0.0, 0.8}, {0.0, 0.1, 0.6}});
  std::vector<Eigen::MatrixXd> draws;
  for (int b = 0; b < 500; ++b) {
    draws.push_back(random_signed_perm(rng, 3).apply(base + 0.1 * random_matrix(rng, 6, 3)));
  }
  AlignOptions o;
  o.seed = 1;
  const Eigen::MatrixXd m1 = align(draws, o).mean_loadings();
  for (std::uint64_t seed : {2u, 3u, 4u, 5u}) {
    o.seed = seed;
    CHECK(signed_perm_gap(m1, align(draws, o).mean_loadings()) < 1e-10);
  }
}

TEST_CASE("anchors place and sign factors") {
  const Eigen::MatrixXd l = from_rows({{0.1, -0.9}, {0.2, -0.8}, {0.9, 0.1}, {0.8, 0.0}});
  AlignOptions o;
  o.anchors = {{0, 0}};
  const auto id = align({l}, o);
  CHECK(id.loadings[0](0, 0) == doctest::Approx(0.9));
  CHECK(id.loadings[0](2, 1) == doctest::Approx(0.9));
  o.anchors = {{0, 0}, {1, 0}};
  CHECK_THROWS_AS(align({l}, o), ConfigError);
  o.anchors = {{9, 0}};
  CHECK_THROWS_AS(align({l}, o), ConfigError);
}

TEST_CASE("rotate_scores reproduces the low-rank product") {
  Rng rng(5);
  const Eigen::MatrixXd lb = random_matrix(rng, 8, 3);
  const Eigen::MatrixXd eta = random_matrix(rng, 40, 3);
  CHECK((rotate_scores(lb, lb, eta) - eta).cwiseAbs().maxCoeff() < 1e-12);
  const auto t = random_signed_perm(rng, 3);
  CHECK((rotate_scores(lb, t.apply(lb), eta) - eta * t.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXd l = random_matrix(rng, 8, 3);
    const Eigen::MatrixXd e = random_matrix(rng, 40, 3);
    const Eigen::MatrixXd lf = l * random_orthogonal(rng, 3);
    const Eigen::MatrixXd ef = rotate_scores(l, lf, e);
    CHECK((lf * ef.transpose() - l * e.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
  Eigen::MatrixXd bad = lb;
  bad.col(1).setZero();
  CHECK_THROWS_AS(rotate_scores(bad, lb, eta), NumericalError);
}

TEST_CASE("identify_archive keeps communality and score products for every draw") {
  Rng rng(17);
  const int d = 6, k = 2, n = 25, draws = 60;
  DrawArchive a;
  a.factors = k;
  for (int q = 0; q < d; ++q) a.dim_names.push_back("P:d" + std::to_string(q));
  for (int j = 0; j < n; ++j) a.teacher_ids.push_back("t" + std::to_string(j));
  a.n_chains = 1;
  a.loadings.resize(draws, d * k);
  a.scores.resize(draws, n * k);
  const Eigen::MatrixXd base = from_rows({{0.9, 0}, {0.8, 0.1}, {0.7, 0}, {0, 0.9}, {0.1, 0.8}, {0, 0.7}});
  for (int b = 0; b < draws; ++b) {
    a.chain.push_back(0);
    a.iter.push_back(b + 1);
    const Eigen::MatrixXd l = (base + 0.05 * random_matrix(rng, d, k)) * random_orthogonal(rng, k);
    for (int q = 0; q < d; ++q) {
      for (int c = 0; c < k; ++c) a.loadings(b, q * k + c) = l(q, c);
    }
    for (int i = 0; i < n * k; ++i) a.scores(b, i) = rng.normal();
  }
  const auto id = identify_archive(a, {});
  REQUIRE(id.posterior.scores.size() == static_cast<std::size_t>(draws));
  double comm = 0.0, prod = 0.0;
  for (int b = 0; b < draws; ++b) {
    const Eigen::MatrixXd lb = a.loadings_at(b), lf = id.posterior.loadings[b];
    comm = std::max(comm, (lf * lf.transpose() - lb * lb.transpose()).cwiseAbs().maxCoeff());
    prod = std::max(prod, (lf * id.posterior.scores[b].transpose() - lb * a.scores_at(b).transpose())
                              .cwiseAbs()
                              .maxCoeff());
    CHECK(lf == id.posterior.orientation[b].apply(id.varimax[b]));
  }
  CHECK(comm < 1e-10);
  CHECK(prod < 1e-10);
  CHECK(signed_perm_gap(base, id.posterior.mean_loadings()) < 0.05);
  a.factors = 0;
  CHECK_THROWS_AS(identify_archive(a, {}), ConfigError);
}

TEST_CASE("parse_anchor") {
  const std::vector<std::string> dims{"P1:a1", "P1:a2", "P2:a1", "P2:b2"};
  const Anchor a = parse_anchor("dim=P1:a2:factor=2", dims);
  CHECK(a.dim == 1);
  CHECK(a.factor == 1);
  CHECK(parse_anchor("dim=b2:factor=1", dims).dim == 3);
  CHECK_THROWS_AS(parse_anchor("dim=a1:factor=1", dims), ConfigError);
  CHECK_THROWS_AS(parse_anchor("dim=zz:factor=1", dims), ConfigError);
  CHECK_THROWS_AS(parse_anchor("P1:a1=1", dims), ConfigError);
  CHECK_THROWS_AS(parse_anchor("dim=P1:a1:factor=x", dims), ConfigError);
}
