#include <doctest.h>

#include <cmath>
#include <fstream>

#include "befa/error.hpp"
#include "befa/modelcheck.hpp"
#include "befa/rng.hpp"
#include "befa/stage2.hpp"
#include "temp_dir.hpp"

using namespace befa;

namespace {

struct Fixture {
  std::vector<Eigen::MatrixXd> draws;
  std::vector<std::string> ids;
  ExternalMeasure measure;
};

Fixture make_fixture(int n, int b, std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  for (int j = 0; j < n; ++j) f.ids.push_back("t" + std::to_string(j));
  for (int i = 0; i < b; ++i) {
    Eigen::MatrixXd s(n, 2);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = rng.normal();
    f.draws.push_back(s);
  }
  f.measure.name = "m";
  f.measure.teacher_ids = f.ids;
  for (int j = 0; j < n; ++j) f.measure.estimates.push_back(f.draws[0](j, 0) + rng.normal());
  return f;
}

}  // namespace

TEST_CASE("pearson correlation") {
  const std::vector<double> a{1, 2, 3}, b{2, 4, 7};
  CHECK(pearson(a, b) == doctest::Approx(5.0 / std::sqrt(2.0 * 114.0 / 9.0)).epsilon(1e-14));
  CHECK(pearson(a, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(std::isnan(pearson(a, std::vector<double>{1, 1, 1})));
  CHECK(std::isnan(pearson(a, std::vector<double>{1, 2})));
}

TEST_CASE("reliability one leaves the per-draw correlations unchanged") {
  auto f = make_fixture(40, 30, 1);
  f.measure.reliability = 1.0;
  const auto r = disattenuated_corr(f.draws, f.ids, f.measure, 0);
  REQUIRE(r.draws.size() == 30);
  for (int b = 0; b < 30; ++b) {
    const Eigen::VectorXd col = f.draws[b].col(0);
    CHECK(r.draws[b] == doctest::Approx(pearson(std::span(col.data(), col.size()), f.measure.estimates)));
  }
  CHECK(r.teachers_used == 40);
  CHECK(r.teachers_missing == 0);
  CHECK(r.q025 <= r.mean);
  CHECK(r.mean <= r.q975);
}

TEST_CASE("disattenuation divides by the square root of the reliability") {
  auto f = make_fixture(40, 10, 2);
  const auto raw = disattenuated_corr(f.draws, f.ids, f.measure, 1);
  f.measure.reliability = 0.64;
  const auto adj = disattenuated_corr(f.draws, f.ids, f.measure, 1);
  for (int b = 0; b < 10; ++b) CHECK(adj.draws[b] == doctest::Approx(raw.draws[b] / 0.8));
}

TEST_CASE("flipping the factor or the measure flips the sign") {
  auto f = make_fixture(30, 20, 3);
  f.measure.reliability = 0.7;
  const auto base = disattenuated_corr(f.draws, f.ids, f.measure, 0);
  auto flipped = f.draws;
  for (auto& s : flipped) s.col(0) *= -1.0;
  const auto a = disattenuated_corr(flipped, f.ids, f.measure, 0);
  auto neg = f.measure;
  for (auto& v : neg.estimates) v = -v;
  const auto b = disattenuated_corr(f.draws, f.ids, neg, 0);
  for (int i = 0; i < 20; ++i) {
    CHECK(a.draws[i] == doctest::Approx(-base.draws[i]).epsilon(1e-14));
    CHECK(b.draws[i] == doctest::Approx(-base.draws[i]).epsilon(1e-14));
  }
  CHECK(a.mean == doctest::Approx(-base.mean));
  CHECK(a.q025 == doctest::Approx(-base.q975));
}

TEST_CASE("teachers without estimates are skipped and counted") {
  auto f = make_fixture(10, 5, 4);
  f.measure.teacher_ids.resize(6);
  f.measure.estimates.resize(6);
  f.measure.teacher_ids.push_back("stranger");
  f.measure.estimates.push_back(2.0);
  const auto r = disattenuated_corr(f.draws, f.ids, f.measure, 0);
  CHECK(r.teachers_used == 6);
  CHECK(r.teachers_missing == 4);
  f.measure.teacher_ids.resize(2);
  f.measure.estimates.resize(2);
  CHECK_THROWS_AS(disattenuated_corr(f.draws, f.ids, f.measure, 0), ValidationError);
  auto g = make_fixture(10, 5, 4);
  CHECK_THROWS_AS(disattenuated_corr(g.draws, g.ids, g.measure, 2), ConfigError);
}

TEST_CASE("values beyond one are reported, not clipped") {
  auto f = make_fixture(12, 50, 5);
  for (auto& s : f.draws) s.col(0) = Eigen::Map<const Eigen::VectorXd>(f.measure.estimates.data(), 12);
  f.measure.reliability = 0.5;
  const auto r = disattenuated_corr(f.draws, f.ids, f.measure, 0);
  CHECK(r.beyond_one == 50);
  CHECK(r.mean == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("external measure loader") {
  TempDir tmp;
  {
    std::ofstream out(tmp / "m.csv");
    out << "teacher_id,estimate\nt1,0.5\nt2,-1.25\n";
  }
  const auto m = load_external_measure(tmp / "m.csv", "vam", 0.8);
  CHECK(m.teacher_ids == std::vector<std::string>{"t1", "t2"});
  CHECK(m.estimates[1] == -1.25);
  CHECK(m.reliability == 0.8);
  CHECK_THROWS_AS(load_external_measure(tmp / "m.csv", "vam", 0.0), ConfigError);
  CHECK_THROWS_AS(load_external_measure(tmp / "m.csv", "vam", 1.2), ConfigError);
  {
    std::ofstream out(tmp / "dup.csv");
    out << "teacher_id,estimate\nt1,0.5\nt1,0.7\n";
  }
  CHECK_THROWS_AS(load_external_measure(tmp / "dup.csv", "vam", 1.0), ParseError);
  {
    std::ofstream out(tmp / "bad.csv");
    out << "teacher_id,estimate\nt1,abc\n";
  }
  CHECK_THROWS_AS(load_external_measure(tmp / "bad.csv", "vam", 1.0), ParseError);
}

TEST_CASE("kernel density integrates to one with Silverman's bandwidth") {
  Rng rng(8);
  std::vector<double> v(500);
  for (auto& x : v) x = rng.normal(0.3, 0.1);
  v.push_back(NAN);
  const auto g = kernel_density(v, 400);
  REQUIRE(g.x.size() == 400);
  double area = 0.0;
  for (std::size_t i = 1; i < g.x.size(); ++i) {
    area += 0.5 * (g.density[i] + g.density[i - 1]) * (g.x[i] - g.x[i - 1]);
  }
  CHECK(area == doctest::Approx(1.0).epsilon(0.01));
  v.pop_back();
  double mean = 0.0, ss = 0.0;
  for (const double x : v) mean += x / 500.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / 499.0);
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  CHECK(g.bandwidth == doctest::Approx(0.9 * std::min(sd, iqr / 1.34) * std::pow(500.0, -0.2)));
  CHECK(kernel_density(std::vector<double>{1.0}).x.empty());
}
