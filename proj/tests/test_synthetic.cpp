#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "befa/csv.hpp"
#include "befa/error.hpp"
#include "befa/synthetic.hpp"
#include "temp_dir.hpp"

using namespace befa;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// One protocol, no nuisance variance.
TruthConfig bare_config(int dims, int levels, int teachers) {
  TruthConfig cfg;
  ProtocolDef p{"P", {}, levels};
  for (int d = 0; d < dims; ++d) p.dims.push_back("d" + std::to_string(d));
  cfg.protocols = {p};
  cfg.teachers = teachers;
  cfg.sections_per_teacher = 1;
  cfg.lessons_per_section = 1;
  cfg.segments_per_lesson = 1;
  cfg.raters = 2;
  cfg.double_rating_fraction = 0.0;
  cfg.loadings = Eigen::MatrixXd::Zero(dims, 1);
  cfg.uniqueness = Eigen::VectorXd::Ones(dims);
  cfg.section_cov = cfg.lesson_cov = cfg.rater_cov = Eigen::MatrixXd::Zero(dims, dims);
  cfg.rater_lesson_cov = {Eigen::MatrixXd::Zero(dims, dims)};
  cfg.cutpoints.assign(dims, std::vector<double>{});
  for (auto& c : cfg.cutpoints) {
    for (int l = 1; l < levels; ++l) c.push_back(static_cast<double>(l - 1));
  }
  return cfg;
}

}  // namespace

TEST_CASE("desk-scale defaults") {
  const TruthConfig cfg = desk_scale_config();
  CHECK(cfg.dimension_count() == 8);
  CHECK(cfg.factors() == 2);
  CHECK(cfg.teachers == 150);
  CHECK_NOTHROW(validate_truth(cfg));
  const auto [ds, truth] = simulate(cfg);
  CHECK(ds.teachers.size() == 150);
  CHECK(ds.sections.size() == 300);
  CHECK(ds.lessons.size() == 600);
  CHECK(ds.segments.size() == 1800);
  CHECK(ds.raters.size() == 6);
  // every segment is scored on both protocols, plus double ratings
  CHECK(ds.event_count() >= 2 * 1800);
  CHECK(truth.factor_scores.rows() == 150);
  CHECK(truth.teacher_effects.cols() == 8);
}

TEST_CASE("zero effects and a cutpoint at 0 give score 1 with probability one half") {
  TruthConfig cfg = bare_config(1, 2, 4000);
  cfg.uniqueness = Eigen::VectorXd::Constant(1, 1e-12);
  cfg.cutpoints = {{0.0}};
  const auto ds = simulate(cfg).first;
  int ones = 0;
  for (const auto& e : ds.events) ones += e.scores[0] == 1;
  const double n = ds.event_count();
  const double sd = std::sqrt(0.25 / n);
  CHECK(std::abs(ones / n - 0.5) < 3 * sd);
}

TEST_CASE("null loadings and unit uniqueness give independent standard normal teacher effects") {
  const TruthConfig cfg = bare_config(3, 3, 3000);
  const auto truth = simulate(cfg).second;
  const Eigen::MatrixXd x = truth.teacher_effects;
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / (x.rows() - 1.0);
  // sd of a sample covariance entry is about 1/sqrt(n) = 0.018
  CHECK((cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.08);
}

TEST_CASE("simple-structure loadings: teacher covariance matches loadings*loadings' + U") {
  TruthConfig cfg = bare_config(4, 3, 5000);
  cfg.loadings.resize(4, 2);
  cfg.loadings << 0.9, 0, 0.8, 0, 0, 0.7, 0, 0.85;
  cfg.uniqueness = Eigen::VectorXd::Constant(4, 0.3);
  const auto truth = simulate(cfg).second;
  const Eigen::MatrixXd x = truth.teacher_effects;
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / (x.rows() - 1.0);
  Eigen::MatrixXd model = cfg.loadings * cfg.loadings.transpose();
  model.diagonal() += cfg.uniqueness;
  CHECK((cov - model).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("generator determinism: same seed and config give byte-identical files") {
  TempDir tmp;
  TruthConfig cfg = desk_scale_config(99);
  cfg.teachers = 20;
  export_dataset(simulate(cfg).first, tmp / "a.csv");
  export_dataset(simulate(cfg).first, tmp / "b.csv");
  CHECK(slurp(tmp / "a.csv") == slurp(tmp / "b.csv"));
  cfg.seed = 100;
  export_dataset(simulate(cfg).first, tmp / "c.csv");
  CHECK(slurp(tmp / "a.csv") != slurp(tmp / "c.csv"));
}

TEST_CASE("latent means average to zero") {
  const auto [ds, truth] = simulate(desk_scale_config(5));
  double sum = 0.0;
  long n = 0;
  for (const auto& ev : truth.latent) {
    for (const double t : ev) {
      sum += t;
      ++n;
    }
  }
  // total latent sd is about 1.5 but values share teacher effects; the bound is loose
  CHECK(std::abs(sum / n) < 0.25);
}

TEST_CASE("invalid truth configs are rejected") {
  TruthConfig cfg = desk_scale_config();
  SUBCASE("non-PSD covariance") {
    cfg.section_cov(0, 1) = cfg.section_cov(1, 0) = 5.0;
    CHECK_THROWS_AS(simulate(cfg), ConfigError);
  }
  SUBCASE("nonpositive uniqueness") {
    cfg.uniqueness[2] = 0.0;
    CHECK_THROWS_AS(validate_truth(cfg), ConfigError);
  }
  SUBCASE("cutpoints not increasing") {
    cfg.cutpoints[1] = {0.5, 0.4, 1.0};
    CHECK_THROWS_AS(validate_truth(cfg), ConfigError);
  }
  SUBCASE("wrong number of cutpoints") {
    cfg.cutpoints[1] = {0.5, 1.0};
    CHECK_THROWS_AS(validate_truth(cfg), ConfigError);
  }
}

TEST_CASE("permute_dimensions") {
  TruthConfig cfg = desk_scale_config(8);
  cfg.teachers = 10;
  const auto ds = simulate(cfg).first;
  std::vector<int> id(8), rev(8), perm{3, 0, 6, 1, 7, 2, 5, 4};
  for (int q = 0; q < 8; ++q) id[q] = q, rev[q] = 7 - q;

  CHECK(permute_dimensions(ds, id) == ds);
  CHECK(permute_dimensions(permute_dimensions(ds, perm), invert_permutation(perm)) == ds);

  const auto r = permute_dimensions(ds, rev);
  CHECK(r.dim_name(7) == ds.dim_name(0));
  CHECK(r.dim_name(0) == ds.dim_name(7));
  for (int i = 0; i < ds.event_count(); ++i) {
    for (int q = 0; q < 8; ++q) CHECK(r.score_at(r.events[i], 7 - q) == ds.score_at(ds.events[i], q));
  }
  CHECK_THROWS(permute_dimensions(ds, {0, 0, 1, 2, 3, 4, 5, 6}));
  CHECK_THROWS(permute_dimensions(ds, {0, 1, 2}));
}

TEST_CASE("truth config keys overlay the defaults and round-trip through the echo") {
  TempDir tmp;
  TruthConfig cfg = desk_scale_config(31);
  cfg.teachers = 15;
  cfg.uniqueness[3] = 0.45;
  const auto [ds, truth] = simulate(cfg);
  write_truth(cfg, truth, ds, tmp.path());
  const TruthConfig back = load_truth_config(read_key_values(tmp / "truth_config.txt"));
  CHECK(back.seed == 31);
  CHECK(back.teachers == 15);
  CHECK(back.loadings == cfg.loadings);
  CHECK(back.uniqueness == cfg.uniqueness);
  CHECK(back.rater_lesson_cov[1] == cfg.rater_lesson_cov[1]);
  CHECK(back.cutpoints == cfg.cutpoints);
  CHECK(simulate(back).first == ds);
}

TEST_CASE("truth config errors name the key") {
  auto message = [](const std::string& text) {
    try {
      load_truth_config(parse_key_values(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("teachers = 20\ncolour = blue\n").find("'colour'") != std::string::npos);
  CHECK(message("uniqueness = 1, 2\n").find("'uniqueness'") != std::string::npos);
  CHECK(message("teachers = many\n").find("'teachers'") != std::string::npos);
  CHECK(message("cutpoints.P9:zz = 1, 2, 3\n").find("cutpoints.P9:zz") != std::string::npos);
  CHECK(message("factors = 1\nloadings = 1, 1, 1, 1, 0, 0, 0, 0\n").empty());
}
