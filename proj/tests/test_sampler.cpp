#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "befa/error.hpp"
#include "befa/sampler.hpp"
#include "befa/synthetic.hpp"

using namespace befa;

namespace {

// Single-dimension dataset with the given number of events per level; every
// event belongs to one teacher, rated once in its own lesson.
RatingDataset level_dataset(const std::vector<int>& per_level) {
  auto ds = make_empty_dataset({{"P", {"a"}, static_cast<int>(per_level.size())}});
  int i = 0;
  for (std::size_t y = 0; y < per_level.size(); ++y) {
    for (int c = 0; c < per_level[y]; ++c, ++i) {
      const std::string id = std::to_string(i);
      add_event(ds, "e" + id, "t1", "s1", "l" + id, "g" + id, "r1", 0, {static_cast<int>(y) + 1});
    }
  }
  return ds;
}

FreezeMask freeze_all() {
  FreezeMask f;
  f.latent_scores = f.cutpoints = f.cutpoint_scale = true;
  f.nuisance_effects = f.nuisance_precisions = true;
  f.teacher_effects = f.factors = f.uniqueness = true;
  return f;
}

SamplerConfig small_config(int factors) {
  SamplerConfig cfg;
  cfg.factors = factors;
  cfg.n_chains = 1;
  cfg.n_adapt = 0;
  cfg.n_iter = 2;
  cfg.n_burn = 0;
  return cfg;
}

RatingDataset small_desk(int teachers, std::uint64_t seed = 3) {
  TruthConfig tc = desk_scale_config(seed);
  tc.teachers = teachers;
  return simulate(tc).first;
}

// Equal-mass bins from a discretised density; returns bin edges (interior).
std::vector<double> quantile_edges(const std::vector<double>& x, const std::vector<double>& mass,
                                   int bins) {
  std::vector<double> edges;
  double acc = 0.0;
  int next = 1;
  for (std::size_t i = 0; i < x.size() && next < bins; ++i) {
    acc += mass[i];
    if (acc >= static_cast<double>(next) / bins) {
      edges.push_back(x[i]);
      ++next;
    }
  }
  return edges;
}

int bin_of(double v, const std::vector<double>& edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
}

}  // namespace

TEST_CASE("layout indexes only non-missing scores") {
  auto ds = make_empty_dataset({{"A", {"x", "y"}, 3}, {"B", {"z"}, 4}});
  add_event(ds, "e1", "t1", "s1", "l1", "g1", "r1", 0, {1, kMissingScore});
  add_event(ds, "e2", "t1", "s1", "l1", "g1", "r2", 0, {3, 2});
  add_event(ds, "e3", "t2", "s2", "l2", "g2", "r1", 1, {4});
  const auto m = ModelLayout::build(ds);
  CHECK(m.observations() == 4);
  CHECK(m.events() == 3);
  CHECK(m.event_begin == std::vector<int>{0, 1, 3, 4});
  CHECK(m.teacher_counts(0, 0) == 2);
  CHECK(m.teacher_counts(0, 1) == 1);
  CHECK(m.teacher_counts(1, 2) == 1);
  CHECK(m.cells.size() == 3);
  CHECK(m.level_counts[0] == std::vector<long>{1, 0, 1});
  // dim 0 sorted by score: scores 1 then 3
  CHECK(m.dim_score_begin[0] == std::vector<int>{0, 0, 1, 1, 2});
  CHECK(m.sparse_level_dims(1) == std::vector<int>{0, 1, 2});
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg = small_config(1);
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("burn must be below iterations") {
    cfg.n_burn = cfg.n_iter;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("negative factors") {
    cfg.factors = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("seed list length") {
    cfg.n_chains = 2;
    cfg.seeds = {1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("acceptance target") {
    cfg.target_acceptance = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("event log-likelihood sums interval probabilities") {
  const auto ds = small_desk(4);
  const GibbsSampler s(ds, small_config(1));
  ChainState st = s.initialize(0, 9);
  for (int j = 0; j < st.effects.teacher.rows(); ++j) st.effects.teacher.row(j).setConstant(0.1 * j);
  s.refresh_mu(st);
  const auto& m = s.layout();
  for (int i : {0, 7, ds.event_count() - 1}) {
    double expect = 0.0;
    for (int o = m.event_begin[i]; o < m.event_begin[i + 1]; ++o) {
      const auto& g = st.cutpoints.dims[m.obs_dim[o]].gamma;
      const double mu = 0.1 * m.obs_teacher[o];
      expect += std::log(normal_cdf(upper_cut(g, m.obs_score[o]) - mu) -
                         normal_cdf(lower_cut(g, m.obs_score[o]) - mu));
    }
    CHECK(s.event_loglik(st, i) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("K=0 teacher effects match the conjugate Gaussian posterior") {
  const auto ds = small_desk(30);
  SamplerConfig cfg = small_config(0);
  cfg.freeze = freeze_all();
  cfg.freeze.teacher_effects = false;
  const GibbsSampler s(ds, cfg);
  ChainState st = s.initialize(0, 11);
  const int d = ds.dimension_count();
  for (int q = 0; q < d; ++q) st.factors.uniqueness[q] = 0.3 + 0.1 * q;

  // latent scores are fixed and all other effects are zero
  const auto& m = s.layout();
  RowMatrix sums = RowMatrix::Zero(m.teachers, d);
  for (int o = 0; o < m.observations(); ++o) sums(m.obs_teacher[o], m.obs_dim[o]) += st.latent[o];

  const int sweeps = 5000;
  RowMatrix mean = RowMatrix::Zero(m.teachers, d), sq = RowMatrix::Zero(m.teachers, d);
  for (int t = 0; t < sweeps; ++t) {
    s.sweep(st);
    mean += st.effects.teacher;
    sq += st.effects.teacher.cwiseProduct(st.effects.teacher);
  }
  mean /= sweeps;
  sq /= sweeps;
  double worst_mean = 0.0, worst_var = 0.0;
  for (int j = 0; j < m.teachers; ++j) {
    for (int q = 0; q < d; ++q) {
      const double prec = 1.0 / st.factors.uniqueness[q] + m.teacher_counts(j, q);
      worst_mean = std::max(worst_mean, std::abs(mean(j, q) - sums(j, q) / prec));
      const double var = sq(j, q) - mean(j, q) * mean(j, q);
      worst_var = std::max(worst_var, std::abs(var * prec - 1.0));
    }
  }
  CHECK(worst_mean < 0.02);
  CHECK(worst_var < 0.15);
}

TEST_CASE("uniqueness draws match the conjugate and truncated posteriors") {
  const auto ds = small_desk(30);
  SamplerConfig cfg = small_config(0);
  cfg.freeze = freeze_all();
  cfg.freeze.uniqueness = false;
  const int n = 30;
  Rng rng(4);
  RowMatrix delta(n, ds.dimension_count());
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = 2.0 * rng.normal();

  auto posterior_mean_u = [&](const GibbsSampler& s, int draws) {
    ChainState st = s.initialize(0, 5);
    st.effects.teacher = delta;
    s.refresh_mu(st);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(delta.cols());
    for (int t = 0; t < draws; ++t) {
      s.sweep(st);
      acc += st.factors.uniqueness;
    }
    return Eigen::VectorXd(acc / draws);
  };

  SUBCASE("gamma precision prior") {
    const GibbsSampler s(ds, cfg);
    const Eigen::VectorXd got = posterior_mean_u(s, 40000);
    for (Eigen::Index q = 0; q < delta.cols(); ++q) {
      // E[1/w] for w ~ Gamma(a, b) is b / (a - 1)
      const double a = 1.5 + 0.5 * n, b = 1.5 + 0.5 * delta.col(q).squaredNorm();
      CHECK(got[q] == doctest::Approx(b / (a - 1.0)).epsilon(0.01));
    }
  }
  SUBCASE("uniform sd prior with a binding bound") {
    cfg.priors.uniqueness = UniquenessPrior::kUniformSd;
    cfg.priors.uniform_sd_bound = 2.2;
    const GibbsSampler s(ds, cfg);
    const Eigen::VectorXd got = posterior_mean_u(s, 40000);
    const double lower = 1.0 / (2.2 * 2.2);
    for (Eigen::Index q = 0; q < delta.cols(); ++q) {
      // quadrature of w^(a-1) exp(-b w) on (lower, inf), a = (n-1)/2, b = ss/2
      const double a = 0.5 * (n - 1), b = 0.5 * delta.col(q).squaredNorm();
      double z = 0.0, m1 = 0.0;
      const double h = 1e-5;
      for (double w = lower + 0.5 * h; w < lower + 60.0 / b; w += h) {
        const double f = std::exp((a - 1.0) * std::log(w) - b * w);
        z += f;
        m1 += f / w;
      }
      CHECK(got[q] == doctest::Approx(m1 / z).epsilon(0.01));
      CHECK(got[q] < 2.2 * 2.2);
    }
  }
}

TEST_CASE("collapsed cutpoint update targets the grid posterior of the increments") {
  // one dimension, three levels, latent mean fixed at zero, tau fixed at one
  const std::vector<int> counts{12, 8, 4};
  const auto ds = level_dataset(counts);
  SamplerConfig cfg = small_config(0);
  cfg.freeze = freeze_all();
  cfg.freeze.latent_scores = false;
  cfg.freeze.cutpoints = false;
  const GibbsSampler s(ds, cfg);

  const double lo = -7.0, hi = 4.0, h = 0.01;
  const int g = static_cast<int>((hi - lo) / h);
  std::vector<double> axis(g);
  for (int i = 0; i < g; ++i) axis[i] = lo + (i + 0.5) * h;
  std::vector<double> logp(static_cast<std::size_t>(g) * g);
  double top = -kInf;
  for (int i = 0; i < g; ++i) {
    for (int k = 0; k < g; ++k) {
      const double g1 = std::exp(axis[i]);
      const double g2 = g1 + std::exp(axis[k]);
      const double v = counts[0] * log_normal_interval(-kInf, g1) +
                       counts[1] * log_normal_interval(g1, g2) +
                       counts[2] * log_normal_interval(g2, kInf) -
                       0.5 * (axis[i] * axis[i] + axis[k] * axis[k]);
      logp[static_cast<std::size_t>(i) * g + k] = v;
      top = std::max(top, v);
    }
  }
  std::vector<double> m1(g, 0.0), m2(g, 0.0);
  double z = 0.0;
  for (int i = 0; i < g; ++i) {
    for (int k = 0; k < g; ++k) {
      const double p = std::exp(logp[static_cast<std::size_t>(i) * g + k] - top);
      m1[i] += p;
      m2[k] += p;
      z += p;
    }
  }
  for (int i = 0; i < g; ++i) m1[i] /= z, m2[i] /= z;

  const int bins = 20;
  const auto e1 = quantile_edges(axis, m1, bins), e2 = quantile_edges(axis, m2, bins);
  std::vector<double> p1(bins, 0.0), p2(bins, 0.0);
  for (int i = 0; i < g; ++i) {
    p1[bin_of(axis[i], e1)] += m1[i];
    p2[bin_of(axis[i], e2)] += m2[i];
  }

  ChainState st = s.initialize(0, 21);
  for (long t = 0; t < 2000; ++t) s.sweep(st, t);
  const int draws = 200000;
  std::vector<double> c1(bins, 0.0), c2(bins, 0.0);
  for (int t = 0; t < draws; ++t) {
    s.sweep(st);
    c1[bin_of(st.cutpoints.dims[0].rho[0], e1)] += 1.0 / draws;
    c2[bin_of(st.cutpoints.dims[0].rho[1], e2)] += 1.0 / draws;
  }
  double tv1 = 0.0, tv2 = 0.0;
  for (int b = 0; b < bins; ++b) {
    tv1 += 0.5 * std::abs(c1[b] - p1[b]);
    tv2 += 0.5 * std::abs(c2[b] - p2[b]);
  }
  CHECK(tv1 < 0.05);
  CHECK(tv2 < 0.05);
}

TEST_CASE("cutpoint scale update targets tau^-n exp(-ss / 2 tau^2) on (0, 100)") {
  const auto ds = level_dataset({1, 1, 1, 1, 1, 1});
  SamplerConfig cfg = small_config(0);
  cfg.freeze = freeze_all();
  cfg.freeze.cutpoint_scale = false;
  const GibbsSampler s(ds, cfg);
  ChainState st = s.initialize(0, 8);
  st.cutpoints.dims[0].rho = {0.3, -0.5, 0.8, 0.1, -1.2};
  st.cutpoints.dims[0].refresh();
  const double ss = 2.43, n = 5.0;

  double z = 0.0, m1 = 0.0;
  const double h = 1e-4;
  for (double tau = 0.5 * h; tau < kTauUpper; tau += h) {
    const double f = std::exp(-n * std::log(tau) - ss / (2 * tau * tau));
    z += f;
    m1 += f * tau;
  }
  const double expect = m1 / z;

  for (long t = 0; t < 2000; ++t) s.sweep(st, t);
  const int draws = 200000;
  double acc = 0.0;
  for (int t = 0; t < draws; ++t) {
    s.sweep(st);
    acc += st.cutpoints.dims[0].tau;
  }
  CHECK(acc / draws == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("draw archive layout and thinning") {
  const auto ds = small_desk(10);
  SamplerConfig cfg;
  cfg.factors = 2;
  cfg.n_chains = 2;
  cfg.n_adapt = 5;
  cfg.n_iter = 30;
  cfg.n_burn = 10;
  cfg.thin = 4;
  cfg.keep_event_loglik = true;
  RunReport rep;
  const DrawArchive a = run(ds, cfg, &rep);
  CHECK(a.draw_count() == 10);
  CHECK(a.n_chains == 2);
  CHECK(a.iter[0] == 14);
  CHECK(a.iter[4] == 30);
  CHECK(a.chain[5] == 1);
  CHECK(a.loadings.cols() == 16);
  CHECK(a.scores.cols() == 20);
  CHECK(a.communality.cols() == 64);
  CHECK(a.event_loglik.cols() == ds.event_count());
  CHECK(a.cutpoint_names.size() == 8 * 4);
  CHECK(rep.chains.size() == 2);
  CHECK((a.uniqueness.array() > 0.0).all());
  CHECK(a.event_loglik.maxCoeff() < 0.0);
}

TEST_CASE("fixed seeds reproduce the archive regardless of thread count") {
  const auto ds = small_desk(12);
  SamplerConfig cfg;
  cfg.factors = 2;
  cfg.n_chains = 3;
  cfg.n_adapt = 10;
  cfg.n_iter = 20;
  cfg.n_burn = 5;
  cfg.seed = 77;
  const DrawArchive a = run(ds, cfg);
  const DrawArchive b = run(ds, cfg);
  cfg.threads = 3;
  const DrawArchive c = run(ds, cfg);
  CHECK(a.loadings == b.loadings);
  CHECK(a.cutpoints == b.cutpoints);
  CHECK(a.loadings == c.loadings);
  CHECK(a.scores == c.scores);
  CHECK(a.cpo_log_mean_inv == c.cpo_log_mean_inv);
  cfg.seed = 78;
  CHECK(run(ds, cfg).loadings != a.loadings);
}

TEST_CASE("a failing chain aborts with its index and iteration") {
  // zero teacher effects make the uniform-sd uniqueness conditional improper
  const auto ds = small_desk(4);
  SamplerConfig cfg = small_config(0);
  cfg.n_chains = 2;
  cfg.freeze = freeze_all();
  cfg.freeze.uniqueness = false;
  cfg.priors.uniqueness = UniquenessPrior::kUniformSd;
  try {
    run(ds, cfg);
    FAIL("expected a chain error");
  } catch (const ChainError& e) {
    CHECK(e.chain() == 0);
    CHECK(e.iteration() == 0);
    CHECK(std::string(e.what()).find("uniqueness") != std::string::npos);
  }
}
