#include "befa/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "befa/error.hpp"

namespace befa {

namespace {

using Clock = std::chrono::steady_clock;

ModelLayout::CountPatterns make_patterns(const std::vector<Eigen::VectorXd>& counts,
                                         const std::vector<int>& protocol) {
  ModelLayout::CountPatterns out;
  std::map<std::vector<double>, int> seen;
  out.pattern_of.reserve(counts.size());
  for (std::size_t g = 0; g < counts.size(); ++g) {
    std::vector<double> key(counts[g].data(), counts[g].data() + counts[g].size());
    key.push_back(protocol.empty() ? 0.0 : protocol[g]);
    const auto [it, fresh] = seen.emplace(key, static_cast<int>(out.patterns.size()));
    if (fresh) {
      out.patterns.push_back(counts[g]);
      out.pattern_protocol.push_back(protocol.empty() ? 0 : protocol[g]);
    }
    out.pattern_of.push_back(it->second);
  }
  return out;
}

ModelLayout::CountPatterns make_patterns(const RowMatrix& counts) {
  std::vector<Eigen::VectorXd> rows(counts.rows());
  for (Eigen::Index g = 0; g < counts.rows(); ++g) rows[g] = counts.row(g).transpose();
  return make_patterns(rows, {});
}

// Gaussian draw with precision `llt` and mean llt^-1 * h.
Eigen::VectorXd draw_gaussian(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& h,
                              Rng& rng) {
  Eigen::VectorXd z = rng.normal_vector(h.size());
  return llt.solve(h) + llt.matrixU().solve(z);
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

void adapt(AdaptiveStep& st, bool accepted, long adapt_index, double target) {
  ++st.proposals;
  if (accepted) ++st.accepts;
  if (adapt_index >= 0) {
    const double gain = std::pow(static_cast<double>(adapt_index) + 1.0, -0.6);
    st.log_step += gain * ((accepted ? 1.0 : 0.0) - target);
  }
}

}  // namespace

void SamplerConfig::validate() const {
  if (factors < 0) throw ConfigError("factors must be >= 0");
  if (n_adapt < 0) throw ConfigError("n_adapt must be >= 0");
  if (n_burn < 0 || n_burn >= n_iter) throw ConfigError("need 0 <= n_burn < n_iter");
  if (thin < 1) throw ConfigError("thin must be >= 1");
  if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
  if (!seeds.empty() && static_cast<int>(seeds.size()) != n_chains) {
    throw ConfigError("seeds: expected one seed per chain");
  }
  if (!(rho_step > 0.0) || !(tau_step > 0.0)) throw ConfigError("step sizes must be positive");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
    throw ConfigError("target_acceptance must lie in (0, 1)");
  }
  if (!(priors.shape > 0.0) || !(priors.rate > 0.0)) throw ConfigError("prior shape and rate must be positive");
  if (!(priors.uniform_sd_bound > 0.0)) throw ConfigError("uniform_sd_bound must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::uint64_t SamplerConfig::chain_seed(int chain) const {
  return seeds.empty() ? derive_seed(seed, static_cast<std::uint64_t>(chain))
                       : seeds.at(static_cast<std::size_t>(chain));
}

ModelLayout ModelLayout::build(const RatingDataset& ds) {
  ModelLayout m;
  m.dims = ds.dimension_count();
  m.teachers = ds.teachers.size();
  m.sections = ds.sections.size();
  m.lessons = ds.lessons.size();
  m.raters = ds.raters.size();
  for (int q = 0; q < m.dims; ++q) {
    m.levels.push_back(ds.levels_at(q));
    m.protocol_of_dim.push_back(ds.dim_at(q).protocol);
  }

  // Same first-seen order as EffectBlocks::zeros.
  std::map<RaterLessonCell, int> cell_index;
  for (const auto& e : ds.events) {
    const RaterLessonCell key{e.lesson, e.rater, e.protocol};
    if (cell_index.emplace(key, static_cast<int>(m.cells.size())).second) {
      m.cells.push_back(key);
      m.cell_protocol.push_back(e.protocol);
      m.cell_counts.push_back(Eigen::VectorXd::Zero(ds.protocols[e.protocol].dim_count()));
    }
  }

  m.teacher_counts = RowMatrix::Zero(m.teachers, m.dims);
  m.section_counts = RowMatrix::Zero(m.sections, m.dims);
  m.lesson_counts = RowMatrix::Zero(m.lessons, m.dims);
  m.rater_counts = RowMatrix::Zero(m.raters, m.dims);
  m.level_counts.resize(m.dims);
  for (int q = 0; q < m.dims; ++q) m.level_counts[q].assign(m.levels[q], 0);

  m.event_begin.push_back(0);
  for (int i = 0; i < ds.event_count(); ++i) {
    const auto& e = ds.events[i];
    const int cell = cell_index.at({e.lesson, e.rater, e.protocol});
    const auto& positions = ds.position_of[e.protocol];
    for (std::size_t l = 0; l < e.scores.size(); ++l) {
      const int y = e.scores[l];
      if (y == kMissingScore) continue;
      const int q = positions[l];
      m.obs_event.push_back(i);
      m.obs_dim.push_back(q);
      m.obs_local.push_back(static_cast<int>(l));
      m.obs_score.push_back(y);
      m.obs_teacher.push_back(e.teacher);
      m.obs_section.push_back(e.section);
      m.obs_lesson.push_back(e.lesson);
      m.obs_rater.push_back(e.rater);
      m.obs_cell.push_back(cell);
      m.teacher_counts(e.teacher, q) += 1;
      m.section_counts(e.section, q) += 1;
      m.lesson_counts(e.lesson, q) += 1;
      m.rater_counts(e.rater, q) += 1;
      m.cell_counts[cell][static_cast<Eigen::Index>(l)] += 1;
      ++m.level_counts[q][y - 1];
    }
    m.event_begin.push_back(m.observations());
  }

  m.dim_obs.resize(m.dims);
  m.dim_score_begin.resize(m.dims);
  for (int o = 0; o < m.observations(); ++o) m.dim_obs[m.obs_dim[o]].push_back(o);
  for (int q = 0; q < m.dims; ++q) {
    auto& list = m.dim_obs[q];
    std::stable_sort(list.begin(), list.end(),
                     [&](int a, int b) { return m.obs_score[a] < m.obs_score[b]; });
    auto& begin = m.dim_score_begin[q];
    begin.assign(m.levels[q] + 2, 0);
    for (int y = 1; y <= m.levels[q] + 1; ++y) {
      begin[y] = static_cast<int>(
          std::lower_bound(list.begin(), list.end(), y,
                           [&](int o, int v) { return m.obs_score[o] < v; }) -
          list.begin());
    }
  }

  m.section_patterns = make_patterns(m.section_counts);
  m.lesson_patterns = make_patterns(m.lesson_counts);
  m.rater_patterns = make_patterns(m.rater_counts);
  m.cell_patterns = make_patterns(m.cell_counts, m.cell_protocol);
  return m;
}

std::vector<int> ModelLayout::sparse_level_dims(long min_count) const {
  std::vector<int> out;
  for (int q = 0; q < dims; ++q) {
    if (std::any_of(level_counts[q].begin(), level_counts[q].end(),
                    [&](long c) { return c < min_count; })) {
      out.push_back(q);
    }
  }
  return out;
}

GibbsSampler::GibbsSampler(const RatingDataset& ds, SamplerConfig cfg)
    : ds_(&ds), cfg_(std::move(cfg)), layout_(ModelLayout::build(ds)) {
  cfg_.validate();
  if (cfg_.priors.uniqueness == UniquenessPrior::kUniformSd && layout_.teachers < 2 &&
      !cfg_.freeze.uniqueness) {
    throw ConfigError("uniform uniqueness prior needs at least 2 teachers");
  }
}

ChainState GibbsSampler::initialize(int chain, std::uint64_t seed) const {
  const int d = layout_.dims;
  const int k = cfg_.factors;
  ChainState s;
  s.chain = chain;
  s.rng = Rng(seed);
  s.effects = EffectBlocks::zeros(*ds_);
  s.factors.working_loadings = Eigen::MatrixXd(d, k);
  for (Eigen::Index i = 0; i < s.factors.working_loadings.size(); ++i) {
    s.factors.working_loadings.data()[i] = 0.1 * s.rng.normal();
  }
  s.factors.expansion_precision = Eigen::VectorXd::Ones(k);
  s.factors.working_scores = Eigen::MatrixXd::Zero(layout_.teachers, k);
  s.factors.uniqueness = Eigen::VectorXd::Ones(d);
  s.cutpoints.dims.resize(d);
  s.rho_steps.resize(d);
  s.tau_steps.assign(d, AdaptiveStep{std::log(cfg_.tau_step), 0, 0});
  for (int q = 0; q < d; ++q) {
    auto& cp = s.cutpoints.dims[q];
    cp.rho = increments_from_frequencies(layout_.level_counts[q]);
    cp.tau = 1.0;
    cp.refresh();
    s.rho_steps[q].assign(cp.rho.size(), AdaptiveStep{std::log(cfg_.rho_step), 0, 0});
  }
  s.mu.assign(layout_.observations(), 0.0);
  s.latent.assign(layout_.observations(), 0.0);
  draw_latent(s);
  return s;
}

void GibbsSampler::refresh_mu(ChainState& s) const {
  const auto& m = layout_;
  const auto& b = s.effects;
  s.mu.resize(m.observations());
  for (int o = 0; o < m.observations(); ++o) {
    const int q = m.obs_dim[o];
    s.mu[o] = b.teacher(m.obs_teacher[o], q) + b.section(m.obs_section[o], q) +
              b.lesson(m.obs_lesson[o], q) + b.rater(m.obs_rater[o], q) +
              b.rater_lesson[m.obs_cell[o]][m.obs_local[o]];
  }
}

void GibbsSampler::draw_latent(ChainState& s) const {
  const auto& m = layout_;
  for (int o = 0; o < m.observations(); ++o) {
    const auto& g = s.cutpoints.dims[m.obs_dim[o]].gamma;
    const int y = m.obs_score[o];
    s.latent[o] = sample_truncated_normal(s.mu[o], lower_cut(g, y), upper_cut(g, y), s.rng);
  }
}

void GibbsSampler::fail(const ChainState& s, const std::string& what) const {
  std::ostringstream diag;
  diag << what << "; uniqueness=[" << s.factors.uniqueness.transpose() << "]"
       << "; expansion_precision=[" << s.factors.expansion_precision.transpose() << "]";
  for (std::size_t q = 0; q < s.cutpoints.dims.size(); ++q) {
    diag << "; tau[" << ds_->dim_name(static_cast<int>(q)) << "]=" << s.cutpoints.dims[q].tau;
  }
  throw ChainError(s.chain, s.iteration, diag.str());
}

void GibbsSampler::sweep(ChainState& s, long adapt_index) const {
  const auto& f = cfg_.freeze;
  try {
    if (!f.latent_scores) draw_latent(s);
    if (!f.nuisance_effects) update_nuisance(s);
    if (!f.nuisance_precisions) update_precisions(s);
    if (!f.teacher_effects) update_teacher(s);
    if (!f.factors && cfg_.factors > 0) update_factors(s);
    if (!f.uniqueness) update_uniqueness(s);
    if (!f.cutpoints) update_cutpoints(s, adapt_index);
    if (!f.cutpoint_scale) update_cutpoint_scale(s, adapt_index);
  } catch (const ChainError&) {
    throw;
  } catch (const Error& e) {
    fail(s, e.what());
  }
  ++s.iteration;
}

void GibbsSampler::update_combined_block(ChainState& s, RowMatrix& block,
                                         const Eigen::MatrixXd& precision,
                                         const std::vector<int>& obs_group,
                                         const ModelLayout::CountPatterns& patterns,
                                         const char* name) const {
  const auto& m = layout_;
  RowMatrix sums = RowMatrix::Zero(block.rows(), block.cols());
  for (int o = 0; o < m.observations(); ++o) {
    const int g = obs_group[o];
    const int q = m.obs_dim[o];
    sums(g, q) += s.latent[o] - s.mu[o] + block(g, q);
  }
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
  chol.reserve(patterns.patterns.size());
  for (const auto& counts : patterns.patterns) {
    Eigen::MatrixXd p = precision;
    p.diagonal() += counts;
    chol.emplace_back(p);
    if (chol.back().info() != Eigen::Success) {
      fail(s, std::string(name) + " conditional precision is not positive definite");
    }
  }
  const RowMatrix old = block;
  for (Eigen::Index g = 0; g < block.rows(); ++g) {
    const Eigen::VectorXd h = sums.row(g).transpose();
    block.row(g) = draw_gaussian(chol[patterns.pattern_of[g]], h, s.rng).transpose();
  }
  for (int o = 0; o < m.observations(); ++o) {
    const int g = obs_group[o];
    const int q = m.obs_dim[o];
    s.mu[o] += block(g, q) - old(g, q);
  }
}

void GibbsSampler::update_cells(ChainState& s) const {
  const auto& m = layout_;
  auto& cells = s.effects.rater_lesson;
  std::vector<Eigen::VectorXd> sums(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) sums[c] = Eigen::VectorXd::Zero(cells[c].size());
  for (int o = 0; o < m.observations(); ++o) {
    const int c = m.obs_cell[o];
    const int l = m.obs_local[o];
    sums[c][l] += s.latent[o] - s.mu[o] + cells[c][l];
  }
  const auto& pat = m.cell_patterns;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
  chol.reserve(pat.patterns.size());
  for (std::size_t p = 0; p < pat.patterns.size(); ++p) {
    Eigen::MatrixXd prec = s.effects.rater_lesson_precision[pat.pattern_protocol[p]];
    prec.diagonal() += pat.patterns[p];
    chol.emplace_back(prec);
    if (chol.back().info() != Eigen::Success) {
      fail(s, "rater-by-lesson conditional precision is not positive definite");
    }
  }
  const std::vector<Eigen::VectorXd> old = cells;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c] = draw_gaussian(chol[pat.pattern_of[c]], sums[c], s.rng);
  }
  for (int o = 0; o < m.observations(); ++o) {
    const int c = m.obs_cell[o];
    const int l = m.obs_local[o];
    s.mu[o] += cells[c][l] - old[c][l];
  }
}

void GibbsSampler::update_nuisance(ChainState& s) const {
  const auto& m = layout_;
  auto& b = s.effects;
  update_combined_block(s, b.section, b.section_precision, m.obs_section, m.section_patterns,
                        "section");
  update_combined_block(s, b.lesson, b.lesson_precision, m.obs_lesson, m.lesson_patterns, "lesson");
  update_combined_block(s, b.rater, b.rater_precision, m.obs_rater, m.rater_patterns, "rater");
  update_cells(s);
}

void GibbsSampler::update_precisions(ChainState& s) const {
  auto& b = s.effects;
  // W(I, dim+1) prior; posterior W((I + sum x x')^-1, dim + 1 + n).
  auto draw = [&](const Eigen::MatrixXd& scatter, Eigen::Index n) {
    const Eigen::Index dim = scatter.rows();
    const Eigen::MatrixXd s_post = Eigen::MatrixXd::Identity(dim, dim) + scatter;
    return s.rng.wishart(inverse_spd(s_post), nuisance_prior_df(dim) + static_cast<double>(n));
  };
  b.section_precision = draw(b.section.transpose() * b.section, b.section.rows());
  b.lesson_precision = draw(b.lesson.transpose() * b.lesson, b.lesson.rows());
  b.rater_precision = draw(b.rater.transpose() * b.rater, b.rater.rows());
  for (std::size_t p = 0; p < b.rater_lesson_precision.size(); ++p) {
    const Eigen::Index dim = b.rater_lesson_precision[p].rows();
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::Index n = 0;
    for (std::size_t c = 0; c < b.cells.size(); ++c) {
      if (b.cells[c].protocol != static_cast<int>(p)) continue;
      scatter.noalias() += b.rater_lesson[c] * b.rater_lesson[c].transpose();
      ++n;
    }
    b.rater_lesson_precision[p] = draw(scatter, n);
  }
}

void GibbsSampler::update_teacher(ChainState& s) const {
  const auto& m = layout_;
  auto& delta = s.effects.teacher;
  const auto& fs = s.factors;
  RowMatrix sums = RowMatrix::Zero(delta.rows(), delta.cols());
  for (int o = 0; o < m.observations(); ++o) {
    const int j = m.obs_teacher[o];
    const int q = m.obs_dim[o];
    sums(j, q) += s.latent[o] - s.mu[o] + delta(j, q);
  }
  RowMatrix prior_mean = RowMatrix::Zero(delta.rows(), delta.cols());
  if (cfg_.factors > 0) prior_mean = fs.working_scores * fs.working_loadings.transpose();
  const RowMatrix old = delta;
  for (Eigen::Index j = 0; j < delta.rows(); ++j) {
    for (Eigen::Index q = 0; q < delta.cols(); ++q) {
      const double uinv = 1.0 / fs.uniqueness[q];
      const double prec = uinv + m.teacher_counts(j, q);
      const double mean = (prior_mean(j, q) * uinv + sums(j, q)) / prec;
      delta(j, q) = mean + s.rng.normal() / std::sqrt(prec);
    }
  }
  for (int o = 0; o < m.observations(); ++o) {
    const int j = m.obs_teacher[o];
    const int q = m.obs_dim[o];
    s.mu[o] += delta(j, q) - old(j, q);
  }
}

void GibbsSampler::update_factors(ChainState& s) const {
  auto& fs = s.factors;
  const Eigen::MatrixXd delta = s.effects.teacher;
  const Eigen::Index n = delta.rows();
  const Eigen::Index k = fs.factors();
  const Eigen::VectorXd uinv = fs.uniqueness.cwiseInverse();

  // working scores, all teachers share one conditional precision
  Eigen::MatrixXd a = fs.working_loadings.transpose() * uinv.asDiagonal() * fs.working_loadings;
  a.diagonal() += fs.expansion_precision;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) fail(s, "factor score precision is not positive definite");
  const Eigen::MatrixXd h = fs.working_loadings.transpose() * uinv.asDiagonal() * delta.transpose();
  Eigen::MatrixXd z(k, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index c = 0; c < k; ++c) z(c, j) = s.rng.normal();
  }
  fs.working_scores = (llt.solve(h) + llt.matrixU().solve(z)).transpose();

  // working loadings, row by row
  const Eigen::MatrixXd g = fs.working_scores.transpose() * fs.working_scores;
  const Eigen::MatrixXd cross = fs.working_scores.transpose() * delta;
  for (Eigen::Index q = 0; q < delta.cols(); ++q) {
    Eigen::MatrixXd p = g * uinv[q];
    p.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> lq(p);
    if (lq.info() != Eigen::Success) fail(s, "loading precision is not positive definite");
    fs.working_loadings.row(q) = draw_gaussian(lq, cross.col(q) * uinv[q], s.rng).transpose();
  }

  const auto& pr = cfg_.priors;
  for (Eigen::Index c = 0; c < k; ++c) {
    const double ss = fs.working_scores.col(c).squaredNorm();
    fs.expansion_precision[c] =
        s.rng.gamma(pr.shape + 0.5 * static_cast<double>(n), pr.rate + 0.5 * ss);
  }
}

void GibbsSampler::update_uniqueness(ChainState& s) const {
  auto& fs = s.factors;
  const auto& pr = cfg_.priors;
  Eigen::MatrixXd resid = s.effects.teacher;
  if (fs.factors() > 0) resid -= fs.working_scores * fs.working_loadings.transpose();
  const double n = static_cast<double>(resid.rows());
  for (Eigen::Index q = 0; q < resid.cols(); ++q) {
    const double ss = resid.col(q).squaredNorm();
    double w;
    if (pr.uniqueness == UniquenessPrior::kGammaPrecision) {
      w = s.rng.gamma(pr.shape + 0.5 * n, pr.rate + 0.5 * ss);
    } else {
      // sqrt(u) ~ U(0, A): precision is Gamma((n-1)/2, ss/2) truncated to w > 1/A^2
      if (!(ss > 0.0)) fail(s, "uniform uniqueness prior: zero residual sum of squares");
      const double lower = 1.0 / (pr.uniform_sd_bound * pr.uniform_sd_bound);
      int tries = 0;
      do {
        w = s.rng.gamma(0.5 * (n - 1.0), 0.5 * ss);
        if (++tries > 10000) fail(s, "uniqueness rejection sampler stalled");
      } while (w <= lower);
    }
    if (!(w > 0.0) || !std::isfinite(w)) fail(s, "non-finite uniqueness precision");
    fs.uniqueness[q] = 1.0 / w;
  }
}

void GibbsSampler::update_cutpoints(ChainState& s, long adapt_index) const {
  const auto& m = layout_;
  std::vector<double> ll, ll_prop;
  for (int q = 0; q < m.dims; ++q) {
    auto& cp = s.cutpoints.dims[q];
    const int ncut = static_cast<int>(cp.rho.size());
    if (ncut == 0) continue;
    const auto& list = m.dim_obs[q];
    const auto& begin = m.dim_score_begin[q];
    const double tau2 = cp.tau * cp.tau;

    if (!cfg_.freeze.latent_scores) {
      // Metropolis on rho with the latent scores integrated out, followed by
      // a fresh draw of this dimension's latent scores.
      ll.resize(list.size());
      for (std::size_t i = 0; i < list.size(); ++i) {
        const int o = list[i];
        const int y = m.obs_score[o];
        ll[i] = log_normal_interval(lower_cut(cp.gamma, y) - s.mu[o], upper_cut(cp.gamma, y) - s.mu[o]);
      }
      bool moved = false;
      for (int l = 0; l < ncut; ++l) {
        auto& st = s.rho_steps[q][l];
        std::vector<double> rho = cp.rho;
        rho[l] += std::exp(st.log_step) * s.rng.normal();
        const std::vector<double> gamma = cutpoints_from_increments(rho);
        // only scores >= l+1 touch cutpoints l and above
        const std::size_t first = static_cast<std::size_t>(begin[l + 1]);
        ll_prop.resize(list.size());
        double delta = 0.0;
        for (std::size_t i = first; i < list.size(); ++i) {
          const int o = list[i];
          const int y = m.obs_score[o];
          ll_prop[i] = log_normal_interval(lower_cut(gamma, y) - s.mu[o], upper_cut(gamma, y) - s.mu[o]);
          delta += ll_prop[i] - ll[i];
        }
        delta -= (rho[l] * rho[l] - cp.rho[l] * cp.rho[l]) / (2.0 * tau2);
        const bool accept = std::log(s.rng.uniform_open()) < delta;
        if (accept) {
          cp.rho = std::move(rho);
          cp.gamma = gamma;
          std::copy(ll_prop.begin() + static_cast<std::ptrdiff_t>(first), ll_prop.end(),
                    ll.begin() + static_cast<std::ptrdiff_t>(first));
          moved = true;
        }
        adapt(st, accept, adapt_index, cfg_.target_acceptance);
      }
      if (moved) {
        for (const int o : list) {
          const int y = m.obs_score[o];
          s.latent[o] = sample_truncated_normal(s.mu[o], lower_cut(cp.gamma, y),
                                                upper_cut(cp.gamma, y), s.rng);
        }
      }
    } else {
      // latent scores held fixed: the likelihood is the bracketing indicator
      for (int l = 0; l < ncut; ++l) {
        auto& st = s.rho_steps[q][l];
        std::vector<double> rho = cp.rho;
        rho[l] += std::exp(st.log_step) * s.rng.normal();
        const std::vector<double> gamma = cutpoints_from_increments(rho);
        bool inside = true;
        for (std::size_t i = static_cast<std::size_t>(begin[l + 1]); i < list.size() && inside; ++i) {
          const int o = list[i];
          const int y = m.obs_score[o];
          inside = s.latent[o] > lower_cut(gamma, y) && s.latent[o] <= upper_cut(gamma, y);
        }
        bool accept = false;
        if (inside) {
          const double lr = -(rho[l] * rho[l] - cp.rho[l] * cp.rho[l]) / (2.0 * tau2);
          accept = std::log(s.rng.uniform_open()) < lr;
        }
        if (accept) {
          cp.rho = std::move(rho);
          cp.gamma = gamma;
        }
        adapt(st, accept, adapt_index, cfg_.target_acceptance);
      }
    }
  }
}

void GibbsSampler::update_cutpoint_scale(ChainState& s, long adapt_index) const {
  for (std::size_t q = 0; q < s.cutpoints.dims.size(); ++q) {
    auto& cp = s.cutpoints.dims[q];
    if (cp.rho.empty()) continue;
    double ss = 0.0;
    for (const double r : cp.rho) ss += r * r;
    const double n = static_cast<double>(cp.rho.size());
    // target on log(tau), Jacobian included
    auto log_target = [&](double tau) { return -(n - 1.0) * std::log(tau) - ss / (2.0 * tau * tau); };
    auto& st = s.tau_steps[q];
    const double prop = cp.tau * std::exp(std::exp(st.log_step) * s.rng.normal());
    bool accept = false;
    if (prop < kTauUpper) {
      accept = std::log(s.rng.uniform_open()) < log_target(prop) - log_target(cp.tau);
    }
    if (accept) cp.tau = prop;
    adapt(st, accept, adapt_index, cfg_.target_acceptance);
  }
}

double GibbsSampler::event_loglik(const ChainState& s, int event) const {
  const auto& m = layout_;
  double ll = 0.0;
  for (int o = m.event_begin[event]; o < m.event_begin[event + 1]; ++o) {
    const auto& g = s.cutpoints.dims[m.obs_dim[o]].gamma;
    const int y = m.obs_score[o];
    ll += log_normal_interval(lower_cut(g, y) - s.mu[o], upper_cut(g, y) - s.mu[o]);
  }
  return ll;
}

DrawArchive make_archive_header(const RatingDataset& ds, const SamplerConfig& cfg) {
  DrawArchive a;
  a.factors = cfg.factors;
  for (int q = 0; q < ds.dimension_count(); ++q) a.dim_names.push_back(ds.dim_name(q));
  a.dim_canonical = ds.canonical_at;
  a.teacher_ids = ds.teachers.names();
  a.event_ids = ds.event_ids.names();
  a.n_adapt = cfg.n_adapt;
  a.n_iter = cfg.n_iter;
  a.n_burn = cfg.n_burn;
  a.thin = cfg.thin;
  a.uniqueness_prior =
      cfg.priors.uniqueness == UniquenessPrior::kGammaPrecision ? "gamma" : "uniform_sd";
  for (const char* block : {"section", "lesson", "rater"}) {
    for (const auto& name : a.dim_names) a.variance_component_names.push_back(std::string(block) + ":" + name);
  }
  for (const auto& p : ds.protocols) {
    for (const auto& dim : p.dims) {
      a.variance_component_names.push_back("rater_lesson:" + p.name + ":" + dim);
    }
  }
  for (int q = 0; q < ds.dimension_count(); ++q) {
    for (int l = 1; l < ds.levels_at(q); ++l) {
      a.cutpoint_names.push_back(a.dim_names[q] + ":" + std::to_string(l));
    }
    a.cutpoint_names.push_back(a.dim_names[q] + ":tau");
  }
  return a;
}

DrawArchive run_chain(const GibbsSampler& sampler, ChainState state, std::uint64_t seed,
                      ChainReport* report) {
  const auto start = Clock::now();
  const auto& cfg = sampler.config();
  const auto& ds = sampler.dataset();
  const int d = ds.dimension_count();
  const int k = cfg.factors;
  const int n_teach = ds.teachers.size();
  const int n_events = ds.event_count();
  const int retained = cfg.retained_per_chain();

  DrawArchive a = make_archive_header(ds, cfg);
  a.n_chains = 1;
  a.seeds = {seed};
  a.chain.reserve(retained);
  a.iter.reserve(retained);
  a.loadings.resize(retained, d * k);
  a.uniqueness.resize(retained, d);
  a.communality.resize(retained, d * d);
  if (cfg.keep_scores) a.scores.resize(retained, n_teach * k);
  a.variance_components.resize(retained, static_cast<Eigen::Index>(a.variance_component_names.size()));
  a.cutpoints.resize(retained, static_cast<Eigen::Index>(a.cutpoint_names.size()));
  if (cfg.keep_event_loglik) a.event_loglik.resize(retained, n_events);

  for (long t = 0; t < cfg.n_adapt; ++t) sampler.sweep(state, t);
  for (auto& per_dim : state.rho_steps) {
    for (auto& st : per_dim) st.proposals = st.accepts = 0;
  }
  for (auto& st : state.tau_steps) st.proposals = st.accepts = 0;

  // streaming log-sum-exp of -loglik per event
  std::vector<double> cpo_max(n_events, -kInf), cpo_sum(n_events, 0.0);
  int row = 0;
  for (long it = 1; it <= cfg.n_iter; ++it) {
    sampler.sweep(state);
    if (it <= cfg.n_burn || (it - cfg.n_burn) % cfg.thin != 0 || row >= retained) continue;

    a.chain.push_back(state.chain);
    a.iter.push_back(it);
    Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(d, k);
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(n_teach, k);
    if (k > 0) {
      const IdentifiedFactors idf = identified_loadings(state.factors);
      lam = idf.loadings;
      eta = idf.scores;
    }
    for (int q = 0; q < d; ++q) {
      for (int c = 0; c < k; ++c) a.loadings(row, q * k + c) = lam(q, c);
    }
    a.uniqueness.row(row) = state.factors.uniqueness.transpose();
    const Eigen::MatrixXd qm = lam * lam.transpose();
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) a.communality(row, i * d + j) = qm(i, j);
    }
    if (cfg.keep_scores) {
      for (int j = 0; j < n_teach; ++j) {
        for (int c = 0; c < k; ++c) a.scores(row, j * k + c) = eta(j, c);
      }
    }
    const auto& b = state.effects;
    Eigen::Index col = 0;
    for (const auto* prec : {&b.section_precision, &b.lesson_precision, &b.rater_precision}) {
      const Eigen::VectorXd v = inverse_spd(*prec).diagonal();
      for (Eigen::Index i = 0; i < v.size(); ++i) a.variance_components(row, col++) = v[i];
    }
    for (const auto& prec : b.rater_lesson_precision) {
      const Eigen::VectorXd v = inverse_spd(prec).diagonal();
      for (Eigen::Index i = 0; i < v.size(); ++i) a.variance_components(row, col++) = v[i];
    }
    col = 0;
    for (const auto& cp : state.cutpoints.dims) {
      for (const double g : cp.gamma) a.cutpoints(row, col++) = g;
      a.cutpoints(row, col++) = cp.tau;
    }
    for (int i = 0; i < n_events; ++i) {
      const double ll = sampler.event_loglik(state, i);
      if (cfg.keep_event_loglik) a.event_loglik(row, i) = ll;
      const double neg = -ll;
      if (neg > cpo_max[i]) {
        cpo_sum[i] = cpo_sum[i] * std::exp(cpo_max[i] - neg) + 1.0;
        cpo_max[i] = neg;
      } else {
        cpo_sum[i] += std::exp(neg - cpo_max[i]);
      }
    }
    ++row;
  }

  a.cpo_log_mean_inv.resize(1, n_events);
  for (int i = 0; i < n_events; ++i) {
    a.cpo_log_mean_inv(0, i) =
        row > 0 ? cpo_max[i] + std::log(cpo_sum[i]) - std::log(static_cast<double>(row))
                : std::numeric_limits<double>::quiet_NaN();
  }
  a.cpo_draws = {row};

  if (report) {
    report->chain = state.chain;
    report->seed = seed;
    report->seconds = std::chrono::duration<double>(Clock::now() - start).count();
    long props = 0, accs = 0;
    for (const auto& per_dim : state.rho_steps) {
      for (const auto& st : per_dim) {
        props += st.proposals;
        accs += st.accepts;
      }
    }
    report->rho_acceptance = props ? static_cast<double>(accs) / props : 0.0;
    props = accs = 0;
    for (const auto& st : state.tau_steps) {
      props += st.proposals;
      accs += st.accepts;
    }
    report->tau_acceptance = props ? static_cast<double>(accs) / props : 0.0;
  }
  return a;
}

DrawArchive run(const RatingDataset& ds, const SamplerConfig& cfg, RunReport* report) {
  const auto start = Clock::now();
  const GibbsSampler sampler(ds, cfg);
  const int n = cfg.n_chains;
  std::vector<DrawArchive> parts(n);
  std::vector<ChainReport> reports(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < n; c = next++) {
      try {
        const std::uint64_t seed = cfg.chain_seed(c);
        parts[c] = run_chain(sampler, sampler.initialize(c, seed), seed, &reports[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int threads = std::min(cfg.threads, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (int c = 0; c < n; ++c) {
    if (!errors[c]) continue;
    try {
      std::rethrow_exception(errors[c]);
    } catch (const ChainError&) {
      throw;
    } catch (const std::exception& e) {
      throw ChainError(c, -1, e.what());
    }
  }

  DrawArchive out = std::move(parts[0]);
  for (int c = 1; c < n; ++c) merge_archive(out, std::move(parts[c]));
  if (report) {
    report->chains = std::move(reports);
    report->sparse_level_dims = sampler.layout().sparse_level_dims();
    report->seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  return out;
}

}  // namespace befa
