#include "befa/effects.hpp"

#include <cmath>

#include "befa/error.hpp"

namespace befa {

EffectBlocks EffectBlocks::zeros(const RatingDataset& ds) {
  const int d = ds.dimension_count();
  EffectBlocks b;
  b.teacher = RowMatrix::Zero(ds.teachers.size(), d);
  b.section = RowMatrix::Zero(ds.sections.size(), d);
  b.lesson = RowMatrix::Zero(ds.lessons.size(), d);
  b.rater = RowMatrix::Zero(ds.raters.size(), d);
  for (const auto& e : ds.events) {
    const RaterLessonCell key{e.lesson, e.rater, e.protocol};
    if (b.cell_index.emplace(key, static_cast<int>(b.cells.size())).second) {
      b.cells.push_back(key);
      b.rater_lesson.push_back(Eigen::VectorXd::Zero(ds.protocols[e.protocol].dim_count()));
    }
  }
  b.section_precision = Eigen::MatrixXd::Identity(d, d);
  b.lesson_precision = Eigen::MatrixXd::Identity(d, d);
  b.rater_precision = Eigen::MatrixXd::Identity(d, d);
  for (const auto& p : ds.protocols) {
    b.rater_lesson_precision.push_back(Eigen::MatrixXd::Identity(p.dim_count(), p.dim_count()));
  }
  return b;
}

int EffectBlocks::cell_of(int lesson, int rater, int protocol) const {
  const auto it = cell_index.find({lesson, rater, protocol});
  return it == cell_index.end() ? -1 : it->second;
}

Eigen::VectorXd mu_for_event(const EffectBlocks& blocks, const RatingDataset& ds,
                             const ScoringEvent& e) {
  if (e.protocol < 0 || e.protocol >= static_cast<int>(ds.protocols.size()) ||
      e.teacher < 0 || e.teacher >= blocks.teacher.rows() || e.section < 0 ||
      e.section >= blocks.section.rows() || e.lesson < 0 || e.lesson >= blocks.lesson.rows() ||
      e.rater < 0 || e.rater >= blocks.rater.rows()) {
    throw ValidationError("mu_for_event: event refers to an unknown id");
  }
  const int cell = blocks.cell_of(e.lesson, e.rater, e.protocol);
  if (cell < 0) throw ValidationError("mu_for_event: no rater-by-lesson cell for event");
  const auto& positions = ds.position_of[e.protocol];
  Eigen::VectorXd mu(positions.size());
  for (std::size_t l = 0; l < positions.size(); ++l) {
    const int q = positions[l];
    mu[static_cast<Eigen::Index>(l)] = blocks.teacher(e.teacher, q) + blocks.section(e.section, q) +
                                       blocks.lesson(e.lesson, q) + blocks.rater(e.rater, q) +
                                       blocks.rater_lesson[cell][static_cast<Eigen::Index>(l)];
  }
  return mu;
}

IdentifiedFactors identified_loadings(const FactorState& fs) {
  if ((fs.expansion_precision.array() <= 0.0).any()) {
    throw NumericalError("identified_loadings: expansion precisions must be positive");
  }
  const Eigen::ArrayXd root = fs.expansion_precision.array().sqrt();
  IdentifiedFactors out;
  out.loadings = fs.working_loadings.array().rowwise() / root.transpose();
  out.scores = fs.working_scores.array().rowwise() * root.transpose();
  return out;
}

Eigen::MatrixXd communality(const Eigen::MatrixXd& loadings) {
  return loadings * loadings.transpose();
}

double factor_prior_log_density(const FactorState& fs, const FactorPriors& pr) {
  double lp = -0.5 * fs.working_loadings.squaredNorm();
  for (Eigen::Index k = 0; k < fs.expansion_precision.size(); ++k) {
    const double phi = fs.expansion_precision[k];
    lp += (pr.shape - 1.0) * std::log(phi) - pr.rate * phi;
  }
  for (Eigen::Index d = 0; d < fs.uniqueness.size(); ++d) {
    const double u = fs.uniqueness[d];
    if (pr.uniqueness == UniquenessPrior::kGammaPrecision) {
      // density of u when 1/u ~ Gamma(shape, rate)
      lp += -(pr.shape + 1.0) * std::log(u) - pr.rate / u;
    } else {
      if (u >= pr.uniform_sd_bound * pr.uniform_sd_bound) return -HUGE_VAL;
      lp += -0.5 * std::log(u);
    }
  }
  return lp;
}

double wishart_log_kernel(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scale, double df) {
  const double p = static_cast<double>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> lx(x);
  Eigen::LLT<Eigen::MatrixXd> ls(scale);
  if (lx.info() != Eigen::Success || ls.info() != Eigen::Success) return -HUGE_VAL;
  const double logdet = 2.0 * lx.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = ls.solve(x).trace();
  return 0.5 * (df - p - 1.0) * logdet - 0.5 * trace;
}

}  // namespace befa
