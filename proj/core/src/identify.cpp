#include "befa/identify.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "befa/error.hpp"
#include "befa/rng.hpp"

namespace befa {

SignedPermutation SignedPermutation::identity(int k) {
  SignedPermutation t;
  t.source.resize(k);
  std::iota(t.source.begin(), t.source.end(), 0);
  t.sign.assign(k, 1);
  return t;
}

Eigen::MatrixXd SignedPermutation::matrix() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(size(), size());
  for (int k = 0; k < size(); ++k) m(source[k], k) = sign[k];
  return m;
}

Eigen::MatrixXd SignedPermutation::apply(const Eigen::MatrixXd& loadings) const {
  Eigen::MatrixXd out(loadings.rows(), size());
  for (int k = 0; k < size(); ++k) out.col(k) = sign[k] * loadings.col(source[k]);
  return out;
}

SignedPermutation SignedPermutation::then(const SignedPermutation& next) const {
  SignedPermutation t;
  t.source.resize(size());
  t.sign.resize(size());
  for (int k = 0; k < size(); ++k) {
    t.source[k] = source[next.source[k]];
    t.sign[k] = next.sign[k] * sign[next.source[k]];
  }
  return t;
}

double varimax_criterion(const Eigen::MatrixXd& l) {
  const double d = static_cast<double>(l.rows());
  const Eigen::ArrayXXd sq = l.array().square();
  double v = 0.0;
  for (Eigen::Index k = 0; k < l.cols(); ++k) {
    const double m2 = sq.col(k).sum() / d;
    const double m4 = sq.col(k).square().sum() / d;
    v += m4 - m2 * m2;
  }
  return v;
}

namespace {

void check_rank(const Eigen::MatrixXd& l, const char* who) {
  if (l.cols() == 0) return;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(l);
  const auto& s = svd.singularValues();
  if (l.rows() < l.cols() || !(s[s.size() - 1] > 1e-10 * std::max(1.0, s[0]))) {
    throw NumericalError(std::string(who) + ": loadings are rank deficient");
  }
}

Eigen::MatrixXd random_rotation(Eigen::Index k, Rng& rng) {
  Eigen::MatrixXd z(k, k);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
  Eigen::MatrixXd q = qr.householderQ();
  return q;
}

// One varimax run from `start`; returns false when the sweep cap is hit.
bool varimax_run(const Eigen::MatrixXd& l, Eigen::MatrixXd rot, const VarimaxOptions& o,
                 VarimaxResult& out, std::vector<double>& trace) {
  const Eigen::Index k = l.cols();
  const double p = static_cast<double>(l.rows());
  Eigen::MatrixXd x = l * rot;
  double crit = varimax_criterion(x);
  trace.push_back(crit);
  for (int sweep = 1; sweep <= o.max_sweeps; ++sweep) {
    for (Eigen::Index i = 0; i + 1 < k; ++i) {
      for (Eigen::Index j = i + 1; j < k; ++j) {
        const Eigen::ArrayXd a = x.col(i).array();
        const Eigen::ArrayXd b = x.col(j).array();
        const Eigen::ArrayXd u = a.square() - b.square();
        const Eigen::ArrayXd v = 2.0 * a * b;
        const double su = u.sum();
        const double sv = v.sum();
        const double num = 2.0 * (u * v).sum() - 2.0 * su * sv / p;
        const double den = (u.square() - v.square()).sum() - (su * su - sv * sv) / p;
        const double theta = 0.25 * std::atan2(num, den);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const Eigen::VectorXd xi = x.col(i);
        x.col(i) = c * xi + s * x.col(j);
        x.col(j) = -s * xi + c * x.col(j);
        const Eigen::VectorXd ri = rot.col(i);
        rot.col(i) = c * ri + s * rot.col(j);
        rot.col(j) = -s * ri + c * rot.col(j);
      }
    }
    const double next = varimax_criterion(x);
    trace.push_back(next);
    const bool done = next - crit < o.tolerance;
    crit = next;
    if (done) {
      out.loadings = x;
      out.rotation = rot;
      out.criterion = crit;
      out.sweeps = sweep;
      return true;
    }
  }
  return false;
}

}  // namespace

VarimaxResult varimax(const Eigen::MatrixXd& loadings, const VarimaxOptions& o) {
  const Eigen::Index k = loadings.cols();
  if (k == 0) throw NumericalError("varimax: no factors");
  check_rank(loadings, "varimax");

  Eigen::VectorXd h = Eigen::VectorXd::Ones(loadings.rows());
  if (o.kaiser_normalize) {
    h = loadings.rowwise().norm();
    for (Eigen::Index d = 0; d < h.size(); ++d) {
      if (!(h[d] > 0.0)) h[d] = 1.0;
    }
  }
  const Eigen::MatrixXd l = h.cwiseInverse().asDiagonal() * loadings;

  VarimaxResult out;
  if (k == 1) {
    out.rotation = Eigen::MatrixXd::Identity(1, 1);
    out.loadings = loadings;
    out.criterion = varimax_criterion(loadings);
    return out;
  }
  Rng rng(o.seed);
  std::vector<double> trace;
  Eigen::MatrixXd start = Eigen::MatrixXd::Identity(k, k);
  for (int attempt = 0; attempt <= o.max_restarts; ++attempt) {
    if (varimax_run(l, start, o, out, trace)) {
      out.loadings = h.asDiagonal() * out.loadings;
      out.criterion = varimax_criterion(out.loadings);
      return out;
    }
    start = random_rotation(k, rng);
  }
  std::ostringstream msg;
  msg << "varimax did not converge; criterion trace tail:";
  for (std::size_t i = trace.size() > 10 ? trace.size() - 10 : 0; i < trace.size(); ++i) {
    msg << ' ' << trace[i];
  }
  throw ConvergenceError(msg.str());
}

std::vector<SignedPermutation> enumerate_signed_perms(int k, int cap) {
  if (k < 1) throw ConfigError("enumerate_signed_perms: K must be >= 1");
  if (k > cap) {
    throw ConfigError("enumerate_signed_perms: K=" + std::to_string(k) + " exceeds the cap of " +
                      std::to_string(cap) + " (2^K K! matrices); raise the cap explicitly");
  }
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<SignedPermutation> out;
  do {
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      SignedPermutation t;
      t.source = perm;
      t.sign.resize(k);
      for (int c = 0; c < k; ++c) t.sign[c] = (mask >> c) & 1u ? -1 : 1;
      out.push_back(std::move(t));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

Orientation best_orientation(const Eigen::MatrixXd& target, const Eigen::MatrixXd& candidate,
                             const std::vector<SignedPermutation>& all) {
  if (target.rows() != candidate.rows() || target.cols() != candidate.cols()) {
    throw ValidationError("best_orientation: shape mismatch");
  }
  // ||A - C T||^2 = ||A||^2 + ||C||^2 - 2 sum_k sign_k (C'A)(source_k, k)
  const Eigen::MatrixXd m = candidate.transpose() * target;
  const int k = static_cast<int>(target.cols());
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < all.size(); ++i) {
    double score = 0.0;
    for (int c = 0; c < k; ++c) score += all[i].sign[c] * m(all[i].source[c], c);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  Orientation o;
  o.t = all.at(best);
  o.distance = (target - o.t.apply(candidate)).squaredNorm();
  return o;
}

Orientation best_orientation(const Eigen::MatrixXd& target, const Eigen::MatrixXd& candidate) {
  return best_orientation(target, candidate,
                          enumerate_signed_perms(static_cast<int>(target.cols())));
}

Eigen::MatrixXd IdentifiedPosterior::mean_loadings() const {
  if (loadings.empty()) return {};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(loadings[0].rows(), loadings[0].cols());
  for (const auto& l : loadings) m += l;
  return m / static_cast<double>(loadings.size());
}

namespace {

SignedPermutation final_relabel(const Eigen::MatrixXd& mean, const std::vector<Anchor>& anchors) {
  const int k = static_cast<int>(mean.cols());
  SignedPermutation s;
  s.source.assign(k, -1);
  s.sign.assign(k, 1);
  std::vector<bool> used(k, false);
  for (const auto& a : anchors) {
    if (a.factor < 0 || a.factor >= k || a.dim < 0 || a.dim >= mean.rows()) {
      throw ConfigError("anchor out of range");
    }
    if (s.source[a.factor] >= 0) throw ConfigError("two anchors target the same factor");
    int best = -1;
    for (int c = 0; c < k; ++c) {
      if (!used[c] && (best < 0 || std::abs(mean(a.dim, c)) > std::abs(mean(a.dim, best)))) best = c;
    }
    used[best] = true;
    s.source[a.factor] = best;
    s.sign[a.factor] = mean(a.dim, best) < 0.0 ? -1 : 1;
  }
  int next = 0;
  for (int f = 0; f < k; ++f) {
    if (s.source[f] >= 0) continue;
    while (used[next]) ++next;
    used[next] = true;
    s.source[f] = next;
    s.sign[f] = mean.col(next).sum() < 0.0 ? -1 : 1;
  }
  return s;
}

}  // namespace

IdentifiedPosterior align(const std::vector<Eigen::MatrixXd>& draws, const AlignOptions& o) {
  if (draws.empty()) throw ValidationError("align: no draws");
  const Eigen::Index d = draws[0].rows();
  const int k = static_cast<int>(draws[0].cols());
  for (const auto& l : draws) {
    if (l.rows() != d || l.cols() != k) throw ValidationError("align: draws differ in shape");
  }
  const auto all = enumerate_signed_perms(k);
  const int n = static_cast<int>(draws.size());

  IdentifiedPosterior out;
  Rng rng(o.seed);
  out.pivot_draw = rng.index(n);
  Eigen::MatrixXd pivot = draws[out.pivot_draw];

  std::vector<SignedPermutation> decision(n), previous;
  auto orient_all = [&]() {
    const int threads = std::max(1, std::min(o.threads, n));
    std::atomic<int> next{0};
    auto work = [&]() {
      for (int b = next++; b < n; b = next++) decision[b] = best_orientation(pivot, draws[b], all).t;
    };
    if (threads == 1) {
      work();
      return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  };

  bool converged = false;
  int changed = 0;
  for (int pass = 1; pass <= o.max_passes; ++pass) {
    out.pivot_history.push_back(pivot);
    orient_all();
    out.passes = pass;
    if (pass > 1) {
      changed = 0;
      for (int b = 0; b < n; ++b) changed += decision[b] == previous[b] ? 0 : 1;
      if (changed == 0) {
        converged = true;
        break;
      }
    }
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, k);
    for (int b = 0; b < n; ++b) mean += decision[b].apply(draws[b]);
    pivot = mean / static_cast<double>(n);
    previous = decision;
  }
  if (!converged) {
    throw ConvergenceError("align: orientation decisions still changing after " +
                           std::to_string(o.max_passes) + " passes (" + std::to_string(changed) +
                           " of " + std::to_string(n) + " draws changed in the last pass)");
  }

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, k);
  for (int b = 0; b < n; ++b) mean += decision[b].apply(draws[b]);
  mean /= static_cast<double>(n);
  out.relabel = final_relabel(mean, o.anchors);
  out.orientation.resize(n);
  out.loadings.resize(n);
  for (int b = 0; b < n; ++b) {
    out.orientation[b] = decision[b].then(out.relabel);
    out.loadings[b] = out.orientation[b].apply(draws[b]);
  }
  return out;
}

Eigen::MatrixXd rotate_scores(const Eigen::MatrixXd& lambda_b, const Eigen::MatrixXd& lambda_f,
                              const Eigen::MatrixXd& eta_b) {
  check_rank(lambda_b, "rotate_scores");
  const Eigen::MatrixXd gram = lambda_b.transpose() * lambda_b;
  const Eigen::MatrixXd r = gram.ldlt().solve(lambda_b.transpose() * lambda_f);
  return eta_b * r;
}

ArchiveIdentification identify_archive(const DrawArchive& a, const IdentifyOptions& o) {
  if (a.factors < 1) throw ConfigError("identify: archive has no factors (K = 0)");
  if (a.draw_count() == 0) throw ValidationError("identify: archive holds no draws");
  ArchiveIdentification out;
  const int n = a.draw_count();
  out.raw.resize(n);
  out.varimax.resize(n);
  for (int b = 0; b < n; ++b) {
    out.raw[b] = a.loadings_at(b);
    VarimaxOptions vo = o.varimax;
    vo.seed = derive_seed(o.varimax.seed, static_cast<std::uint64_t>(b));
    out.varimax[b] = varimax(out.raw[b], vo).loadings;
  }
  out.posterior = align(out.varimax, o.align);
  if (a.has_scores()) {
    out.posterior.scores.resize(n);
    for (int b = 0; b < n; ++b) {
      out.posterior.scores[b] = rotate_scores(out.raw[b], out.posterior.loadings[b], a.scores_at(b));
    }
  }
  return out;
}

Anchor parse_anchor(const std::string& text, const std::vector<std::string>& dims) {
  const auto colon = text.rfind(":factor=");
  if (text.rfind("dim=", 0) != 0 || colon == std::string::npos) {
    throw ConfigError("anchor must look like dim=NAME:factor=k, got '" + text + "'");
  }
  const std::string name = text.substr(4, colon - 4);
  const std::string fac = text.substr(colon + 8);
  int factor = 0;
  try {
    std::size_t used = 0;
    factor = std::stoi(fac, &used);
    if (used != fac.size()) throw std::invalid_argument(fac);
  } catch (const std::exception&) {
    throw ConfigError("anchor factor must be an integer, got '" + fac + "'");
  }
  int found = -1;
  for (std::size_t q = 0; q < dims.size(); ++q) {
    const auto& full = dims[q];
    const auto sep = full.find(':');
    const bool match = full == name || (sep != std::string::npos && full.substr(sep + 1) == name);
    if (!match) continue;
    if (found >= 0) throw ConfigError("anchor dimension '" + name + "' is ambiguous");
    found = static_cast<int>(q);
  }
  if (found < 0) throw ConfigError("anchor dimension '" + name + "' not found");
  return Anchor{found, factor - 1};
}

}  // namespace befa
