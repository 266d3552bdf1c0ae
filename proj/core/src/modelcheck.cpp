#include "befa/modelcheck.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "befa/error.hpp"
#include "befa/rng.hpp"

namespace befa {

double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> log_cpo(const RowMatrix& loglik) {
  const Eigen::Index b = loglik.rows();
  std::vector<double> out(loglik.cols());
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const double m = (-loglik.col(i)).maxCoeff();
    double s = 0.0;
    for (Eigen::Index r = 0; r < b; ++r) s += std::exp(-loglik(r, i) - m);
    out[i] = -(m + std::log(s) - std::log(static_cast<double>(b)));
  }
  return out;
}

LpmlResult lpml_from_log_cpo(const std::vector<std::vector<double>>& per_chain, int factors) {
  if (per_chain.empty()) throw ValidationError("lpml: no chains");
  LpmlResult r;
  r.factors = factors;
  const std::size_t n = per_chain[0].size();
  r.log_cpo.assign(n, 0.0);
  std::vector<bool> unstable(n, false);
  for (const auto& c : per_chain) {
    if (c.size() != n) throw ValidationError("lpml: chains disagree on event count");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(c[i])) {
        unstable[i] = true;
        continue;
      }
      sum += c[i];
      r.log_cpo[i] += c[i] / static_cast<double>(per_chain.size());
    }
    r.per_chain.push_back(sum);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (unstable[i]) r.unstable_events.push_back(static_cast<int>(i));
  }
  const double m = static_cast<double>(r.per_chain.size());
  r.average = std::accumulate(r.per_chain.begin(), r.per_chain.end(), 0.0) / m;
  double ss = 0.0;
  for (const double v : r.per_chain) ss += (v - r.average) * (v - r.average);
  r.chain_sd = m > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  r.chain_min = *std::min_element(r.per_chain.begin(), r.per_chain.end());
  r.chain_max = *std::max_element(r.per_chain.begin(), r.per_chain.end());
  return r;
}

LpmlResult lpml(const DrawArchive& a) {
  std::vector<std::vector<double>> per_chain;
  if (a.event_loglik.rows() > 0) {
    std::vector<int> chains(a.chain);
    std::sort(chains.begin(), chains.end());
    chains.erase(std::unique(chains.begin(), chains.end()), chains.end());
    for (const int c : chains) {
      const auto rows = a.draws_of_chain(c);
      RowMatrix ll(static_cast<Eigen::Index>(rows.size()), a.event_loglik.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) ll.row(r) = a.event_loglik.row(rows[r]);
      per_chain.push_back(log_cpo(ll));
    }
  } else {
    if (a.cpo_log_mean_inv.rows() == 0) throw ValidationError("lpml: archive holds no likelihood terms");
    for (Eigen::Index c = 0; c < a.cpo_log_mean_inv.rows(); ++c) {
      std::vector<double> v(a.cpo_log_mean_inv.cols());
      for (Eigen::Index i = 0; i < a.cpo_log_mean_inv.cols(); ++i) v[i] = -a.cpo_log_mean_inv(c, i);
      per_chain.push_back(std::move(v));
    }
  }
  return lpml_from_log_cpo(per_chain, a.factors);
}

namespace {

Eigen::VectorXd corr_eigenvalues(const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = es.eigenvalues().reverse();
  return ev;
}

}  // namespace

EigenPosterior eigens_of_corr(const std::vector<Eigen::MatrixXd>& covs) {
  EigenPosterior out;
  if (covs.empty()) return out;
  const Eigen::Index d = covs[0].rows();
  std::vector<Eigen::VectorXd> rows;
  for (const auto& c : covs) {
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (c.rows() != d || llt.info() != Eigen::Success || !c.allFinite()) {
      ++out.skipped;
      continue;
    }
    rows.push_back(corr_eigenvalues(c));
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t b = 0; b < rows.size(); ++b) out.values.row(b) = rows[b].transpose();
  return out;
}

EigenPosterior eigens_of_corr(const DrawArchive& a) {
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(a.draw_count());
  for (int b = 0; b < a.draw_count(); ++b) covs.push_back(a.total_covariance_at(b));
  return eigens_of_corr(covs);
}

Eigen::VectorXd sample_corr_eigenvalues(const Eigen::MatrixXd& data) {
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd c = data.rowwise() - mean;
  const Eigen::MatrixXd cov = c.transpose() * c;
  return corr_eigenvalues(cov);
}

std::vector<double> null_eigen_thresholds(int n, int d, const ParallelOptions& o) {
  if (n < 2 || d < 1) throw ConfigError("parallel analysis needs n >= 2 and d >= 1");
  const int m = std::min(d, o.max_eigen);
  const long blocks = (o.n_null + o.block - 1) / o.block;
  // column-major storage: eig[k * n_null + r]
  std::vector<double> eig(static_cast<std::size_t>(m) * o.n_null);
  std::atomic<long> next{0};
  auto work = [&]() {
    Eigen::MatrixXd x(n, d);
    for (long blk = next++; blk < blocks; blk = next++) {
      Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(blk)));
      const long end = std::min(o.n_null, (blk + 1) * o.block);
      for (long r = blk * o.block; r < end; ++r) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
        const Eigen::VectorXd ev = sample_corr_eigenvalues(x);
        for (int k = 0; k < m; ++k) eig[static_cast<std::size_t>(k) * o.n_null + r] = ev[k];
      }
    }
  };
  const int threads = std::max(1, o.threads);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  std::vector<double> out(m);
  for (int k = 0; k < m; ++k) {
    std::vector<double> col(eig.begin() + static_cast<std::ptrdiff_t>(k) * o.n_null,
                            eig.begin() + static_cast<std::ptrdiff_t>(k + 1) * o.n_null);
    out[k] = quantile(std::move(col), o.percentile);
  }
  return out;
}

ParallelAnalysisResult horn_select(const EigenPosterior& eig, const std::vector<double>& thr) {
  if (eig.values.rows() == 0) throw ValidationError("parallel analysis: empty eigenvalue posterior");
  ParallelAnalysisResult r;
  r.threshold = thr;
  const int m = std::min(static_cast<int>(eig.values.cols()), static_cast<int>(thr.size()));
  for (int k = 0; k < m; ++k) {
    std::vector<double> col(eig.values.rows());
    for (Eigen::Index b = 0; b < eig.values.rows(); ++b) col[b] = eig.values(b, k);
    r.mean.push_back(std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size()));
    r.lower.push_back(quantile(col, 0.025));
    r.upper.push_back(quantile(col, 0.975));
  }
  r.threshold.resize(m);
  r.selected = 0;
  while (r.selected < m && r.mean[r.selected] > thr[r.selected]) ++r.selected;
  return r;
}

ParallelAnalysisResult horn_parallel(const EigenPosterior& eig, int n, const ParallelOptions& o) {
  const int d = static_cast<int>(eig.values.cols());
  ParallelAnalysisResult r = horn_select(eig, null_eigen_thresholds(n, d, o));
  r.small_sample = n <= d;
  return r;
}

std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw ValidationError("gelman_rubin: need at least 2 chains");
  const std::size_t n = chains[0].size();
  if (n < 2) throw ValidationError("gelman_rubin: chains need at least 2 draws");
  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    if (c.size() != n) throw ValidationError("gelman_rubin: chains differ in length");
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / nn;
    double ss = 0.0;
    for (const double v : c) ss += (v - mean) * (v - mean);
    w += ss / (nn - 1.0);
    means.push_back(mean);
  }
  w /= m;
  if (!(w > 0.0)) return std::nullopt;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (const double v : means) b += (v - grand) * (v - grand);
  b *= nn / (m - 1.0);
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

namespace {

// Hartigan & Hartigan (1985) AS 217 on a sorted sample, 1-based indexing.
// Returns inf over unimodal G of sup |F_n - G|: half the largest gap between
// the convex minorant and concave majorant fits, with CDF steps of 1/n.
double dip_sorted(const std::vector<double>& xs) {
  const int n = static_cast<int>(xs.size());
  if (n < 2 || xs.front() == xs.back()) return 0.0;
  std::vector<double> x(n + 1);
  for (int i = 0; i < n; ++i) x[i + 1] = xs[i];
  std::vector<int> mn(n + 1), mj(n + 1), gcm(n + 1), lcm(n + 1);

  int low = 1, high = n;
  double dip = 1.0;

  mn[1] = 1;
  for (int j = 2; j <= n; ++j) {
    mn[j] = j - 1;
    for (;;) {
      const int mnj = mn[j];
      const int mnmnj = mn[mnj];
      if (mnj == 1 || (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj)) break;
      mn[j] = mnmnj;
    }
  }
  mj[n] = n;
  for (int k = n - 1; k >= 1; --k) {
    mj[k] = k + 1;
    for (;;) {
      const int mjk = mj[k];
      const int mjmjk = mj[mjk];
      if (mjk == n || (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk)) break;
      mj[k] = mjmjk;
    }
  }

  for (;;) {
    gcm[1] = high;
    int i = 1;
    for (; gcm[i] > low; ++i) gcm[i + 1] = mn[gcm[i]];
    const int l_gcm = i;
    int ig = l_gcm;
    int ix = ig - 1;

    lcm[1] = low;
    i = 1;
    for (; lcm[i] < high; ++i) lcm[i + 1] = mj[lcm[i]];
    const int l_lcm = i;
    int ih = l_lcm;
    int iv = 2;

    double d = 0.0;
    if (l_gcm != 2 || l_lcm != 2) {
      do {
        const int gcmix = gcm[ix];
        const int lcmiv = lcm[iv];
        if (gcmix > lcmiv) {
          const int gcmi1 = gcm[ix + 1];
          const double dx = (lcmiv - gcmi1 + 1) -
                            (x[lcmiv] - x[gcmi1]) * (gcmix - gcmi1) / (x[gcmix] - x[gcmi1]);
          ++iv;
          if (dx >= d) {
            d = dx;
            ig = ix + 1;
            ih = iv - 1;
          }
        } else {
          const int lcmiv1 = lcm[iv - 1];
          const double dx = (x[gcmix] - x[lcmiv1]) * (lcmiv - lcmiv1) / (x[lcmiv] - x[lcmiv1]) -
                            (gcmix - lcmiv1 - 1);
          --ix;
          if (dx >= d) {
            d = dx;
            ig = ix + 1;
            ih = iv;
          }
        }
        if (ix < 1) ix = 1;
        if (iv > l_lcm) iv = l_lcm;
      } while (gcm[ix] != lcm[iv]);
    } else {
      d = 1.0;
    }
    if (d < dip) break;

    double dip_l = 0.0;
    for (int j = ig; j < l_gcm; ++j) {
      double max_t = 1.0;
      const int jb = gcm[j + 1];
      const int je = gcm[j];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double c = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          const double t = (jj - jb + 1) - (x[jj] - x[jb]) * c;
          max_t = std::max(max_t, t);
        }
      }
      dip_l = std::max(dip_l, max_t);
    }
    double dip_u = 0.0;
    for (int j = ih; j < l_lcm; ++j) {
      double max_t = 1.0;
      const int jb = lcm[j];
      const int je = lcm[j + 1];
      if (je - jb > 1 && x[je] != x[jb]) {
        const double c = (je - jb) / (x[je] - x[jb]);
        for (int jj = jb; jj <= je; ++jj) {
          const double t = (x[jj] - x[jb]) * c - (jj - jb - 1);
          max_t = std::max(max_t, t);
        }
      }
      dip_u = std::max(dip_u, max_t);
    }
    dip = std::max(dip, std::max(dip_l, dip_u));

    if (low == gcm[ig] && high == lcm[ih]) break;
    low = gcm[ig];
    high = lcm[ih];
  }
  return dip / (2.0 * n);
}

struct DipCache {
  std::mutex mutex;
  std::map<std::tuple<int, int, std::uint64_t>, std::shared_ptr<std::vector<double>>> tables;
};

DipCache& dip_cache() {
  static DipCache cache;
  return cache;
}

}  // namespace

double dip_statistic(std::span<const double> sample) {
  std::vector<double> xs(sample.begin(), sample.end());
  std::sort(xs.begin(), xs.end());
  return dip_sorted(xs);
}

const std::vector<double>& dip_null_table(int n, const DipOptions& o) {
  if (n < 1 || o.replicates < 1) throw ConfigError("dip_null_table: need n >= 1 and replicates >= 1");
  auto& cache = dip_cache();
  const auto key = std::make_tuple(n, o.replicates, o.seed);
  std::lock_guard<std::mutex> lock(cache.mutex);
  auto it = cache.tables.find(key);
  if (it != cache.tables.end()) return *it->second;
  auto table = std::make_shared<std::vector<double>>(o.replicates);
  Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(n)));
  std::vector<double> xs(n);
  for (int r = 0; r < o.replicates; ++r) {
    for (auto& v : xs) v = rng.uniform();
    std::sort(xs.begin(), xs.end());
    (*table)[r] = dip_sorted(xs);
  }
  std::sort(table->begin(), table->end());
  return *cache.tables.emplace(key, table).first->second;
}

DipResult dip_test(std::span<const double> sample, const DipOptions& o) {
  if (sample.size() < 4) throw ValidationError("dip_test: need at least 4 observations");
  DipResult r;
  std::vector<double> xs(sample.begin(), sample.end());
  std::sort(xs.begin(), xs.end());
  if (xs.front() == xs.back()) return r;  // dip 0, p 1
  r.dip = dip_sorted(xs);
  const auto& null = dip_null_table(static_cast<int>(xs.size()), o);
  const auto first = std::lower_bound(null.begin(), null.end(), r.dip);
  r.p_value = static_cast<double>(null.end() - first) / static_cast<double>(null.size());
  return r;
}

}  // namespace befa
