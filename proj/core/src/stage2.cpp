#include "befa/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "befa/csv.hpp"
#include "befa/error.hpp"
#include "befa/modelcheck.hpp"

namespace befa {

ExternalMeasure load_external_measure(const std::filesystem::path& path, const std::string& name,
                                      double reliability) {
  if (!(reliability > 0.0 && reliability <= 1.0)) {
    throw ConfigError("reliability must lie in (0, 1], got " + format_double(reliability));
  }
  ExternalMeasure m;
  m.name = name;
  m.reliability = reliability;
  CsvReader r(path);
  r.expect_header({"teacher_id", "estimate"});
  std::vector<std::string> f;
  std::unordered_map<std::string, int> seen;
  while (r.next(f)) {
    if (f.size() != 2 || f[0].empty()) throw ParseError("expected teacher_id,estimate", r.line());
    if (!seen.emplace(f[0], 0).second) throw ParseError("duplicate teacher '" + f[0] + "'", r.line());
    m.teacher_ids.push_back(f[0]);
    m.estimates.push_back(parse_double(f[1], r.line()));
  }
  return m;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

DisattenuatedResult disattenuated_corr(const std::vector<Eigen::MatrixXd>& draws,
                                       const std::vector<std::string>& teacher_ids,
                                       const ExternalMeasure& m, int factor) {
  if (!(m.reliability > 0.0 && m.reliability <= 1.0)) throw ConfigError("reliability must lie in (0, 1]");
  std::unordered_map<std::string, double> est;
  for (std::size_t i = 0; i < m.teacher_ids.size(); ++i) est[m.teacher_ids[i]] = m.estimates[i];

  DisattenuatedResult r;
  r.factor = factor;
  std::vector<int> rows;
  std::vector<double> theta;
  for (std::size_t j = 0; j < teacher_ids.size(); ++j) {
    const auto it = est.find(teacher_ids[j]);
    if (it == est.end()) {
      ++r.teachers_missing;
      continue;
    }
    rows.push_back(static_cast<int>(j));
    theta.push_back(it->second);
  }
  r.teachers_used = static_cast<int>(rows.size());
  if (r.teachers_used < 3) throw ValidationError("stage2: fewer than 3 teachers have both scores and a measure");

  const double root = std::sqrt(m.reliability);
  std::vector<double> eta(rows.size());
  std::vector<double> finite;
  for (const auto& s : draws) {
    if (factor < 0 || factor >= s.cols()) throw ConfigError("stage2: factor index out of range");
    for (std::size_t i = 0; i < rows.size(); ++i) eta[i] = s(rows[i], factor);
    const double c = pearson(eta, theta) / root;
    r.draws.push_back(c);
    if (std::isnan(c)) {
      ++r.undefined_draws;
      continue;
    }
    if (std::abs(c) > 1.0) ++r.beyond_one;
    finite.push_back(c);
  }
  if (finite.empty()) {
    r.mean = r.q025 = r.q975 = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
  r.q025 = quantile(finite, 0.025);
  r.q975 = quantile(finite, 0.975);
  return r;
}

KdeGrid kernel_density(std::span<const double> values, int points) {
  std::vector<double> v;
  for (const double x : values) {
    if (std::isfinite(x)) v.push_back(x);
  }
  KdeGrid g;
  if (v.size() < 2 || points < 2) return g;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  g.bandwidth = 0.9 * spread * std::pow(n, -0.2);
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it - 3.0 * g.bandwidth;
  const double hi = *hi_it + 3.0 * g.bandwidth;
  const double norm = 1.0 / (n * g.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    double s = 0.0;
    for (const double xi : v) {
      const double z = (x - xi) / g.bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    g.x.push_back(x);
    g.density.push_back(s * norm);
  }
  return g;
}

}  // namespace befa
