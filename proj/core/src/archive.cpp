#include "befa/archive.hpp"

#include <algorithm>
#include <sstream>

#include "befa/csv.hpp"
#include "befa/error.hpp"

namespace befa {

namespace fs = std::filesystem;

Eigen::MatrixXd DrawArchive::loadings_at(int draw) const {
  const int d = dims();
  Eigen::MatrixXd m(d, factors);
  for (int q = 0; q < d; ++q) {
    for (int k = 0; k < factors; ++k) m(q, k) = loadings(draw, q * factors + k);
  }
  return m;
}

Eigen::MatrixXd DrawArchive::communality_at(int draw) const {
  const int d = dims();
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = communality(draw, i * d + j);
  }
  return m;
}

Eigen::VectorXd DrawArchive::uniqueness_at(int draw) const {
  return uniqueness.row(draw).transpose();
}

Eigen::MatrixXd DrawArchive::total_covariance_at(int draw) const {
  Eigen::MatrixXd m = communality_at(draw);
  m.diagonal() += uniqueness_at(draw);
  return m;
}

Eigen::MatrixXd DrawArchive::scores_at(int draw) const {
  if (!has_scores()) throw ValidationError("archive does not hold factor scores");
  const int n = teachers();
  Eigen::MatrixXd m(n, factors);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < factors; ++k) m(j, k) = scores(draw, j * factors + k);
  }
  return m;
}

std::vector<int> DrawArchive::draws_of_chain(int c) const {
  std::vector<int> out;
  for (int b = 0; b < draw_count(); ++b) {
    if (chain[b] == c) out.push_back(b);
  }
  return out;
}

std::vector<double> DrawArchive::chain_series(const RowMatrix& block, int column, int c) const {
  std::vector<double> out;
  for (const int b : draws_of_chain(c)) out.push_back(block(b, column));
  return out;
}

namespace {

void append_rows(RowMatrix& into, const RowMatrix& part) {
  if (part.rows() == 0) return;
  if (into.rows() == 0) {
    into = part;
    return;
  }
  if (into.cols() != part.cols()) throw ValidationError("merge_archive: block widths differ");
  RowMatrix out(into.rows() + part.rows(), into.cols());
  out << into, part;
  into = std::move(out);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

void write_block(const fs::path& path, const DrawArchive& a, const RowMatrix& block,
                 const std::vector<std::string>& columns) {
  CsvWriter w(path);
  std::vector<std::string> header{"chain", "iter"};
  header.insert(header.end(), columns.begin(), columns.end());
  w.row(header);
  std::vector<std::string> fields;
  for (Eigen::Index b = 0; b < block.rows(); ++b) {
    fields.assign({std::to_string(a.chain[b]), std::to_string(a.iter[b])});
    for (Eigen::Index c = 0; c < block.cols(); ++c) fields.push_back(format_double(block(b, c)));
    w.row(fields);
  }
}

// Reads a block CSV; fills chain/iter the first time and checks them afterwards.
RowMatrix read_block(const fs::path& path, DrawArchive& a, std::vector<std::string>* columns) {
  CsvReader r(path);
  const auto header = r.read_header();
  if (header.size() < 2 || header[0] != "chain" || header[1] != "iter") {
    throw ParseError(path.string() + ": expected chain,iter columns", r.line());
  }
  if (columns) columns->assign(header.begin() + 2, header.end());
  const bool fill = a.chain.empty();
  std::vector<std::vector<double>> rows;
  std::vector<std::string> f;
  while (r.next(f)) {
    if (f.size() != header.size()) throw ParseError(path.string() + ": wrong field count", r.line());
    const int c = static_cast<int>(parse_long(f[0], r.line()));
    const long it = parse_long(f[1], r.line());
    const std::size_t b = rows.size();
    if (fill) {
      a.chain.push_back(c);
      a.iter.push_back(it);
    } else if (b >= a.chain.size() || a.chain[b] != c || a.iter[b] != it) {
      throw ParseError(path.string() + ": draw index disagrees with other blocks", r.line());
    }
    std::vector<double> v;
    for (std::size_t i = 2; i < f.size(); ++i) v.push_back(parse_double(f[i], r.line()));
    rows.push_back(std::move(v));
  }
  if (!fill && rows.size() != a.chain.size()) {
    throw ParseError(path.string() + ": draw count disagrees with other blocks", r.line());
  }
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 2));
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t c = 0; c < rows[b].size(); ++c) m(b, c) = rows[b][c];
  }
  return m;
}

std::vector<std::string> read_ids(const fs::path& path, const std::string& column) {
  CsvReader r(path);
  r.expect_header({column});
  std::vector<std::string> ids, f;
  while (r.next(f)) ids.push_back(f.at(0));
  return ids;
}

}  // namespace

void merge_archive(DrawArchive& into, DrawArchive&& part) {
  if (into.dim_names != part.dim_names || into.factors != part.factors) {
    throw ValidationError("merge_archive: archives describe different models");
  }
  into.chain.insert(into.chain.end(), part.chain.begin(), part.chain.end());
  into.iter.insert(into.iter.end(), part.iter.begin(), part.iter.end());
  append_rows(into.loadings, part.loadings);
  append_rows(into.uniqueness, part.uniqueness);
  append_rows(into.communality, part.communality);
  append_rows(into.scores, part.scores);
  append_rows(into.variance_components, part.variance_components);
  append_rows(into.cutpoints, part.cutpoints);
  append_rows(into.event_loglik, part.event_loglik);
  append_rows(into.cpo_log_mean_inv, part.cpo_log_mean_inv);
  into.cpo_draws.insert(into.cpo_draws.end(), part.cpo_draws.begin(), part.cpo_draws.end());
  into.seeds.insert(into.seeds.end(), part.seeds.begin(), part.seeds.end());
  into.n_chains += part.n_chains;
}

void save_archive(const DrawArchive& a, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream meta(dir / "meta");
    if (!meta) throw Error("cannot write " + (dir / "meta").string());
    std::vector<std::string> seeds, canon;
    for (const auto s : a.seeds) seeds.push_back(std::to_string(s));
    for (const auto c : a.dim_canonical) canon.push_back(std::to_string(c));
    meta << "factors = " << a.factors << "\n"
         << "dims = " << join(a.dim_names) << "\n"
         << "dim_canonical = " << join(canon) << "\n"
         << "teachers = " << a.teachers() << "\n"
         << "events = " << a.event_ids.size() << "\n"
         << "n_chains = " << a.n_chains << "\n"
         << "seeds = " << join(seeds) << "\n"
         << "n_adapt = " << a.n_adapt << "\n"
         << "n_iter = " << a.n_iter << "\n"
         << "n_burn = " << a.n_burn << "\n"
         << "thin = " << a.thin << "\n"
         << "draws = " << a.draw_count() << "\n"
         << "uniqueness_prior = " << a.uniqueness_prior << "\n"
         << "scores = " << (a.has_scores() ? "yes" : "no") << "\n";
  }
  {
    CsvWriter w(dir / "teachers.csv");
    w.row({"teacher_id"});
    for (const auto& t : a.teacher_ids) w.row({t});
  }
  {
    CsvWriter w(dir / "events.csv");
    w.row({"event_id"});
    for (const auto& e : a.event_ids) w.row({e});
  }

  const int d = a.dims();
  std::vector<std::string> cols;
  for (int q = 0; q < d; ++q) {
    for (int k = 0; k < a.factors; ++k) cols.push_back(a.dim_names[q] + "/f" + std::to_string(k + 1));
  }
  write_block(dir / "loadings.csv", a, a.loadings, cols);
  write_block(dir / "uniqueness.csv", a, a.uniqueness, a.dim_names);
  cols.clear();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) cols.push_back(a.dim_names[i] + "/" + a.dim_names[j]);
  }
  write_block(dir / "communality.csv", a, a.communality, cols);
  if (a.has_scores()) {
    cols.clear();
    for (const auto& t : a.teacher_ids) {
      for (int k = 0; k < a.factors; ++k) cols.push_back(t + "/f" + std::to_string(k + 1));
    }
    write_block(dir / "scores.csv", a, a.scores, cols);
  }
  write_block(dir / "variance_components.csv", a, a.variance_components, a.variance_component_names);
  write_block(dir / "cutpoints.csv", a, a.cutpoints, a.cutpoint_names);

  {
    CsvWriter w(dir / "cpo_accumulators.csv");
    w.row({"chain", "draws", "event_id", "log_mean_inv_lik"});
    for (Eigen::Index c = 0; c < a.cpo_log_mean_inv.rows(); ++c) {
      for (Eigen::Index i = 0; i < a.cpo_log_mean_inv.cols(); ++i) {
        w.row({std::to_string(c), std::to_string(a.cpo_draws[c]), a.event_ids[i],
               format_double(a.cpo_log_mean_inv(c, i))});
      }
    }
  }
  if (a.event_loglik.rows() > 0) {
    CsvWriter w(dir / "event_loglik.csv");
    w.row({"chain", "iter", "event_id", "loglik"});
    for (Eigen::Index b = 0; b < a.event_loglik.rows(); ++b) {
      for (Eigen::Index i = 0; i < a.event_loglik.cols(); ++i) {
        w.row({std::to_string(a.chain[b]), std::to_string(a.iter[b]), a.event_ids[i],
               format_double(a.event_loglik(b, i))});
      }
    }
  }
}

DrawArchive load_archive(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("archive directory not found: " + dir.string());
  DrawArchive a;
  bool scores = false;
  for (const auto& kv : read_key_values(dir / "meta")) {
    const auto num = [&] { return static_cast<int>(parse_long(kv.value, kv.line)); };
    if (kv.key == "factors") a.factors = num();
    else if (kv.key == "dims") a.dim_names = split_list(kv.value, kv.line);
    else if (kv.key == "dim_canonical") {
      for (const auto& s : split_list(kv.value, kv.line)) a.dim_canonical.push_back(static_cast<int>(parse_long(s, kv.line)));
    } else if (kv.key == "n_chains") a.n_chains = num();
    else if (kv.key == "seeds") {
      if (!trim(kv.value).empty()) {
        for (const auto& s : split_list(kv.value, kv.line)) a.seeds.push_back(std::stoull(s));
      }
    } else if (kv.key == "n_adapt") a.n_adapt = num();
    else if (kv.key == "n_iter") a.n_iter = num();
    else if (kv.key == "n_burn") a.n_burn = num();
    else if (kv.key == "thin") a.thin = num();
    else if (kv.key == "uniqueness_prior") a.uniqueness_prior = kv.value;
    else if (kv.key == "scores") scores = kv.value == "yes";
  }
  a.teacher_ids = read_ids(dir / "teachers.csv", "teacher_id");
  a.event_ids = read_ids(dir / "events.csv", "event_id");

  a.loadings = read_block(dir / "loadings.csv", a, nullptr);
  a.uniqueness = read_block(dir / "uniqueness.csv", a, nullptr);
  a.communality = read_block(dir / "communality.csv", a, nullptr);
  if (scores) a.scores = read_block(dir / "scores.csv", a, nullptr);
  a.variance_components = read_block(dir / "variance_components.csv", a, &a.variance_component_names);
  a.cutpoints = read_block(dir / "cutpoints.csv", a, &a.cutpoint_names);
  if (a.loadings.cols() != a.dims() * a.factors || a.uniqueness.cols() != a.dims()) {
    throw ParseError("archive blocks do not match meta dims/factors", 0);
  }
  if (a.loadings.rows() == 0) a.loadings.resize(a.draw_count(), 0);

  {
    CsvReader r(dir / "cpo_accumulators.csv");
    r.expect_header({"chain", "draws", "event_id", "log_mean_inv_lik"});
    const auto n_events = static_cast<Eigen::Index>(a.event_ids.size());
    a.cpo_log_mean_inv = RowMatrix::Constant(a.n_chains, n_events, std::nan(""));
    a.cpo_draws.assign(a.n_chains, 0);
    std::vector<std::string> f;
    Eigen::Index i = 0;
    while (r.next(f)) {
      if (f.size() != 4) throw ParseError("cpo_accumulators.csv: wrong field count", r.line());
      const long c = parse_long(f[0], r.line());
      if (c < 0 || c >= a.n_chains) throw ParseError("cpo_accumulators.csv: bad chain", r.line());
      a.cpo_draws[c] = parse_long(f[1], r.line());
      a.cpo_log_mean_inv(c, i % std::max<Eigen::Index>(n_events, 1)) = parse_double(f[3], r.line());
      ++i;
    }
  }
  if (fs::exists(dir / "event_loglik.csv")) {
    CsvReader r(dir / "event_loglik.csv");
    r.expect_header({"chain", "iter", "event_id", "loglik"});
    const auto n_events = static_cast<Eigen::Index>(a.event_ids.size());
    a.event_loglik = RowMatrix::Zero(a.draw_count(), n_events);
    std::vector<std::string> f;
    Eigen::Index k = 0;
    while (r.next(f)) {
      if (f.size() != 4) throw ParseError("event_loglik.csv: wrong field count", r.line());
      const Eigen::Index b = k / n_events;
      if (b >= a.draw_count() || a.chain[b] != parse_long(f[0], r.line()) ||
          a.iter[b] != parse_long(f[1], r.line())) {
        throw ParseError("event_loglik.csv: draw index disagrees with other blocks", r.line());
      }
      a.event_loglik(b, k % n_events) = parse_double(f[3], r.line());
      ++k;
    }
  }
  return a;
}

}  // namespace befa
