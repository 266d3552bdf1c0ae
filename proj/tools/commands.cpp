#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "befa/archive.hpp"
#include "befa/csv.hpp"
#include "befa/error.hpp"
#include "befa/identify.hpp"
#include "befa/modelcheck.hpp"
#include "befa/ratings.hpp"
#include "befa/report.hpp"
#include "befa/sampler.hpp"
#include "befa/stage2.hpp"
#include "befa/synthetic.hpp"
#include "run_config.hpp"

namespace befa::cli {

namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::string out;
  std::string seed;
  int threads = 0;
};

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

RunConfig prepare(RunConfig cfg, const Common& common) {
  if (!common.config.empty()) cfg.load_file(common.config);
  if (!common.seed.empty()) cfg.set("seed", common.seed);
  return cfg;
}

void write_lines(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------- simulate

RunConfig simulate_config() {
  return RunConfig("simulate",
                   {{"schema", "", true},
                    {"seed", ""},
                    {"teachers", ""},
                    {"sections_per_teacher", ""},
                    {"lessons_per_section", ""},
                    {"segments_per_lesson", ""},
                    {"raters", ""},
                    {"double_rating_fraction", ""},
                    {"factors", ""},
                    {"loadings", ""},
                    {"uniqueness", ""},
                    {"section_cov", ""},
                    {"lesson_cov", ""},
                    {"rater_cov", ""}},
                   {"rater_lesson_cov.", "cutpoints."});
}

void cmd_simulate(RunConfig& cfg, const fs::path& out, std::ostream& log) {
  std::vector<KeyValue> entries;
  for (const auto& [k, v] : cfg.resolved()) entries.push_back({k, v, 0});
  const TruthConfig truth_cfg = load_truth_config(entries);
  auto [ds, truth] = simulate(truth_cfg);
  cfg.set("seed", std::to_string(truth_cfg.seed));
  export_dataset(ds, out / "ratings.csv");
  export_wide(ds, out / "ratings_wide.csv");
  write_schema(ds.protocols, out / "schema.txt");
  write_truth(truth_cfg, truth, ds, out / "truth");
  const CrossingReport crossing = validate_crossing(ds);
  write_lines(out / "crossing.txt", format_crossing(crossing));
  log << "simulated " << ds.event_count() << " scoring events for " << ds.teachers.size()
      << " teachers, " << ds.dimension_count() << " dimensions, seed " << truth_cfg.seed << '\n';
}

// --------------------------------------------------------------------- fit

RunConfig fit_config() {
  const SamplerConfig d;
  return RunConfig("fit", {{"data", "", true},
                           {"schema", "", true},
                           {"factors", std::to_string(d.factors)},
                           {"chains", std::to_string(d.n_chains)},
                           {"adapt", std::to_string(d.n_adapt)},
                           {"iters", std::to_string(d.n_iter)},
                           {"burn", std::to_string(d.n_burn)},
                           {"thin", std::to_string(d.thin)},
                           {"seed", std::to_string(d.seed)},
                           {"rho_step", format_double(d.rho_step)},
                           {"tau_step", format_double(d.tau_step)},
                           {"target_acceptance", format_double(d.target_acceptance)},
                           {"uniqueness_prior", "gamma"},
                           {"prior_shape", format_double(d.priors.shape)},
                           {"prior_rate", format_double(d.priors.rate)},
                           {"uniform_sd_bound", format_double(d.priors.uniform_sd_bound)},
                           {"keep_scores", "true"},
                           {"keep_event_loglik", "false"}});
}

SamplerConfig sampler_config(const RunConfig& cfg, int threads) {
  SamplerConfig s;
  s.factors = cfg.get_int("factors");
  s.n_chains = cfg.get_int("chains");
  s.n_adapt = cfg.get_int("adapt");
  s.n_iter = cfg.get_int("iters");
  s.n_burn = cfg.get_int("burn");
  s.thin = cfg.get_int("thin");
  s.seed = cfg.get_u64("seed");
  s.rho_step = cfg.get_double("rho_step");
  s.tau_step = cfg.get_double("tau_step");
  s.target_acceptance = cfg.get_double("target_acceptance");
  s.priors.shape = cfg.get_double("prior_shape");
  s.priors.rate = cfg.get_double("prior_rate");
  s.priors.uniform_sd_bound = cfg.get_double("uniform_sd_bound");
  const std::string& prior = cfg.get("uniqueness_prior");
  if (prior == "gamma") {
    s.priors.uniqueness = UniquenessPrior::kGammaPrecision;
  } else if (prior == "uniform") {
    s.priors.uniqueness = UniquenessPrior::kUniformSd;
  } else {
    throw ConfigError("setting 'uniqueness_prior': expected gamma or uniform, got '" + prior + "'");
  }
  s.keep_scores = cfg.get_bool("keep_scores");
  s.keep_event_loglik = cfg.get_bool("keep_event_loglik");
  s.threads = threads;
  s.validate();
  return s;
}

struct RhatRow {
  std::string quantity;
  std::optional<double> rhat;
};

std::vector<RhatRow> rhat_table(const DrawArchive& a) {
  std::vector<RhatRow> rows;
  if (a.n_chains < 2) return rows;
  auto series = [&](const RowMatrix& block, int col) {
    std::vector<std::vector<double>> chains;
    for (int c = 0; c < a.n_chains; ++c) chains.push_back(a.chain_series(block, col, c));
    return chains;
  };
  const int d = a.dims();
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      rows.push_back({"Q[" + a.dim_names[i] + "," + a.dim_names[j] + "]",
                      gelman_rubin(series(a.communality, i * d + j))});
    }
  }
  for (int i = 0; i < d; ++i) {
    rows.push_back({"U[" + a.dim_names[i] + "]", gelman_rubin(series(a.uniqueness, i))});
  }
  return rows;
}

void cmd_fit(const RunConfig& cfg, const fs::path& out, int threads, std::ostream& log) {
  const fs::path schema_path = cfg.get_path("schema");
  const fs::path data_path = cfg.get_path("data");
  if (!fs::is_regular_file(schema_path)) throw ConfigError("schema file not found: " + schema_path.string());
  if (!fs::is_regular_file(data_path)) throw ConfigError("data file not found: " + data_path.string());
  const RatingDataset ds = load_dataset(data_path, load_schema(schema_path));
  const SamplerConfig sc = sampler_config(cfg, threads);

  RunReport report;
  const DrawArchive archive = run(ds, sc, &report);
  save_archive(archive, out);

  {
    CsvWriter w(out / "chains.csv");
    w.row({"chain", "seed", "seconds", "rho_acceptance", "tau_acceptance"});
    for (const auto& c : report.chains) {
      w.row({std::to_string(c.chain + 1), std::to_string(c.seed), format_double(c.seconds),
             format_double(c.rho_acceptance), format_double(c.tau_acceptance)});
    }
  }
  const auto rhat = rhat_table(archive);
  double worst = 0.0;
  {
    CsvWriter w(out / "rhat.csv");
    w.row({"quantity", "rhat"});
    for (const auto& r : rhat) {
      w.row({r.quantity, r.rhat ? format_double(*r.rhat) : "NA"});
      if (r.rhat) worst = std::max(worst, *r.rhat);
    }
  }

  std::ostringstream text;
  text << "fit: K = " << sc.factors << ", " << sc.n_chains << " chains, " << sc.n_adapt
       << " adaptation + " << sc.n_iter << " iterations (burn " << sc.n_burn << ", thin " << sc.thin
       << "), " << archive.draw_count() << " retained draws\n";
  text << "events " << ds.event_count() << ", teachers " << ds.teachers.size() << ", dimensions "
       << ds.dimension_count() << '\n';
  text << "wall time " << std::fixed << std::setprecision(1) << report.seconds << " s\n";
  for (const auto& c : report.chains) {
    text << "chain " << c.chain + 1 << ": seed " << c.seed << ", " << std::setprecision(1) << c.seconds
         << " s, rho acceptance " << std::setprecision(3) << c.rho_acceptance << ", tau acceptance "
         << c.tau_acceptance << '\n';
  }
  if (rhat.empty()) {
    text << "R-hat: not available with a single chain\n";
  } else {
    text << "max R-hat over Q and U elements: " << std::setprecision(4) << worst << '\n';
  }
  for (const int q : report.sparse_level_dims) {
    text << "warning: dimension " << ds.dim_name(q) << " has a score level used fewer than 5 times\n";
  }
  write_lines(out / "fit_report.txt", text.str());
  log << text.str();
}

// ---------------------------------------------------------------- identify

RunConfig identify_config() {
  return RunConfig("identify", {{"seed", "1"},
                                {"kaiser", "false"},
                                {"anchors", ""},
                                {"max_passes", "100"},
                                {"varimax_tolerance", "1e-10"}});
}

std::vector<std::string> split_anchors(const std::string& value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t end = std::min(value.find(';', start), value.size());
    const std::string item = trim(value.substr(start, end - start));
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

void cmd_identify(const RunConfig& cfg, const fs::path& input, const fs::path& out, int threads,
                  std::ostream& log) {
  const DrawArchive archive = load_archive(input);
  if (archive.factors < 1) throw ConfigError("identify: archive has K = 0, nothing to rotate");
  IdentifyOptions opt;
  opt.varimax.kaiser_normalize = cfg.get_bool("kaiser");
  opt.varimax.tolerance = cfg.get_double("varimax_tolerance");
  opt.varimax.seed = cfg.get_u64("seed");
  opt.align.seed = cfg.get_u64("seed");
  opt.align.max_passes = cfg.get_int("max_passes");
  opt.align.threads = threads;
  if (cfg.has("anchors")) {
    for (const auto& a : split_anchors(cfg.get("anchors"))) {
      opt.align.anchors.push_back(parse_anchor(a, archive.dim_names));
    }
  }
  const ArchiveIdentification id = identify_archive(archive, opt);
  const IdentifiedPosterior& post = id.posterior;
  const int d = archive.dims();
  const int k = archive.factors;

  DrawArchive aligned = archive;
  for (int b = 0; b < archive.draw_count(); ++b) {
    for (int q = 0; q < d; ++q) {
      for (int f = 0; f < k; ++f) aligned.loadings(b, q * k + f) = post.loadings[b](q, f);
    }
    if (archive.has_scores()) {
      const Eigen::MatrixXd& s = post.scores[b];
      for (int j = 0; j < archive.teachers(); ++j) {
        for (int f = 0; f < k; ++f) aligned.scores(b, j * k + f) = s(j, f);
      }
    }
  }
  save_archive(aligned, out);

  const Eigen::MatrixXd mean = post.mean_loadings();
  Eigen::VectorXd u_mean = Eigen::VectorXd::Zero(d);
  for (int b = 0; b < archive.draw_count(); ++b) u_mean += archive.uniqueness_at(b);
  u_mean /= std::max(1, archive.draw_count());
  {
    CsvWriter w(out / "loadings_mean.csv");
    std::vector<std::string> h{"dimension"};
    for (int f = 0; f < k; ++f) h.push_back("factor" + std::to_string(f + 1));
    h.push_back("uniqueness");
    w.row(h);
    for (int q = 0; q < d; ++q) {
      std::vector<std::string> row{archive.dim_names[q]};
      for (int f = 0; f < k; ++f) row.push_back(format_double(mean(q, f)));
      row.push_back(format_double(u_mean[q]));
      w.row(row);
    }
  }
  {
    // T_b audit: column f of the aligned draw is sign * column source of the varimax draw.
    CsvWriter w(out / "orientation.csv");
    std::vector<std::string> h{"chain", "iter"};
    for (int f = 0; f < k; ++f) {
      h.push_back("source" + std::to_string(f + 1));
      h.push_back("sign" + std::to_string(f + 1));
    }
    h.push_back("sq_distance_to_mean");
    w.row(h);
    for (int b = 0; b < archive.draw_count(); ++b) {
      std::vector<std::string> row{std::to_string(archive.chain[b] + 1), std::to_string(archive.iter[b])};
      for (int f = 0; f < k; ++f) {
        row.push_back(std::to_string(post.orientation[b].source[f] + 1));
        row.push_back(std::to_string(post.orientation[b].sign[f]));
      }
      row.push_back(format_double((post.loadings[b] - mean).squaredNorm()));
      w.row(row);
    }
  }
  {
    CsvWriter w(out / "varimax_loadings.csv");
    std::vector<std::string> h{"chain", "iter"};
    for (int q = 0; q < d; ++q) {
      for (int f = 0; f < k; ++f) h.push_back(archive.dim_names[q] + "/f" + std::to_string(f + 1));
    }
    w.row(h);
    for (int b = 0; b < archive.draw_count(); ++b) {
      std::vector<std::string> row{std::to_string(archive.chain[b] + 1), std::to_string(archive.iter[b])};
      for (int q = 0; q < d; ++q) {
        for (int f = 0; f < k; ++f) row.push_back(format_double(id.varimax[b](q, f)));
      }
      w.row(row);
    }
  }
  std::ostringstream text;
  text << "identified " << archive.draw_count() << " draws, K = " << k << '\n'
       << "pivot draw " << post.pivot_draw << ", converged after " << post.passes << " passes\n"
       << "final relabel:";
  for (int f = 0; f < k; ++f) {
    text << ' ' << (post.relabel.sign[f] < 0 ? '-' : '+') << post.relabel.source[f] + 1;
  }
  text << '\n' << "scores rotated: " << (archive.has_scores() ? "yes" : "no") << '\n';
  write_lines(out / "identify_summary.txt", text.str());
  log << text.str();
}

// -------------------------------------------------------------------- lpml

RunConfig lpml_config() { return RunConfig("lpml", {}); }

void cmd_lpml(const std::vector<fs::path>& inputs, const fs::path& out, std::ostream& log) {
  std::vector<std::pair<LpmlResult, DrawArchive>> results;
  for (const auto& in : inputs) {
    DrawArchive a = load_archive(in);
    LpmlResult r = lpml(a);
    results.emplace_back(std::move(r), std::move(a));
  }
  std::sort(results.begin(), results.end(),
            [](const auto& x, const auto& y) { return x.first.factors < y.first.factors; });
  CsvWriter w(out / "lpml.csv");
  w.row({"factors", "chain", "lpml"});
  CsvWriter s(out / "lpml_summary.csv");
  s.row({"factors", "average", "chain_sd", "chain_min", "chain_max", "unstable_events"});
  CsvWriter e(out / "log_cpo.csv");
  e.row({"factors", "event_id", "log_cpo"});
  for (const auto& [r, a] : results) {
    for (std::size_t c = 0; c < r.per_chain.size(); ++c) {
      w.row({std::to_string(r.factors), std::to_string(c + 1), format_double(r.per_chain[c])});
    }
    w.row({std::to_string(r.factors), "average", format_double(r.average)});
    s.row({std::to_string(r.factors), format_double(r.average), format_double(r.chain_sd),
           format_double(r.chain_min), format_double(r.chain_max), std::to_string(r.unstable_events.size())});
    for (std::size_t i = 0; i < r.log_cpo.size(); ++i) {
      e.row({std::to_string(r.factors), a.event_ids[i], format_double(r.log_cpo[i])});
    }
    log << "K = " << r.factors << ": average LPML " << std::fixed << std::setprecision(2) << r.average
        << " over " << r.per_chain.size() << " chains (range " << r.chain_min << " to " << r.chain_max
        << ")\n";
    if (!r.unstable_events.empty()) {
      log << "warning: K = " << r.factors << " has " << r.unstable_events.size()
          << " events with an unstable CPO estimate\n";
    }
  }
}

// ---------------------------------------------------------------- parallel

RunConfig parallel_config() {
  const ParallelOptions d;
  return RunConfig("parallel", {{"n_null", std::to_string(d.n_null)},
                                {"percentile", format_double(d.percentile)},
                                {"seed", std::to_string(d.seed)},
                                {"max_eigen", std::to_string(d.max_eigen)}});
}

void cmd_parallel(const RunConfig& cfg, const fs::path& input, const fs::path& out, int threads,
                  std::ostream& log) {
  const DrawArchive archive = load_archive(input);
  ParallelOptions opt;
  opt.n_null = cfg.get_int("n_null");
  opt.percentile = cfg.get_double("percentile");
  opt.seed = cfg.get_u64("seed");
  opt.max_eigen = cfg.get_int("max_eigen");
  opt.threads = threads;
  const EigenPosterior eig = eigens_of_corr(archive);
  const ParallelAnalysisResult r = horn_parallel(eig, archive.teachers(), opt);
  {
    CsvWriter w(out / "eigen.csv");
    w.row({"index", "mean", "lower", "upper", "threshold"});
    for (std::size_t i = 0; i < r.mean.size(); ++i) {
      w.row({std::to_string(i + 1), format_double(r.mean[i]), format_double(r.lower[i]),
             format_double(r.upper[i]), format_double(r.threshold[i])});
    }
  }
  std::ostringstream text;
  text << "selected = " << r.selected << "\nteachers = " << archive.teachers()
       << "\ndimensions = " << archive.dims() << "\ndraws = " << eig.values.rows()
       << "\nskipped_draws = " << eig.skipped << "\nn_null = " << opt.n_null
       << "\npercentile = " << format_double(opt.percentile) << '\n';
  if (r.small_sample) text << "warning = fewer teachers than dimensions; thresholds are unreliable\n";
  write_lines(out / "parallel_summary.txt", text.str());
  log << "parallel analysis selects K = " << r.selected << '\n';
}

// ------------------------------------------------------------------ stage2

RunConfig stage2_config() {
  return RunConfig("stage2", {{"measure", "", true},
                              {"name", ""},
                              {"reliability", "1"},
                              {"factors", "all"},
                              {"grid_points", "256"}});
}

std::vector<int> parse_factor_list(const std::string& value, int k) {
  std::vector<int> out;
  if (value == "all") {
    out.resize(k);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  for (const auto& item : split_list(value)) {
    long f = 0;
    try {
      f = parse_long(item);
    } catch (const ParseError&) {
      throw ConfigError("setting 'factors': expected 'all' or 1-based factor numbers, got '" + value + "'");
    }
    if (f < 1 || f > k) throw ConfigError("setting 'factors': factor " + item + " outside 1.." + std::to_string(k));
    out.push_back(static_cast<int>(f - 1));
  }
  return out;
}

void cmd_stage2(const RunConfig& cfg, const fs::path& input, const fs::path& out, std::ostream& log) {
  if (!fs::exists(input / "identify_summary.txt")) {
    throw ConfigError("stage2 needs aligned factor scores: " + input.string() +
                      " is not an output directory of 'befa identify'");
  }
  const DrawArchive a = load_archive(input);
  if (!a.has_scores()) throw ConfigError("stage2: archive holds no factor scores (fit with keep_scores = true)");
  const fs::path measure_path = cfg.get_path("measure");
  const std::string name = cfg.has("name") ? cfg.get("name") : measure_path.stem().string();
  const ExternalMeasure m = load_external_measure(measure_path, name, cfg.get_double("reliability"));
  const std::vector<int> factors = parse_factor_list(cfg.get("factors"), a.factors);
  const int points = cfg.get_int("grid_points");

  std::vector<Eigen::MatrixXd> draws;
  for (int b = 0; b < a.draw_count(); ++b) draws.push_back(a.scores_at(b));

  std::vector<DisattenuatedResult> results;
  for (const int f : factors) results.push_back(disattenuated_corr(draws, a.teacher_ids, m, f));

  {
    CsvWriter w(out / "stage2_draws.csv");
    std::vector<std::string> h{"chain", "iter"};
    for (const int f : factors) h.push_back("factor" + std::to_string(f + 1));
    w.row(h);
    for (int b = 0; b < a.draw_count(); ++b) {
      std::vector<std::string> row{std::to_string(a.chain[b] + 1), std::to_string(a.iter[b])};
      for (const auto& r : results) row.push_back(std::isnan(r.draws[b]) ? "NA" : format_double(r.draws[b]));
      w.row(row);
    }
  }
  CsvWriter s(out / "stage2_summary.csv");
  s.row({"measure", "factor", "reliability", "mean", "q025", "q975", "teachers_used", "teachers_missing",
         "undefined_draws", "beyond_one"});
  CsvWriter g(out / "stage2_density.csv");
  g.row({"measure", "factor", "bandwidth", "x", "density"});
  for (const auto& r : results) {
    const std::string fac = std::to_string(r.factor + 1);
    s.row({m.name, fac, format_double(m.reliability), format_double(r.mean), format_double(r.q025),
           format_double(r.q975), std::to_string(r.teachers_used), std::to_string(r.teachers_missing),
           std::to_string(r.undefined_draws), std::to_string(r.beyond_one)});
    const KdeGrid kde = kernel_density(r.draws, points);
    for (std::size_t i = 0; i < kde.x.size(); ++i) {
      g.row({m.name, fac, format_double(kde.bandwidth), format_double(kde.x[i]), format_double(kde.density[i])});
    }
    log << m.name << " vs factor " << fac << ": mean " << std::fixed << std::setprecision(3) << r.mean
        << ", 95% interval [" << r.q025 << ", " << r.q975 << "], " << r.teachers_used << " teachers\n";
    if (r.beyond_one > 0) {
      log << "warning: " << r.beyond_one << " draws for factor " << fac
          << " exceed 1 in absolute value after disattenuation (reported unclipped)\n";
    }
    if (r.teachers_missing > 0) {
      log << "warning: " << r.teachers_missing << " teachers have no " << m.name << " estimate\n";
    }
  }
}

// ------------------------------------------------------------------ report

RunConfig report_config() { return RunConfig("report", {}); }

std::vector<LpmlResult> read_lpml_csv(const fs::path& path) {
  CsvReader r(path);
  r.expect_header({"factors", "chain", "lpml"});
  std::map<int, LpmlResult> by_k;
  std::vector<std::string> f;
  while (r.next(f)) {
    if (f.size() != 3) throw ParseError("expected factors,chain,lpml", r.line());
    const int k = static_cast<int>(parse_long(f[0], r.line()));
    LpmlResult& res = by_k[k];
    res.factors = k;
    const double v = parse_double(f[2], r.line());
    if (f[1] == "average") {
      res.average = v;
    } else {
      res.per_chain.push_back(v);
    }
  }
  std::vector<LpmlResult> out;
  for (auto& [k, v] : by_k) out.push_back(std::move(v));
  return out;
}

ParallelAnalysisResult read_eigen(const fs::path& dir) {
  ParallelAnalysisResult r;
  CsvReader in(dir / "eigen.csv");
  in.expect_header({"index", "mean", "lower", "upper", "threshold"});
  std::vector<std::string> f;
  while (in.next(f)) {
    if (f.size() != 5) throw ParseError("expected 5 fields", in.line());
    r.mean.push_back(parse_double(f[1], in.line()));
    r.lower.push_back(parse_double(f[2], in.line()));
    r.upper.push_back(parse_double(f[3], in.line()));
    r.threshold.push_back(parse_double(f[4], in.line()));
  }
  if (fs::exists(dir / "parallel_summary.txt")) {
    for (const auto& kv : read_key_values(dir / "parallel_summary.txt")) {
      if (kv.key == "selected") r.selected = static_cast<int>(parse_long(kv.value, kv.line));
    }
  }
  return r;
}

void report_heatmap(const fs::path& dir, const fs::path& out, const std::string& tag, std::ostream& log) {
  CsvReader in(dir / "loadings_mean.csv");
  const auto header = in.read_header();
  if (header.size() < 3 || header.front() != "dimension" || header.back() != "uniqueness") {
    throw ParseError(dir.string() + "/loadings_mean.csv: unexpected header", 1);
  }
  const int k = static_cast<int>(header.size()) - 2;
  std::vector<std::string> dims;
  std::vector<std::vector<double>> rows;
  std::vector<double> u;
  std::vector<std::string> f;
  while (in.next(f)) {
    if (static_cast<int>(f.size()) != k + 2) throw ParseError("wrong field count", in.line());
    dims.push_back(f[0]);
    rows.emplace_back();
    for (int c = 0; c < k; ++c) rows.back().push_back(parse_double(f[c + 1], in.line()));
    u.push_back(parse_double(f.back(), in.line()));
  }
  Eigen::MatrixXd l(static_cast<Eigen::Index>(rows.size()), k);
  Eigen::VectorXd uv(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t q = 0; q < rows.size(); ++q) {
    for (int c = 0; c < k; ++c) l(static_cast<Eigen::Index>(q), c) = rows[q][c];
    uv[static_cast<Eigen::Index>(q)] = u[q];
  }
  const Eigen::MatrixXd share = variance_share(l, uv);
  write_lines(out / ("loading_heatmap" + tag + ".svg"), loading_heatmap_svg(share, dims));
  CsvWriter w(out / ("variance_share" + tag + ".csv"));
  std::vector<std::string> h{"dimension"};
  for (int c = 0; c < k; ++c) h.push_back("factor" + std::to_string(c + 1));
  w.row(h);
  for (std::size_t q = 0; q < dims.size(); ++q) {
    std::vector<std::string> row{dims[q]};
    for (int c = 0; c < k; ++c) row.push_back(format_double(share(static_cast<Eigen::Index>(q), c)));
    w.row(row);
  }
  log << "wrote loading_heatmap" << tag << ".svg\n";
}

void report_stage2(const fs::path& dir, std::vector<DensityCurve>& curves) {
  std::map<std::string, std::pair<double, double>> quant;
  std::string measure;
  {
    CsvReader in(dir / "stage2_summary.csv");
    const auto h = in.read_header();
    std::vector<std::string> f;
    while (in.next(f)) {
      if (f.size() != h.size()) throw ParseError("wrong field count", in.line());
      measure = f[0];
      quant["factor" + f[1]] = {parse_double(f[4], in.line()), parse_double(f[5], in.line())};
    }
  }
  CsvReader in(dir / "stage2_draws.csv");
  const auto h = in.read_header();
  std::vector<std::vector<double>> cols(h.size());
  std::vector<std::string> f;
  while (in.next(f)) {
    if (f.size() != h.size()) throw ParseError("wrong field count", in.line());
    for (std::size_t c = 2; c < f.size(); ++c) {
      if (f[c] != "NA") cols[c].push_back(parse_double(f[c], in.line()));
    }
  }
  for (std::size_t c = 2; c < h.size(); ++c) {
    DensityCurve curve;
    curve.label = measure + " / " + h[c];
    curve.grid = kernel_density(cols[c]);
    if (const auto it = quant.find(h[c]); it != quant.end()) {
      curve.q025 = it->second.first;
      curve.q975 = it->second.second;
    }
    curves.push_back(std::move(curve));
  }
}

void cmd_report(const std::vector<fs::path>& inputs, const fs::path& out, std::ostream& log) {
  std::vector<LpmlResult> lpml_rows;
  std::vector<DensityCurve> curves;
  int heatmaps = 0, eigens = 0, found = 0;
  for (const auto& dir : inputs) {
    if (!fs::is_directory(dir)) throw ConfigError("report input is not a directory: " + dir.string());
    if (fs::exists(dir / "lpml.csv")) {
      for (auto& r : read_lpml_csv(dir / "lpml.csv")) lpml_rows.push_back(std::move(r));
      ++found;
    }
    if (fs::exists(dir / "eigen.csv")) {
      const std::string tag = eigens ? "_" + std::to_string(eigens + 1) : "";
      write_lines(out / ("eigenvalues" + tag + ".svg"), eigen_svg(read_eigen(dir)));
      log << "wrote eigenvalues" << tag << ".svg\n";
      ++eigens;
      ++found;
    }
    if (fs::exists(dir / "loadings_mean.csv")) {
      report_heatmap(dir, out, heatmaps ? "_" + std::to_string(heatmaps + 1) : "", log);
      ++heatmaps;
      ++found;
    }
    if (fs::exists(dir / "stage2_draws.csv") && fs::exists(dir / "stage2_summary.csv")) {
      report_stage2(dir, curves);
      ++found;
    }
  }
  if (found == 0) throw ConfigError("report: no lpml, parallel, identify or stage2 outputs among the inputs");
  if (!lpml_rows.empty()) {
    write_lines(out / "lpml_vs_k.svg", lpml_svg(lpml_rows));
    log << "wrote lpml_vs_k.svg\n";
  }
  if (!curves.empty()) {
    write_lines(out / "stage2_density.svg", density_svg(curves, "disattenuated correlation"));
    log << "wrote stage2_density.svg\n";
  }
}

void add_common(CLI::App* sub, Common& c, bool seed = true) {
  sub->add_option("--config", c.config, "key = value config file");
  sub->add_option("--out", c.out, "output directory (default: fresh timestamped directory)");
  if (seed) sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--threads", c.threads, "worker threads (default: BEFA_THREADS, else all cores)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Permutation-invariant Bayesian exploratory factor analysis of ordinal ratings", "befa"};
  app.require_subcommand(1);
  Common common;

  auto* sim = app.add_subcommand("simulate", "simulate a synthetic study with known truth");
  add_common(sim, common);

  auto* fit = app.add_subcommand("fit", "run the Gibbs sampler and write a draw archive");
  add_common(fit, common);
  std::string data, schema, k, chains, iters, burn, thin;
  fit->add_option("--data", data, "long-format ratings CSV");
  fit->add_option("--schema", schema, "protocol schema file");
  fit->add_option("--k", k, "number of factors");
  fit->add_option("--chains", chains, "number of chains");
  fit->add_option("--iters", iters, "post-adaptation iterations per chain, burn-in included");
  fit->add_option("--burn", burn, "burn-in iterations");
  fit->add_option("--thin", thin, "keep every n-th draw");

  auto* ident = app.add_subcommand("identify", "varimax, signed-permutation alignment and score rotation");
  add_common(ident, common);
  std::string archive_dir;
  std::vector<std::string> anchors;
  ident->add_option("archive", archive_dir, "archive directory from 'fit'")->required();
  ident->add_option("--anchor", anchors, "dim=NAME:factor=k (repeatable)");

  auto* lp = app.add_subcommand("lpml", "log pseudo-marginal likelihood per archive");
  add_common(lp, common, false);
  std::vector<std::string> archives;
  lp->add_option("archives", archives, "archive directories, one per K")->required();

  auto* par = app.add_subcommand("parallel", "Horn's parallel analysis on the posterior eigenvalues");
  add_common(par, common);
  par->add_option("archive", archive_dir, "archive directory from 'fit'")->required();

  auto* st2 = app.add_subcommand("stage2", "disattenuated correlations with an external measure");
  add_common(st2, common, false);
  std::string measure, reliability;
  st2->add_option("identified", archive_dir, "output directory of 'identify'")->required();
  st2->add_option("--measure", measure, "CSV teacher_id,estimate");
  st2->add_option("--reliability", reliability, "reliability of the measure, in (0, 1]");

  auto* rep = app.add_subcommand("report", "SVG figures from lpml, parallel, identify and stage2 outputs");
  add_common(rep, common, false);
  std::vector<std::string> report_inputs;
  rep->add_option("inputs", report_inputs, "output directories of earlier commands")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  std::string command_line = "befa";
  for (const auto& a : args) command_line += " " + a;

  try {
    const int threads = resolve_threads(common.threads);
    if (sim->parsed()) {
      RunConfig cfg = prepare(simulate_config(), common);
      const fs::path dir = resolve_out(common.out, "simulate", {});
      cmd_simulate(cfg, dir, out);
      cfg.write(dir, command_line);
    } else if (fit->parsed()) {
      RunConfig cfg = prepare(fit_config(), common);
      if (!data.empty()) cfg.set("data", fs::absolute(data).string());
      if (!schema.empty()) cfg.set("schema", fs::absolute(schema).string());
      const std::pair<const char*, std::string*> flags[] = {
          {"factors", &k}, {"chains", &chains}, {"iters", &iters}, {"burn", &burn}, {"thin", &thin}};
      for (const auto& [key, value] : flags) {
        if (!value->empty()) cfg.set(key, *value);
      }
      sampler_config(cfg, threads);  // reject bad settings before creating the directory
      const fs::path dir = resolve_out(common.out, "fit", {});
      cfg.write(dir, command_line);
      cmd_fit(cfg, dir, threads, out);
    } else if (ident->parsed()) {
      RunConfig cfg = prepare(identify_config(), common);
      if (!anchors.empty()) {
        std::vector<std::string> all;
        if (cfg.has("anchors")) all = split_anchors(cfg.get("anchors"));
        all.insert(all.end(), anchors.begin(), anchors.end());
        cfg.set("anchors", join(all, "; "));
      }
      const fs::path dir = resolve_out(common.out, "identify", {archive_dir});
      cmd_identify(cfg, archive_dir, dir, threads, out);
      cfg.write(dir, command_line);
    } else if (lp->parsed()) {
      RunConfig cfg = prepare(lpml_config(), common);
      std::vector<fs::path> inputs(archives.begin(), archives.end());
      const fs::path dir = resolve_out(common.out, "lpml", inputs);
      cmd_lpml(inputs, dir, out);
      cfg.write(dir, command_line);
    } else if (par->parsed()) {
      RunConfig cfg = prepare(parallel_config(), common);
      const fs::path dir = resolve_out(common.out, "parallel", {archive_dir});
      cmd_parallel(cfg, archive_dir, dir, threads, out);
      cfg.write(dir, command_line);
    } else if (st2->parsed()) {
      RunConfig cfg = prepare(stage2_config(), common);
      if (!measure.empty()) cfg.set("measure", fs::absolute(measure).string());
      if (!reliability.empty()) cfg.set("reliability", reliability);
      const fs::path dir = resolve_out(common.out, "stage2", {archive_dir});
      cmd_stage2(cfg, archive_dir, dir, out);
      cfg.write(dir, command_line);
    } else if (rep->parsed()) {
      RunConfig cfg = prepare(report_config(), common);
      std::vector<fs::path> inputs(report_inputs.begin(), report_inputs.end());
      const fs::path dir = resolve_out(common.out, "report", inputs);
      cmd_report(inputs, dir, out);
      cfg.write(dir, command_line);
    }
  } catch (const ChainError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace befa::cli
