#include "befa/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "befa/csv.hpp"
#include "befa/error.hpp"
#include "befa/ordinal.hpp"
#include "befa/rng.hpp"

namespace befa {

namespace {

// Square root factor R with R R' = cov; rejects matrices that are not PSD.
Eigen::MatrixXd psd_root(const Eigen::MatrixXd& cov, const char* what) {
  if (cov.rows() != cov.cols()) throw ConfigError(std::string(what) + " must be square");
  if (!cov.isApprox(cov.transpose(), 1e-12) && cov.norm() > 0) {
    throw ConfigError(std::string(what) + " must be symmetric");
  }
  if (cov.size() == 0) return cov;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw ConfigError(std::string(what) + " is not positive semidefinite");
  }
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Eigen::MatrixXd equicorrelated(int d, double variance, double corr) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(d, d, variance * corr);
  m.diagonal().setConstant(variance);
  return m;
}

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

}  // namespace

int TruthConfig::dimension_count() const {
  int d = 0;
  for (const auto& p : protocols) d += p.dim_count();
  return d;
}

void validate_truth(const TruthConfig& cfg) {
  try {
    validate_protocols(cfg.protocols);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  const int d = cfg.dimension_count();
  if (cfg.teachers < 1 || cfg.sections_per_teacher < 1 || cfg.lessons_per_section < 1 ||
      cfg.segments_per_lesson < 1 || cfg.raters < 1) {
    throw ConfigError("design counts must be positive");
  }
  if (cfg.double_rating_fraction < 0.0 || cfg.double_rating_fraction > 1.0) {
    throw ConfigError("double_rating_fraction must lie in [0, 1]");
  }
  if (cfg.loadings.rows() != d) throw ConfigError("loadings must have one row per dimension");
  if (cfg.uniqueness.size() != d) throw ConfigError("uniqueness must have one entry per dimension");
  if ((cfg.uniqueness.array() <= 0.0).any()) throw ConfigError("uniqueness entries must be positive");
  psd_root(cfg.section_cov, "section covariance");
  psd_root(cfg.lesson_cov, "lesson covariance");
  psd_root(cfg.rater_cov, "rater covariance");
  for (const auto* m : {&cfg.section_cov, &cfg.lesson_cov, &cfg.rater_cov}) {
    if (m->rows() != d) throw ConfigError("effect covariances must be D x D");
  }
  if (cfg.rater_lesson_cov.size() != cfg.protocols.size()) {
    throw ConfigError("one rater-by-lesson covariance per protocol required");
  }
  for (std::size_t p = 0; p < cfg.protocols.size(); ++p) {
    if (cfg.rater_lesson_cov[p].rows() != cfg.protocols[p].dim_count()) {
      throw ConfigError("rater-by-lesson covariance of " + cfg.protocols[p].name +
                        " must be D_P x D_P");
    }
    psd_root(cfg.rater_lesson_cov[p], "rater-by-lesson covariance");
  }
  Eigen::MatrixXd total = communality(cfg.loadings);
  total.diagonal() += cfg.uniqueness;
  if (Eigen::LLT<Eigen::MatrixXd>(total).info() != Eigen::Success) {
    throw ConfigError("loadings * loadings' + uniqueness is not positive definite");
  }
  if (static_cast<int>(cfg.cutpoints.size()) != d) {
    throw ConfigError("cutpoints needed for every dimension");
  }
  int q = 0;
  for (const auto& p : cfg.protocols) {
    for (int l = 0; l < p.dim_count(); ++l, ++q) {
      const auto& c = cfg.cutpoints[q];
      if (static_cast<int>(c.size()) != p.levels - 1) {
        throw ConfigError("dimension " + p.name + ":" + p.dims[l] + " needs " +
                          std::to_string(p.levels - 1) + " cutpoints");
      }
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (!std::isfinite(c[i]) || (i > 0 && c[i] <= c[i - 1])) {
          throw ConfigError("cutpoints of " + p.name + ":" + p.dims[l] +
                            " must be finite and strictly increasing");
        }
      }
    }
  }
}

TruthConfig desk_scale_config(std::uint64_t seed) {
  TruthConfig cfg;
  cfg.protocols = {ProtocolDef{"P1", {"a1", "a2", "a3", "a4"}, 4},
                   ProtocolDef{"P2", {"b1", "b2", "b3", "b4"}, 4}};
  cfg.seed = seed;
  cfg.loadings.resize(8, 2);
  // Both factors span both protocols.
  cfg.loadings << 0.90, 0.10,
                  0.80, 0.00,
                  0.10, 0.85,
                  0.00, 0.75,
                  0.85, 0.00,
                  0.75, 0.15,
                  0.00, 0.90,
                  0.15, 0.80;
  cfg.uniqueness = Eigen::VectorXd::Constant(8, 0.3);
  cfg.section_cov = equicorrelated(8, 0.08, 0.3);
  cfg.lesson_cov = equicorrelated(8, 0.12, 0.3);
  cfg.rater_cov = equicorrelated(8, 0.10, 0.2);
  cfg.rater_lesson_cov = {equicorrelated(4, 0.08, 0.3), equicorrelated(4, 0.08, 0.3)};
  for (int q = 0; q < 8; ++q) {
    const double shift = 0.05 * ((q % 3) - 1);
    cfg.cutpoints.push_back({0.3 + shift, 1.3 + shift, 2.4 + shift});
  }
  return cfg;
}

TruthConfig load_truth_config(const std::vector<KeyValue>& entries,
                              const std::filesystem::path& base_dir) {
  TruthConfig cfg = desk_scale_config();
  auto to_int = [](const KeyValue& kv) {
    try {
      return static_cast<int>(parse_long(kv.value, kv.line));
    } catch (const ParseError&) {
      throw ConfigError("config key '" + kv.key + "': expected an integer, got '" + kv.value + "'");
    }
  };
  auto to_list = [](const KeyValue& kv) {
    std::vector<double> out;
    try {
      for (const auto& item : split_list(kv.value, kv.line)) out.push_back(parse_double(item, kv.line));
    } catch (const ParseError&) {
      throw ConfigError("config key '" + kv.key + "': expected a list of numbers, got '" + kv.value + "'");
    }
    return out;
  };

  // Scalars first: the schema and factor count fix the shapes of the lists.
  std::vector<const KeyValue*> lists;
  for (const auto& kv : entries) {
    if (kv.key == "schema") {
      const std::filesystem::path path = std::filesystem::path(kv.value).is_absolute()
                                             ? std::filesystem::path(kv.value)
                                             : base_dir / kv.value;
      cfg.protocols = load_schema(path);
    } else if (kv.key == "seed") {
      try {
        cfg.seed = std::stoull(kv.value);
      } catch (const std::exception&) {
        throw ConfigError("config key 'seed': expected an unsigned integer, got '" + kv.value + "'");
      }
    } else if (kv.key == "teachers") {
      cfg.teachers = to_int(kv);
    } else if (kv.key == "sections_per_teacher") {
      cfg.sections_per_teacher = to_int(kv);
    } else if (kv.key == "lessons_per_section") {
      cfg.lessons_per_section = to_int(kv);
    } else if (kv.key == "segments_per_lesson") {
      cfg.segments_per_lesson = to_int(kv);
    } else if (kv.key == "raters") {
      cfg.raters = to_int(kv);
    } else if (kv.key == "double_rating_fraction") {
      const auto v = to_list(kv);
      if (v.size() != 1) throw ConfigError("config key 'double_rating_fraction': expected one number");
      cfg.double_rating_fraction = v[0];
    } else if (kv.key == "factors") {
      const int k = to_int(kv);
      if (k < 0) throw ConfigError("config key 'factors' must be nonnegative");
      cfg.loadings.conservativeResize(Eigen::NoChange, k);
    } else if (kv.key == "loadings" || kv.key == "uniqueness" || kv.key == "section_cov" ||
               kv.key == "lesson_cov" || kv.key == "rater_cov" ||
               kv.key.starts_with("rater_lesson_cov.") || kv.key.starts_with("cutpoints.")) {
      lists.push_back(&kv);
    } else {
      throw ConfigError("unknown config key '" + kv.key + "'");
    }
  }

  const int d = cfg.dimension_count();
  const auto k = cfg.loadings.cols();
  auto sized = [&](const KeyValue& kv, Eigen::Index rows, Eigen::Index cols) {
    const auto v = to_list(kv);
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
      throw ConfigError("config key '" + kv.key + "': expected " + std::to_string(rows * cols) +
                        " values, got " + std::to_string(v.size()));
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = v[static_cast<std::size_t>(i * cols + c)];
    }
    return m;
  };
  if (cfg.loadings.rows() != d) cfg.loadings = Eigen::MatrixXd::Zero(d, k);
  if (cfg.uniqueness.size() != d) cfg.uniqueness = Eigen::VectorXd::Constant(d, 0.3);
  for (auto* m : {&cfg.section_cov, &cfg.lesson_cov, &cfg.rater_cov}) {
    if (m->rows() != d) *m = Eigen::MatrixXd::Zero(d, d);
  }
  if (cfg.rater_lesson_cov.size() != cfg.protocols.size()) {
    cfg.rater_lesson_cov.clear();
    for (const auto& p : cfg.protocols) {
      cfg.rater_lesson_cov.push_back(Eigen::MatrixXd::Zero(p.dim_count(), p.dim_count()));
    }
  }
  if (static_cast<int>(cfg.cutpoints.size()) != d) cfg.cutpoints.assign(d, {});

  for (const KeyValue* kv : lists) {
    if (kv->key == "loadings") {
      cfg.loadings = sized(*kv, d, k);
    } else if (kv->key == "uniqueness") {
      cfg.uniqueness = sized(*kv, d, 1).col(0);
    } else if (kv->key == "section_cov") {
      cfg.section_cov = sized(*kv, d, d);
    } else if (kv->key == "lesson_cov") {
      cfg.lesson_cov = sized(*kv, d, d);
    } else if (kv->key == "rater_cov") {
      cfg.rater_cov = sized(*kv, d, d);
    } else if (kv->key.starts_with("rater_lesson_cov.")) {
      const std::string name = kv->key.substr(17);
      std::size_t p = 0;
      while (p < cfg.protocols.size() && cfg.protocols[p].name != name) ++p;
      if (p == cfg.protocols.size()) throw ConfigError("unknown config key '" + kv->key + "': no such protocol");
      const int dp = cfg.protocols[p].dim_count();
      cfg.rater_lesson_cov[p] = sized(*kv, dp, dp);
    } else {
      const std::string name = kv->key.substr(10);
      int q = 0;
      bool found = false;
      for (const auto& p : cfg.protocols) {
        for (const auto& dim : p.dims) {
          if (p.name + ":" + dim == name) {
            found = true;
            break;
          }
          ++q;
        }
        if (found) break;
      }
      if (!found) throw ConfigError("unknown config key '" + kv->key + "': no such dimension");
      cfg.cutpoints[q] = to_list(*kv);
    }
  }
  validate_truth(cfg);
  return cfg;
}

std::pair<RatingDataset, TruthRecord> simulate(const TruthConfig& cfg) {
  validate_truth(cfg);
  const int d = cfg.dimension_count();
  const int k = cfg.factors();
  Rng rng(cfg.seed);
  RatingDataset ds = make_empty_dataset(cfg.protocols);
  TruthRecord truth;

  const Eigen::MatrixXd root_section = psd_root(cfg.section_cov, "section covariance");
  const Eigen::MatrixXd root_lesson = psd_root(cfg.lesson_cov, "lesson covariance");
  const Eigen::MatrixXd root_rater = psd_root(cfg.rater_cov, "rater covariance");
  std::vector<Eigen::MatrixXd> root_cell;
  for (const auto& c : cfg.rater_lesson_cov) root_cell.push_back(psd_root(c, "rater-by-lesson covariance"));
  const Eigen::VectorXd sd_unique = cfg.uniqueness.cwiseSqrt();

  truth.factor_scores.resize(cfg.teachers, k);
  truth.teacher_effects.resize(cfg.teachers, d);
  for (int j = 0; j < cfg.teachers; ++j) {
    const Eigen::VectorXd eta = rng.normal_vector(k);
    const Eigen::VectorXd eps = sd_unique.cwiseProduct(rng.normal_vector(d));
    truth.factor_scores.row(j) = eta.transpose();
    truth.teacher_effects.row(j) = (cfg.loadings * eta + eps).transpose();
  }
  truth.rater_effects.resize(cfg.raters, d);
  for (int r = 0; r < cfg.raters; ++r) {
    truth.rater_effects.row(r) = (root_rater * rng.normal_vector(d)).transpose();
  }

  const int n_sections = cfg.teachers * cfg.sections_per_teacher;
  const int n_lessons = n_sections * cfg.lessons_per_section;
  truth.section_effects.resize(n_sections, d);
  truth.lesson_effects.resize(n_lessons, d);

  int section_no = 0, lesson_no = 0, event_no = 0;
  for (int j = 0; j < cfg.teachers; ++j) {
    const std::string tid = "T" + pad(j + 1, 4);
    for (int s = 0; s < cfg.sections_per_teacher; ++s, ++section_no) {
      const std::string sid = tid + "-S" + std::to_string(s + 1);
      truth.section_effects.row(section_no) = (root_section * rng.normal_vector(d)).transpose();
      for (int v = 0; v < cfg.lessons_per_section; ++v, ++lesson_no) {
        const std::string lid = sid + "-L" + std::to_string(v + 1);
        truth.lesson_effects.row(lesson_no) = (root_lesson * rng.normal_vector(d)).transpose();
        for (int p = 0; p < static_cast<int>(cfg.protocols.size()); ++p) {
          const auto& proto = cfg.protocols[p];
          std::vector<int> raters{rng.index(cfg.raters)};
          if (cfg.raters > 1 && rng.uniform() < cfg.double_rating_fraction) {
            int second = rng.index(cfg.raters - 1);
            if (second >= raters[0]) ++second;
            raters.push_back(second);
          }
          for (const int r : raters) {
            const Eigen::VectorXd cell = root_cell[p] * rng.normal_vector(proto.dim_count());
            truth.cells.push_back({lesson_no, r, p});
            truth.rater_lesson_effects.push_back(cell);
            for (int g = 0; g < cfg.segments_per_lesson; ++g) {
              std::vector<int> scores(proto.dim_count());
              std::vector<double> latent(proto.dim_count());
              for (int l = 0; l < proto.dim_count(); ++l) {
                const int q = ds.position_of[p][l];
                const double mu = truth.teacher_effects(j, q) + truth.section_effects(section_no, q) +
                                  truth.lesson_effects(lesson_no, q) + truth.rater_effects(r, q) + cell[l];
                latent[l] = mu + rng.normal();
                scores[l] = score_from_latent(latent[l], cfg.cutpoints[q], proto.levels);
              }
              add_event(ds, "E" + pad(++event_no, 6), tid, sid, lid,
                        lid + "-G" + std::to_string(g + 1), "R" + pad(r + 1, 2), p,
                        std::move(scores));
              truth.latent.push_back(std::move(latent));
            }
          }
        }
      }
    }
  }
  // Re-key rater rows and cells by the dataset's dense rater ids.
  RowMatrix by_number = truth.rater_effects;
  std::vector<int> dense(cfg.raters, -1);
  for (int r = 0; r < cfg.raters; ++r) dense[r] = ds.raters.find("R" + pad(r + 1, 2));
  truth.rater_effects.resize(ds.raters.size(), d);
  for (int r = 0; r < cfg.raters; ++r) {
    if (dense[r] >= 0) truth.rater_effects.row(dense[r]) = by_number.row(r);
  }
  for (auto& cell : truth.cells) cell.rater = dense[cell.rater];
  return {std::move(ds), std::move(truth)};
}

std::vector<int> invert_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size(), -1);
  for (std::size_t q = 0; q < perm.size(); ++q) {
    const int old = perm[q];
    if (old < 0 || old >= static_cast<int>(perm.size()) || inv[old] >= 0) {
      throw ValidationError("permutation is not a bijection");
    }
    inv[old] = static_cast<int>(q);
  }
  return inv;
}

RatingDataset permute_dimensions(const RatingDataset& ds, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != ds.dimension_count()) {
    throw ValidationError("permutation length must equal the dimension count");
  }
  const std::vector<int> inv = invert_permutation(perm);
  RatingDataset out = ds;
  for (auto& positions : out.position_of) {
    for (auto& q : positions) q = inv[q];
  }
  for (std::size_t q = 0; q < perm.size(); ++q) out.canonical_at[q] = ds.canonical_at[perm[q]];
  return out;
}

void write_truth(const TruthConfig& cfg, const TruthRecord& truth, const RatingDataset& ds,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int d = ds.dimension_count();
  const int k = cfg.factors();
  // Truth blocks are in canonical order whatever the dataset's current order.
  std::vector<std::string> dim_header;
  for (const auto& p : cfg.protocols) {
    for (const auto& name : p.dims) dim_header.push_back(p.name + ":" + name);
  }

  {
    CsvWriter w(dir / "loadings.csv");
    std::vector<std::string> h{"dimension"};
    for (int f = 0; f < k; ++f) h.push_back("factor" + std::to_string(f + 1));
    h.push_back("uniqueness");
    w.row(h);
    for (int q = 0; q < d; ++q) {
      std::vector<std::string> row{dim_header[q]};
      for (int f = 0; f < k; ++f) row.push_back(format_double(cfg.loadings(q, f)));
      row.push_back(format_double(cfg.uniqueness[q]));
      w.row(row);
    }
  }
  auto write_block = [&](const std::string& file, const std::string& id_col,
                         const std::vector<std::string>& ids, const auto& m,
                         const std::vector<std::string>& cols) {
    CsvWriter w(dir / file);
    std::vector<std::string> h{id_col};
    h.insert(h.end(), cols.begin(), cols.end());
    w.row(h);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<std::string> row{ids[static_cast<std::size_t>(i)]};
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(format_double(m(i, c)));
      w.row(row);
    }
  };
  std::vector<std::string> factor_cols;
  for (int f = 0; f < k; ++f) factor_cols.push_back("factor" + std::to_string(f + 1));
  write_block("factor_scores.csv", "teacher_id", ds.teachers.names(), truth.factor_scores, factor_cols);
  write_block("teacher_effects.csv", "teacher_id", ds.teachers.names(), truth.teacher_effects, dim_header);
  write_block("section_effects.csv", "section_id", ds.sections.names(), truth.section_effects, dim_header);
  write_block("lesson_effects.csv", "lesson_id", ds.lessons.names(), truth.lesson_effects, dim_header);
  write_block("rater_effects.csv", "rater_id", ds.raters.names(), truth.rater_effects, dim_header);
  {
    CsvWriter w(dir / "rater_lesson_effects.csv");
    w.row({"lesson_id", "rater_id", "protocol", "dimension", "value"});
    for (std::size_t c = 0; c < truth.cells.size(); ++c) {
      const auto& cell = truth.cells[c];
      const auto& proto = cfg.protocols[cell.protocol];
      for (int l = 0; l < proto.dim_count(); ++l) {
        w.row({ds.lessons.name(cell.lesson), ds.raters.name(cell.rater), proto.name, proto.dims[l],
               format_double(truth.rater_lesson_effects[c][l])});
      }
    }
  }
  {
    CsvWriter w(dir / "latent.csv");
    w.row({"event_id", "dimension", "latent"});
    for (int i = 0; i < ds.event_count(); ++i) {
      const auto& proto = ds.protocols[ds.events[i].protocol];
      for (int l = 0; l < proto.dim_count(); ++l) {
        w.row({ds.event_ids.name(i), proto.dims[l], format_double(truth.latent[i][l])});
      }
    }
  }
  std::ofstream out(dir / "truth_config.txt");
  out << "seed = " << cfg.seed << "\nteachers = " << cfg.teachers
      << "\nsections_per_teacher = " << cfg.sections_per_teacher
      << "\nlessons_per_section = " << cfg.lessons_per_section
      << "\nsegments_per_lesson = " << cfg.segments_per_lesson << "\nraters = " << cfg.raters
      << "\ndouble_rating_fraction = " << format_double(cfg.double_rating_fraction)
      << "\nfactors = " << k << '\n';
  auto matrix_line = [&](const char* key, const Eigen::MatrixXd& m) {
    out << key << " =";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        out << ((i || c) ? ", " : " ") << format_double(m(i, c));
      }
    }
    out << '\n';
  };
  matrix_line("loadings", cfg.loadings);
  matrix_line("uniqueness", cfg.uniqueness);
  matrix_line("section_cov", cfg.section_cov);
  matrix_line("lesson_cov", cfg.lesson_cov);
  matrix_line("rater_cov", cfg.rater_cov);
  for (std::size_t p = 0; p < cfg.protocols.size(); ++p) {
    matrix_line(("rater_lesson_cov." + cfg.protocols[p].name).c_str(), cfg.rater_lesson_cov[p]);
  }
  for (int q = 0; q < d; ++q) {
    out << "cutpoints." << dim_header[q] << " =";
    for (std::size_t i = 0; i < cfg.cutpoints[q].size(); ++i) {
      out << (i ? ", " : " ") << format_double(cfg.cutpoints[q][i]);
    }
    out << '\n';
  }
}

}  // namespace befa
