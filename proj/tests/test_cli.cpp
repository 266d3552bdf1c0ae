#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "befa/csv.hpp"
#include "commands.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result befa_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = befa::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int data_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = -1;  // header
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

std::string p(const fs::path& x) { return x.string(); }

}  // namespace

TEST_CASE("simulate, fit, identify, lpml, parallel, stage2 and report end to end") {
  TempDir tmp;
  write_file(tmp / "sim.txt", "teachers = 12\nraters = 4\n");
  const auto sim = befa_run({"simulate", "--config", p(tmp / "sim.txt"), "--seed", "5", "--out", p(tmp / "sim")});
  REQUIRE_MESSAGE(sim.code == 0, sim.err);
  for (const char* f : {"ratings.csv", "ratings_wide.csv", "schema.txt", "crossing.txt", "run_config.txt",
                        "truth/loadings.csv", "truth/factor_scores.csv", "truth/truth_config.txt"}) {
    CHECK_MESSAGE(fs::exists(tmp / "sim" / f), f);
  }
  // 12 teachers x 2 sections x 2 lessons x 3 segments, two protocols of four dims, >= 1 rating each
  CHECK(data_rows(tmp / "sim" / "ratings.csv") >= 12 * 12 * 2 * 4);
  CHECK(slurp(tmp / "sim" / "run_config.txt").find("seed = 5") != std::string::npos);

  const auto again = befa_run({"simulate", "--config", p(tmp / "sim.txt"), "--seed", "5", "--out", p(tmp / "sim2")});
  REQUIRE(again.code == 0);
  CHECK(slurp(tmp / "sim" / "ratings.csv") == slurp(tmp / "sim2" / "ratings.csv"));

  const std::string data = p(tmp / "sim" / "ratings.csv"), schema = p(tmp / "sim" / "schema.txt");
  write_file(tmp / "fit.txt", "adapt = 20\nkeep_event_loglik = true\n");
  for (const char* k : {"1", "2"}) {
    const auto fit = befa_run({"fit", "--config", p(tmp / "fit.txt"), "--data", data, "--schema", schema, "--k", k,
                               "--chains", "2", "--iters", "60", "--burn", "20", "--out",
                               p(tmp / (std::string("fit") + k))});
    REQUIRE_MESSAGE(fit.code == 0, fit.err);
  }
  const fs::path fit2 = tmp / "fit2";
  for (const char* f : {"meta", "loadings.csv", "scores.csv", "chains.csv", "rhat.csv", "fit_report.txt"}) {
    CHECK_MESSAGE(fs::exists(fit2 / f), f);
  }
  CHECK(data_rows(fit2 / "loadings.csv") == 80);
  CHECK(data_rows(fit2 / "rhat.csv") == 8 * 9 / 2 + 8);
  CHECK(slurp(fit2 / "run_config.txt").find("factors = 2") != std::string::npos);

  const auto id = befa_run({"identify", p(fit2), "--anchor", "dim=P1:a1:factor=1", "--out", p(tmp / "id")});
  REQUIRE_MESSAGE(id.code == 0, id.err);
  CHECK(data_rows(tmp / "id" / "orientation.csv") == 80);
  CHECK(data_rows(tmp / "id" / "loadings_mean.csv") == 8);
  {
    befa::CsvReader r(tmp / "id" / "loadings_mean.csv");
    std::vector<std::string> f;
    REQUIRE(r.next(f));  // header
    REQUIRE(r.next(f));
    CHECK(f[0] == "P1:a1");
    CHECK(std::stod(f[1]) > 0.0);
  }

  const auto lp = befa_run({"lpml", p(tmp / "fit1"), p(fit2), "--out", p(tmp / "lp")});
  REQUIRE_MESSAGE(lp.code == 0, lp.err);
  CHECK(data_rows(tmp / "lp" / "lpml.csv") == 2 * 3);

  write_file(tmp / "par.txt", "n_null = 2000\n");
  const auto par = befa_run({"parallel", p(fit2), "--config", p(tmp / "par.txt"), "--out", p(tmp / "par")});
  REQUIRE_MESSAGE(par.code == 0, par.err);
  CHECK(data_rows(tmp / "par" / "eigen.csv") == 8);
  CHECK(slurp(tmp / "par" / "parallel_summary.txt").find("selected = ") != std::string::npos);

  // measure equal to the first truth factor
  {
    befa::CsvReader r(tmp / "sim" / "truth" / "factor_scores.csv");
    std::vector<std::string> f;
    std::string text = "teacher_id,estimate\n";
    r.next(f);  // header
    while (r.next(f)) text += f[0] + "," + f[1] + "\n";
    write_file(tmp / "measure.csv", text);
  }
  const auto s2 = befa_run({"stage2", p(tmp / "id"), "--measure", p(tmp / "measure.csv"), "--reliability", "1",
                            "--out", p(tmp / "s2")});
  REQUIRE_MESSAGE(s2.code == 0, s2.err);
  CHECK(data_rows(tmp / "s2" / "stage2_summary.csv") == 2);
  CHECK(data_rows(tmp / "s2" / "stage2_draws.csv") > 0);

  const auto rep = befa_run({"report", p(tmp / "lp"), p(tmp / "par"), p(tmp / "id"), p(tmp / "s2"), "--out",
                             p(tmp / "rep")});
  REQUIRE_MESSAGE(rep.code == 0, rep.err);
  for (const char* f : {"lpml_vs_k.svg", "eigenvalues.svg", "loading_heatmap.svg", "stage2_density.svg"}) {
    CHECK_MESSAGE(fs::exists(tmp / "rep" / f), f);
  }

  SUBCASE("stage2 refuses a plain fit directory") {
    CHECK(befa_run({"stage2", p(fit2), "--measure", p(tmp / "measure.csv"), "--reliability", "1", "--out",
                    p(tmp / "bad")})
              .code != 0);
  }
  SUBCASE("outputs never overwrite an input directory") {
    const auto r = befa_run({"identify", p(fit2), "--out", p(fit2)});
    CHECK(r.code != 0);
  }
  SUBCASE("K = 0 fits are accepted but cannot be identified") {
    const auto fit0 = befa_run({"fit", "--data", data, "--schema", schema, "--k", "0", "--chains", "1", "--iters",
                                "10", "--burn", "5", "--out", p(tmp / "fit0")});
    REQUIRE_MESSAGE(fit0.code == 0, fit0.err);
    const auto r = befa_run({"identify", p(tmp / "fit0"), "--out", p(tmp / "id0")});
    CHECK(r.code != 0);
    CHECK(r.err.find("K = 0") != std::string::npos);
  }
}

TEST_CASE("unknown config keys fail naming the key") {
  TempDir tmp;
  write_file(tmp / "bad.txt", "teachers = 10\ncolour = blue\n");
  const auto r = befa_run({"simulate", "--config", p(tmp / "bad.txt"), "--out", p(tmp / "o")});
  CHECK(r.code != 0);
  CHECK(r.err.find("colour") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "o" / "ratings.csv"));
}

TEST_CASE("fit without a schema fails before writing outputs") {
  TempDir tmp;
  write_file(tmp / "r.csv", "event_id\n");
  const auto r = befa_run({"fit", "--data", p(tmp / "r.csv"), "--schema", p(tmp / "missing.txt"), "--out",
                           p(tmp / "o")});
  CHECK(r.code != 0);
  CHECK(r.err.find("schema") != std::string::npos);
  const auto bad = befa_run({"fit", "--data", p(tmp / "r.csv"), "--schema", p(tmp / "missing.txt"), "--burn",
                             "100", "--iters", "50", "--out", p(tmp / "o2")});
  CHECK(bad.code != 0);
  CHECK_FALSE(fs::exists(tmp / "o2"));
}

TEST_CASE("usage errors") {
  CHECK(befa_run({}).code != 0);
  CHECK(befa_run({"frobnicate"}).code != 0);
  CHECK(befa_run({"identify"}).code != 0);
  CHECK(befa_run({"--help"}).code == 0);
}
