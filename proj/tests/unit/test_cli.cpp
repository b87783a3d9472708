#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "commands.hpp"
#include "config.hpp"
#include "doctest.h"
#include "record.hpp"
#include "vbmis/population.hpp"

using namespace vbmis;
using namespace vbmis::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vbmis_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

// Strict reader for the results and summary tables: the header must match
// the expected column set exactly.
std::vector<std::map<std::string, std::string>> read_csv(const std::string& text,
                                                         const std::vector<std::string>& columns) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  for (const auto& h : header) {
    if (std::find(columns.begin(), columns.end(), h) == columns.end()) throw std::runtime_error("unknown column " + h);
  }
  if (header != columns) throw std::runtime_error("header mismatch");
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::map<std::string, std::string> row;
    std::size_t i = 0;
    while (std::getline(ss, cell, ',')) {
      if (i >= header.size()) throw std::runtime_error("too many cells");
      row[header[i++]] = cell;
    }
    if (i != header.size()) throw std::runtime_error("too few cells");
    rows.push_back(row);
  }
  return rows;
}

const std::vector<std::string> kResultCols = {"scenario", "n", "rep", "method", "metric", "value", "se", "failed"};
const std::vector<std::string> kSummaryCols = {"scenario", "n", "method", "metric", "mean", "sd", "count", "failed"};

std::string strip_created(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("created", 0) != 0) out += line + "\n";
  }
  return out;
}

PopulationSummary population(const Mat& V, const Vec& ts) {
  PopulationSummary s;
  s.theta_star = ts;
  s.theta_star_se = Vec::Constant(ts.size(), 1e-3);
  s.V = V;
  s.S = V;
  s.sandwich = V.inverse();
  s.V_se = s.S_se = s.gap_se = Mat::Zero(V.rows(), V.cols());
  s.mc_draws = 1000;
  return s;
}

std::map<std::string, double> diagnose_values(const fs::path& dir) {
  std::map<std::string, double> out;
  for (const auto& r : read_csv(slurp(dir / "diagnose.csv"), {"quantity", "coordinate", "value"})) {
    const std::string key = r.at("coordinate") == "na" ? r.at("quantity") : r.at("quantity") + "[" + r.at("coordinate") + "]";
    out[key] = std::stod(r.at("value"));
  }
  return out;
}

}  // namespace

TEST_CASE("config parsing diagnostics") {
  SUBCASE("unknown key names line and field") {
    std::istringstream in("scenario.name = count_regression\n# comment\nvb.stepsize = 0.1\n");
    try {
      parse_config(in);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.line() == 3);
      CHECK(e.field() == "vb.stepsize");
    }
  }
  SUBCASE("bad value") {
    std::istringstream in("scenario.name = count_regression\nexperiment.reps = many\n");
    try {
      parse_config(in);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.line() == 2);
      CHECK(e.field() == "experiment.reps");
    }
  }
  SUBCASE("duplicate key") {
    std::istringstream in("scenario.name = count_regression\nscenario.name = mixture_t\n");
    CHECK_THROWS_AS(parse_config(in), ConfigError);
  }
  SUBCASE("unknown scenario") {
    std::istringstream in("scenario.name = lda\n");
    CHECK_THROWS_AS(parse_config(in), ConfigError);
  }
  SUBCASE("missing scenario") {
    std::istringstream in("experiment.reps = 3\n");
    try {
      parse_config(in);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "scenario.name");
    }
  }
  SUBCASE("lists and resolved dump round trip") {
    std::istringstream in("scenario.name = mixture_t\nscenario.centers = -3, 0 3\nexperiment.n_grid = 10 20,30\n");
    const RunConfig c = parse_config(in);
    CHECK(c.scenario.centers == std::vector<double>{-3, 0, 3});
    CHECK(c.experiment.n_grid == std::vector<std::size_t>{10, 20, 30});
    const std::string dumped = dump_config(c);
    std::istringstream again(dumped);
    CHECK(dump_config(parse_config(again)) == dumped);
  }
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("missing scenario gives exit code 2 and names the field") {
  const fs::path dir = scratch("missing");
  const fs::path cfg = write_file(dir / "bad.cfg", "experiment.reps = 1\n");
  std::string err;
  CHECK(run({"theta-star", "--config", cfg.string(), "--out", dir.string()}, nullptr, &err) == 2);
  CHECK(err.find("scenario.name") != std::string::npos);
  CHECK(run({"theta-star"}, nullptr, &err) == 2);
  CHECK(run({"no-such-command"}, nullptr, &err) == 2);
}

TEST_CASE("theta-star on the well-specified control") {
  const fs::path dir = scratch("theta");
  const fs::path cfg = write_file(dir / "ctl.cfg",
                                  "scenario.name = well_specified\npopulation.mc_draws = 50000\npopulation.seed = 5\n");
  REQUIRE(run({"theta-star", "--config", cfg.string(), "--out", (dir / "a").string()}) == 0);
  REQUIRE(run({"theta-star", "--config", cfg.string(), "--out", (dir / "b").string()}) == 0);
  const Record r = Record::load((dir / "a" / "population.record").string());
  CHECK(r.kind() == "population");
  const Vec th = r.get_vec("theta_star"), se = r.get_vec("theta_star_se");
  const std::vector<double> truth = {0.3, -0.5};
  for (int j = 0; j < 2; ++j) CHECK(std::abs(th[j] - truth[static_cast<std::size_t>(j)]) <= 3.0 * se[j]);

  const std::string a = slurp(dir / "a" / "population.record"), b = slurp(dir / "b" / "population.record");
  CHECK(a.find("\ncreated") != std::string::npos);
  CHECK(strip_created(a) == strip_created(b));

  const std::string manifest = slurp(dir / "a" / "manifest.txt");
  CHECK(manifest.find("manifest.config_hash") != std::string::npos);
  CHECK(manifest.find("manifest.tool_version = 0.1.0") != std::string::npos);
  CHECK(manifest.find("population.seed = 5") != std::string::npos);
}

TEST_CASE("experiment smoke run") {
  const fs::path dir = scratch("experiment");
  const fs::path cfg = write_file(dir / "exp.cfg",
                                  "scenario.name = count_regression\n"
                                  "experiment.n_grid = 100\n"
                                  "experiment.reps = 1\n"
                                  "experiment.base_seed = 3\n"
                                  "experiment.test_size = 200\n"
                                  "experiment.pred_draws = 200\n"
                                  "population.mc_draws = 20000\n"
                                  "mcmc.burn_in = 500\n"
                                  "mcmc.kept = 500\n");
  REQUIRE(run({"experiment", "--config", cfg.string(), "--out", dir.string()}) == 0);
  const auto rows = read_csv(slurp(dir / "results.csv"), kResultCols);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : rows) {
    CHECK(r.at("failed") == "0");
    seen.insert({r.at("method"), r.at("metric")});
  }
  CHECK(rows.size() == 12);
  CHECK(seen.size() == 12);
  for (const auto& method : {"vb", "mcmc"}) {
    for (std::string_view metric : kMetricNames) CHECK(seen.count({method, std::string(metric)}) == 1);
  }
  CHECK(read_csv(slurp(dir / "summary.csv"), kSummaryCols).size() == 1 * 2 * 6);
  CHECK(fs::exists(dir / "manifest.txt"));
  CHECK(fs::exists(dir / "population.record"));
  CHECK(slurp(dir / "manifest.txt").find("scenario.nb_r = 5") != std::string::npos);


  // The strict reader rejects an extra column.
  std::string text = slurp(dir / "results.csv");
  text.replace(text.find("failed"), 6, "failed,extra");
  CHECK_THROWS(read_csv(text, kResultCols));
}

TEST_CASE("summary row count over an n grid") {
  ExperimentTable t;
  for (std::size_t n : {10, 20, 40}) {
    for (int rep = 0; rep < 2; ++rep) {
      for (std::string_view method : kMethodNames) {
        for (std::string_view metric : kMetricNames) {
          t.rows.push_back({"count_regression", n, rep, std::string(method), std::string(metric), 1.0, 0.1, false});
        }
      }
    }
  }
  std::ostringstream os;
  write_summary_csv(os, summarize(t));
  CHECK(read_csv(os.str(), kSummaryCols).size() == 3 * 2 * 6);
  std::ostringstream rs;
  t.rows.front().value = std::nan("");
  write_results_csv(rs, t);
  const auto rows = read_csv(rs.str(), kResultCols);
  CHECK(rows.size() == t.rows.size());
  CHECK(rows.front().at("value") == "na");
}

TEST_CASE("diagnose") {
  const fs::path dir = scratch("diagnose");
  const std::size_t n = 400;
  const Vec ts = Vec::Zero(2);

  SUBCASE("fit equal to the mean-field limit, correlated V") {
    Mat V(2, 2);
    V << 2, 1, 1, 2;
    population_record(population(V, ts)).save((dir / "pop.record").string());
    const Vec sd = (V.diagonal() * static_cast<double>(n)).cwiseInverse().cwiseSqrt();
    FitReport rep;
    fit_record(MeanFieldGaussian(ts, sd.array().log().matrix()), rep).save((dir / "fit.record").string());
    REQUIRE(run({"diagnose", "--population", (dir / "pop.record").string(), "--fit", (dir / "fit.record").string(),
                 "--n", std::to_string(n), "--out", dir.string()}) == 0);
    const auto v = diagnose_values(dir);
    CHECK(v.at("tv_meanfield_limit") <= 1e-3);
    CHECK(v.at("tv_exact_limit") > 1e-2);
    CHECK(std::abs(v.at("entropy_gap") - 0.143841036225890) <= 1e-9);
    CHECK(std::abs(v.at("kl_meanfield_limit")) <= 1e-12);
    CHECK(v.at("mu[0]") == 0.0);
    CHECK(v.at("sandwich_ci_hi[1]") > 0.0);
  }
  SUBCASE("diagonal V gives equal TV to both flavors") {
    Mat V(2, 2);
    V << 3, 0, 0, 0.5;
    population_record(population(V, ts)).save((dir / "pop.record").string());
    Vec mu(2), ls(2);
    mu << 0.01, -0.02;
    ls << -3.0, -2.5;
    fit_record(MeanFieldGaussian(mu, ls), FitReport{}).save((dir / "fit.record").string());
    REQUIRE(run({"diagnose", "--population", (dir / "pop.record").string(), "--fit", (dir / "fit.record").string(),
                 "--n", std::to_string(n), "--out", dir.string()}) == 0);
    const auto v = diagnose_values(dir);
    CHECK(std::abs(v.at("tv_meanfield_limit") - v.at("tv_exact_limit")) <= 1e-10);
    CHECK(std::abs(v.at("entropy_gap")) <= 1e-12);
  }
  SUBCASE("dimension mismatch") {
    population_record(population(Mat::Identity(2, 2), ts)).save((dir / "pop.record").string());
    fit_record(MeanFieldGaussian(Vec::Zero(1), Vec::Zero(1)), FitReport{}).save((dir / "fit.record").string());
    std::string err;
    CHECK(run({"diagnose", "--population", (dir / "pop.record").string(), "--fit", (dir / "fit.record").string(),
               "--n", "10"},
              nullptr, &err) == 1);
    CHECK(err.find("dimension") != std::string::npos);
  }
}

TEST_CASE("record round trip") {
  Record r("demo");
  Vec v(3);
  v << 1.0 / 3.0, -2e-300, 7.0;
  Mat m(2, 2);
  m << 1, 2, 3, 4;
  r.set("v", v);
  r.set("m", m);
  r.set("x", 0.1);
  r.set("s", "hello world");
  std::stringstream ss;
  r.write(ss);
  const Record back = Record::read(ss);
  CHECK(back.kind() == "demo");
  CHECK(back.get_vec("v") == v);
  CHECK(back.get_mat("m") == m);
  CHECK(back.get_double("x") == 0.1);
  CHECK(back.get("s") == "hello world");
  CHECK_THROWS_AS(back.get("missing"), RecordError);
  std::istringstream junk("not a record\n");
  CHECK_THROWS_AS(Record::read(junk), RecordError);
}
