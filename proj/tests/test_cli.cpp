#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fklboost/cli.hpp"
#include "fklboost/mixture.hpp"
#include "fklboost/targets.hpp"

using namespace fklboost;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"fklboost"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "fklboost_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_small() {
  static const fs::path path = [] {
    const fs::path p = work_dir() / "small.json";
    std::ofstream out(p);
    out << R"({
      "schema_version": 1,
      "boost": {"steps_per_component": 60, "samples_per_batch": 50, "lr_mean": 0.05,
                "lr_scale": 0.05, "lr_gamma": 0.05, "init_sigma": 1.0,
                "init_heuristic_steps": 50, "rkl_warmstart_steps": 40,
                "weight_search_steps": 30, "weight_search_rounds": 2},
      "hmc": {"burn_in": 100, "adapt_steps": 80, "n_samples": 100}
    })";
    return p;
  }();
  return path.string();
}

nlohmann::json strip_wallclock(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  for (auto& it : j["iterations"]) it.erase("wallclock_ms");
  return j;
}

}  // namespace

TEST_CASE("fit: writes a proposal and a report with one record per iteration") {
  const std::string out = (work_dir() / "fit_a").string();
  const int code = run({"--config", config_small(), "fit", "--target", "cauchy", "--method",
                        "fkl-vb", "--k", "3", "--seed", "1", "--out", out});
  CHECK(code == 0);
  const MixtureProposal q = proposal_from_json(slurp(out + ".proposal.json"));
  CHECK(q.size() == 3);
  CHECK(q.dim() == 1);
  const nlohmann::json report = nlohmann::json::parse(slurp(out + ".report.json"));
  CHECK(report.at("iterations").size() == 3);
}

TEST_CASE("fit: identical invocations produce identical bytes modulo wallclock") {
  const std::string out_a = (work_dir() / "det_a").string();
  const std::string out_b = (work_dir() / "det_b").string();
  const std::vector<std::string> base = {"fit",  "--target", "cauchy", "--method", "fkl-vb",
                                         "--k",  "2",        "--seed", "7"};
  std::vector<std::string> a = {"--config", config_small()};
  a.insert(a.end(), base.begin(), base.end());
  a.insert(a.end(), {"--out", out_a});
  std::vector<std::string> b = {"--config", config_small()};
  b.insert(b.end(), base.begin(), base.end());
  b.insert(b.end(), {"--out", out_b});
  REQUIRE(run(a) == 0);
  REQUIRE(run(b) == 0);
  CHECK(slurp(out_a + ".proposal.json") == slurp(out_b + ".proposal.json"));
  CHECK(strip_wallclock(slurp(out_a + ".report.json")) ==
        strip_wallclock(slurp(out_b + ".report.json")));
}

TEST_CASE("fit: flag and config errors exit with code 2") {
  CHECK(run({"fit", "--method", "fkl-vb"}) == 2);  // missing --target
  CHECK(run({"--config", config_small(), "fit", "--target", "cauchy", "--method", "nope"}) == 2);
  CHECK(run({"--config", config_small(), "fit", "--target", "unknown-target"}) == 2);
  CHECK(run({"--config", config_small(), "fit", "--target", "cauchy", "--method", "fkl-vi",
             "--k", "3"}) == 2);

  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << R"({"schema_version": 1, "boost": {"learning_rate": 0.1}})";
  CHECK(run({"--config", bad.string(), "fit", "--target", "cauchy"}) == 2);

  const fs::path no_version = work_dir() / "nover.json";
  std::ofstream(no_version) << R"({"boost": {}})";
  CHECK(run({"--config", no_version.string(), "fit", "--target", "cauchy"}) == 2);
}

TEST_CASE("fit: numerical blowups exit with code 3") {
  const fs::path diverge = work_dir() / "diverge.json";
  std::ofstream(diverge) << R"({
    "schema_version": 1,
    "boost": {"steps_per_component": 60, "samples_per_batch": 20, "lr_mean": 1e300,
              "lr_scale": 1e300, "init_sigma": 1.0}
  })";
  const std::string out = (work_dir() / "div").string();
  CHECK(run({"--config", diverge.string(), "fit", "--target", "cauchy", "--method", "rkl-vi",
             "--k", "1", "--seed", "1", "--out", out}) == 3);
}

TEST_CASE("estimate: self-test gives centered moments and full ESS") {
  const fs::path prop = work_dir() / "self.proposal.json";
  MixtureProposal q;
  Component c;
  c.mean = {0.0, 0.0};
  c.root_scale = {1.0, 1.0};
  q.components = {c};
  q.weights = {1.0};
  std::ofstream(prop) << proposal_to_json(q);

  const fs::path out = work_dir() / "self_estimate.json";
  const int code = run({"estimate", "--proposal", prop.string(), "--target", "self",
                        "--samples", "4000", "--seed", "3", "--out", out.string()});
  REQUIRE(code == 0);
  const nlohmann::json j = nlohmann::json::parse(slurp(out));
  CHECK(j.at("ess").get<double>() == doctest::Approx(4000.0).epsilon(1e-9));
  CHECK(std::fabs(j.at("snis_fkl").get<double>()) < 1e-12);
  for (double m : j.at("mean").get<std::vector<double>>()) CHECK(std::fabs(m) < 0.1);

  // doubling the sample count doubles the (here exact) effective sample size
  const fs::path out2 = work_dir() / "self_estimate2.json";
  REQUIRE(run({"estimate", "--proposal", prop.string(), "--target", "self", "--samples", "8000",
               "--seed", "3", "--out", out2.string()}) == 0);
  const nlohmann::json j2 = nlohmann::json::parse(slurp(out2));
  CHECK(j2.at("ess").get<double>() / j.at("ess").get<double>() == doctest::Approx(2.0));
}

TEST_CASE("estimate: GMM-20 moments from a hand-built ideal proposal") {
  const Gmm20Spec spec = make_gmm20_spec();
  MixtureProposal q;
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    Component c;
    c.mean = spec.means[k];
    c.root_scale = {spec.scale, spec.scale};
    q.components.push_back(std::move(c));
  }
  q.weights = spec.weights;
  const fs::path prop = work_dir() / "gmm.proposal.json";
  std::ofstream(prop) << proposal_to_json(q);
  const fs::path out = work_dir() / "gmm_estimate.json";
  REQUIRE(run({"estimate", "--proposal", prop.string(), "--target", "gmm20", "--samples",
               "6000", "--seed", "5", "--out", out.string()}) == 0);
  const nlohmann::json j = nlohmann::json::parse(slurp(out));
  const Vec mean = j.at("mean").get<Vec>();
  const Vec truth = gmm20_mean(spec);
  CHECK(std::fabs(mean[0] - truth[0]) < 0.2);
  CHECK(std::fabs(mean[1] - truth[1]) < 0.2);
  CHECK(j.at("ess").get<double>() > 4000.0);
}

TEST_CASE("estimate: dimension mismatches exit with code 2") {
  const fs::path prop = work_dir() / "onedim.proposal.json";
  MixtureProposal q;
  Component c;
  c.mean = {0.0};
  c.root_scale = {1.0};
  q.components = {c};
  q.weights = {1.0};
  std::ofstream(prop) << proposal_to_json(q);
  CHECK(run({"estimate", "--proposal", prop.string(), "--target", "gmm20"}) == 2);
  CHECK(run({"estimate", "--proposal", "/does/not/exist.json", "--target", "cauchy"}) == 2);
}

TEST_CASE("experiment cauchy: curve rows for every seed, lane and size") {
  const std::string out = (work_dir() / "cauchy_exp").string();
  REQUIRE(run({"--config", config_small(), "experiment", "--name", "cauchy", "--seeds", "2",
               "--k", "2", "--seed", "4", "--out", out}) == 0);
  const std::string csv = slurp(out + ".curve.csv");
  CHECK(csv.rfind("k,seed,metric,value\n", 0) == 0);
  int lines = -1;  // don't count the header
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 2 * 2 * 2);
}

TEST_CASE("experiment blr: aggregate json plus per-split csv on the shipped fixture") {
  const std::string data = std::string(FKLBOOST_TEST_DATA_DIR) + "/synthetic_linear.csv";
  const std::string out = (work_dir() / "blr_exp").string();
  REQUIRE(run({"--config", config_small(), "experiment", "--name", "blr", "--data", data,
               "--splits", "2", "--prior", "gaussian", "--methods", "fkl_vi,hmc",
               "--eval-samples", "300", "--seed", "2", "--out", out}) == 0);
  const nlohmann::json agg = nlohmann::json::parse(slurp(out + ".aggregate.json"));
  CHECK(agg.contains("fkl_vi"));
  CHECK(agg.contains("hmc"));
  CHECK(agg.at("fkl_vi").at("n_splits") == 2);
  const std::string csv = slurp(out + ".results.csv");
  CHECK(csv.rfind("method,split,metric,value\n", 0) == 0);

  CHECK(run({"--config", config_small(), "experiment", "--name", "blr", "--data",
             "/missing.csv"}) == 2);
  CHECK(run({"--config", config_small(), "experiment", "--name", "bogus"}) == 2);
}

TEST_CASE("experiment blr: --dump-samples writes one CSV of draws per split") {
  const std::string data = std::string(FKLBOOST_TEST_DATA_DIR) + "/synthetic_linear.csv";
  const fs::path dump = work_dir() / "hmc_dump";
  const std::string out = (work_dir() / "blr_dump").string();
  REQUIRE(run({"--config", config_small(), "experiment", "--name", "blr", "--data", data,
               "--splits", "1", "--methods", "hmc", "--eval-samples", "100", "--seed", "2",
               "--out", out, "--dump-samples", dump.string()}) == 0);
  const std::string csv = slurp(dump / "hmc_split0.csv");
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 100);  // one row per draw
}

TEST_CASE("seed resolution: env fallback and flag-over-config precedence") {
  const std::string out_env = (work_dir() / "seed_env").string();
  const std::string out_flag = (work_dir() / "seed_flag").string();
  setenv("FKLBOOST_SEED", "9", 1);
  REQUIRE(run({"--config", config_small(), "fit", "--target", "cauchy", "--method", "rkl-vi",
               "--k", "1", "--out", out_env}) == 0);
  unsetenv("FKLBOOST_SEED");
  REQUIRE(run({"--config", config_small(), "fit", "--target", "cauchy", "--method", "rkl-vi",
               "--k", "1", "--seed", "9", "--out", out_flag}) == 0);
  CHECK(slurp(out_env + ".proposal.json") == slurp(out_flag + ".proposal.json"));

  // a config seed loses to an explicit flag; boost settings match config_small
  const fs::path seeded = work_dir() / "seeded.json";
  std::ofstream(seeded) << R"({
      "schema_version": 1, "seed": 5,
      "boost": {"steps_per_component": 60, "samples_per_batch": 50, "lr_mean": 0.05,
                "lr_scale": 0.05, "lr_gamma": 0.05, "init_sigma": 1.0,
                "init_heuristic_steps": 50, "rkl_warmstart_steps": 40,
                "weight_search_steps": 30, "weight_search_rounds": 2},
      "hmc": {"burn_in": 100, "adapt_steps": 80, "n_samples": 100}
    })";
  const std::string out_cfg = (work_dir() / "seed_cfg").string();
  REQUIRE(run({"--config", seeded.string(), "fit", "--target", "cauchy", "--method", "rkl-vi",
               "--k", "1", "--seed", "9", "--out", out_cfg}) == 0);
  CHECK(slurp(out_cfg + ".proposal.json") == slurp(out_flag + ".proposal.json"));
}

TEST_CASE("fit on the CSV-backed BLR targets smoke-runs") {
  const std::string data = std::string(FKLBOOST_TEST_DATA_DIR) + "/synthetic_linear.csv";
  const std::string out = (work_dir() / "fit_blr").string();
  REQUIRE(run({"--config", config_small(), "fit", "--target", "blr:" + data, "--method",
               "fkl-vi", "--k", "1", "--seed", "3", "--out", out}) == 0);
  const MixtureProposal q = proposal_from_json(slurp(out + ".proposal.json"));
  CHECK(q.dim() == 8);  // 5 features + bias + log alpha + log tau

  const std::string out_h = (work_dir() / "fit_blr_heavy").string();
  REQUIRE(run({"--config", config_small(), "fit", "--target", "blr-heavy:" + data, "--method",
               "rkl-vi", "--k", "1", "--seed", "3", "--out", out_h}) == 0);
  const MixtureProposal qh = proposal_from_json(slurp(out_h + ".proposal.json"));
  CHECK(qh.dim() == 7);  // 5 features + bias + log tau
}
