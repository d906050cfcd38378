#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "json.hpp"
#include "telto/checkpoint.hpp"
#include "telto/csv.hpp"
#include "telto/framework.hpp"
#include "telto/topology.hpp"

using namespace telto;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string output;
};

const fs::path& root_dir() {
  static const fs::path root = [] {
    const fs::path dir = fs::temp_directory_path() / "telto_test_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }();
  return root;
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = root_dir() / ("cmd" + std::to_string(counter++) + ".log");
  const std::string command =
      std::string(TELTO_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(command.c_str());
  CmdResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream buf;
  buf << in.rdbuf();
  result.output = buf.str();
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("help, version and argument errors") {
  const CmdResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.output.find("generate") != std::string::npos);
  CHECK(help.output.find("pretrain") != std::string::npos);
  CHECK(help.output.find("predict") != std::string::npos);

  const CmdResult version = run_cli("--version");
  CHECK(version.code == 0);
  CHECK(version.output.find("telto 0.1.0") != std::string::npos);

  CHECK(run_cli("").code == 2);               // a subcommand is required
  CHECK(run_cli("frobnicate").code == 2);     // unknown subcommand
  CHECK(run_cli("pretrain").code == 2);       // missing required options
  CHECK(run_cli("generate").code == 2);       // --out required without --show-config
  CHECK(run_cli("pretrain --data /nonexistent -o " + (root_dir() / "x").string() +
                " --dtype f16")
            .code == 2);  // dtype outside the accepted set

  // Runtime failures (bad paths) exit 1.
  const CmdResult bad = run_cli("pretrain --data /nonexistent -o " + (root_dir() / "x").string());
  CHECK(bad.code == 1);
  CHECK(bad.output.find("error:") != std::string::npos);

  // analyze insists on exactly one mode, before touching the data.
  CHECK(run_cli("analyze --data /nonexistent -o " + (root_dir() / "x").string()).code == 2);
  CHECK(run_cli("analyze --data /nonexistent -o " + (root_dir() / "x").string() +
                " --stats --hist 4")
            .code == 2);
}

TEST_CASE("generate writes a complete, reproducible dataset") {
  const fs::path root = root_dir();
  const std::string gen1 = (root / "gen1").string();
  const CmdResult r1 = run_cli("generate -o " + gen1 + " --days 1 --seed 3");
  REQUIRE(r1.code == 0);
  CHECK(fs::exists(fs::path(gen1) / "topology.json"));
  CHECK(fs::exists(fs::path(gen1) / "records.csv"));
  CHECK(fs::exists(fs::path(gen1) / "gct_flows.csv"));
  CHECK(fs::exists(fs::path(gen1) / "mobility_flows.csv"));
  CHECK(fs::exists(fs::path(gen1) / "run_config.json"));

  const RoadTopology topo = load_topology((fs::path(gen1) / "topology.json").string());
  CHECK(topo.segment_count() == 12);
  CHECK(topo.route_count() == 20);
  const FlowSeries gct = read_flows_csv((fs::path(gen1) / "gct_flows.csv").string(), FlowKind::gct);
  CHECK(gct.entity_count == 12);
  CHECK(gct.steps() == 96);
  const FlowSeries mob =
      read_flows_csv((fs::path(gen1) / "mobility_flows.csv").string(), FlowKind::mobility);
  CHECK(mob.entity_count == 20);

  const nlohmann::json run = nlohmann::json::parse(slurp(fs::path(gen1) / "run_config.json"));
  CHECK(run.at("command") == "generate");
  CHECK(run.at("seed") == 3);
  CHECK(run.at("generator").at("days") == 1);

  // Same seed, same bytes; different seed, different bytes.
  const std::string gen2 = (root / "gen2").string();
  REQUIRE(run_cli("generate -o " + gen2 + " --days 1 --seed 3").code == 0);
  CHECK(slurp(fs::path(gen1) / "gct_flows.csv") == slurp(fs::path(gen2) / "gct_flows.csv"));
  CHECK(slurp(fs::path(gen1) / "records.csv") == slurp(fs::path(gen2) / "records.csv"));
  const std::string gen3 = (root / "gen3").string();
  REQUIRE(run_cli("generate -o " + gen3 + " --days 1 --seed 4").code == 0);
  CHECK(slurp(fs::path(gen1) / "gct_flows.csv") != slurp(fs::path(gen3) / "gct_flows.csv"));

  // --no-records drops the raw stream but keeps the flows.
  const std::string gen4 = (root / "gen4").string();
  REQUIRE(run_cli("generate -o " + gen4 + " --days 1 --seed 3 --no-records").code == 0);
  CHECK(!fs::exists(fs::path(gen4) / "records.csv"));
  CHECK(slurp(fs::path(gen1) / "gct_flows.csv") == slurp(fs::path(gen4) / "gct_flows.csv"));

  // --show-config resolves the config without writing anything.
  const CmdResult show = run_cli("generate --show-config --days 2 --noise 0");
  CHECK(show.code == 0);
  CHECK(show.output.find("\"days\": 2") != std::string::npos);
  CHECK(show.output.find("\"noise_level\": 0.0") != std::string::npos);

  // Config file applies under explicit flags.
  const fs::path cfg = root / "gen_cfg.json";
  std::ofstream(cfg) << R"({"generator": {"days": 2, "noise_level": 0.0}})";
  const CmdResult merged =
      run_cli("generate --show-config --config " + cfg.string() + " --days 1");
  CHECK(merged.code == 0);
  CHECK(merged.output.find("\"days\": 1") != std::string::npos);          // flag wins
  CHECK(merged.output.find("\"noise_level\": 0.0") != std::string::npos);  // file applies
}

TEST_CASE("end-to-end pipeline through the command line") {
  const fs::path root = root_dir();
  const std::string data = (root / "data").string();
  REQUIRE(run_cli("generate -o " + data + " --days 1 --seed 5 --no-records").code == 0);

  // Stage 1.
  const std::string s1 = (root / "s1").string();
  const CmdResult pre = run_cli("pretrain --data " + data + " -o " + s1 +
                                " --dtype f64 --channels 4 --layers 1 --head-hidden 8"
                                " --epochs 2 --patience 0 --batch 8 --seed 2");
  REQUIRE(pre.code == 0);
  REQUIRE(fs::exists(fs::path(s1) / "stage1.json"));
  const Stage1Model<double> stage1 = load_stage1<double>((fs::path(s1) / "stage1.json").string());
  CHECK(stage1.backbone.config().channels == 4);
  CHECK(stage1.backbone.config().input_steps == 8);
  CHECK(stage1.backbone.config().horizon == 4);
  CHECK(stage1.log.epochs.size() == 2);
  const nlohmann::json pre_run = nlohmann::json::parse(slurp(fs::path(s1) / "run_config.json"));
  CHECK(pre_run.at("command") == "pretrain");
  CHECK(pre_run.at("backbone").at("channels") == 4);
  CHECK(pre_run.at("train").at("max_epochs") == 2);
  CHECK(pre_run.at("window").at("t_in") == 8);

  // Stage 2 requires a stage-1 checkpoint unless the ablation drops it.
  const std::string fw = (root / "fw").string();
  const CmdResult missing = run_cli("train --data " + data + " -o " + fw);
  CHECK(missing.code == 1);
  CHECK(missing.output.find("--stage1 is required") != std::string::npos);

  const CmdResult trn = run_cli("train --data " + data + " --stage1 " + s1 + "/stage1.json -o " +
                                fw +
                                " --dtype f64 --stage2-layers 1 --head-hidden 8"
                                " --epochs 2 --patience 0 --batch 8 --seed 2");
  REQUIRE(trn.code == 0);
  REQUIRE(fs::exists(fs::path(fw) / "framework.json"));
  const RoadTopology topo = load_topology((fs::path(data) / "topology.json").string());
  const FrameworkModel<double> model =
      load_framework<double>((fs::path(fw) / "framework.json").string(), stage1, topo);
  CHECK(model.channels() == 4);
  CHECK(model.horizon() == 4);
  const nlohmann::json trn_run = nlohmann::json::parse(slurp(fs::path(fw) / "run_config.json"));
  CHECK(trn_run.at("command") == "train");
  CHECK(trn_run.at("framework").at("stage2").at("layers") == 1);

  // Evaluation in markdown format adds the .md rendering.
  const std::string ev = (root / "ev").string();
  const CmdResult eval = run_cli("evaluate --data " + data + " --checkpoint " + fw +
                                 "/framework.json --stage1 " + s1 + "/stage1.json -o " + ev +
                                 " --format markdown");
  REQUIRE(eval.code == 0);
  CHECK(eval.output.find("test MAE") != std::string::npos);
  CHECK(fs::exists(fs::path(ev) / "metrics.json"));
  CHECK(fs::exists(fs::path(ev) / "metrics.csv"));
  CHECK(fs::exists(fs::path(ev) / "metrics.md"));
  const nlohmann::json metrics = nlohmann::json::parse(slurp(fs::path(ev) / "metrics.json"));
  CHECK(metrics.at("entities") == 20);
  CHECK(metrics.at("per_horizon").size() == 4);
  CHECK(metrics.at("overall").at("mae").is_number());
  CHECK(metrics.at("overall").at("mae").get<double>() >= 0.0);

  // Forecasts from a flows CSV.
  const std::string pr = (root / "pr").string();
  const CmdResult prd = run_cli("predict --checkpoint " + fw + "/framework.json --stage1 " + s1 +
                                "/stage1.json --flows " + data + "/gct_flows.csv --topology " +
                                data + "/topology.json -o " + pr);
  REQUIRE(prd.code == 0);
  const std::string preds = slurp(fs::path(pr) / "predictions.csv");
  CHECK(preds.rfind("forecast_timestamp,horizon_step,", 0) == 0);
  CHECK(line_count(preds) == 1 + (96 - 8 + 1) * 4);

  // Analysis modes.
  const std::string an = (root / "an").string();
  REQUIRE(run_cli("analyze --data " + data + " -o " + an + " --stats").code == 0);
  const nlohmann::json stats = nlohmann::json::parse(slurp(fs::path(an) / "stats.json"));
  CHECK(stats.at("gct").at("entities") == 12);
  CHECK(stats.at("mobility").at("entities") == 20);
  CHECK(stats.at("gct").at("grand_mean").is_number());

  const std::string hist = (root / "an_hist").string();
  REQUIRE(run_cli("analyze --data " + data + " -o " + hist + " --hist 5 --flow gct").code == 0);
  const std::string hist_csv = slurp(fs::path(hist) / "hist.csv");
  CHECK(hist_csv.rfind("bin_lo,bin_hi,count", 0) == 0);
  CHECK(line_count(hist_csv) == 6);
  CHECK(fs::exists(fs::path(hist) / "hist.json"));

  const std::string radar = (root / "an_radar").string();
  REQUIRE(run_cli("analyze --data " + data + " -o " + radar + " --radar 2 --day 0").code == 0);
  CHECK(fs::exists(fs::path(radar) / "radar.json"));
  CHECK(slurp(fs::path(radar) / "radar.csv").rfind("route,hops,r", 0) == 0);

  // Weekly profiles need a week of data.
  CHECK(run_cli("analyze --data " + data + " -o " + (root / "an_bad").string() + " --weekly 0")
            .code == 1);
  const std::string data7 = (root / "data7").string();
  REQUIRE(run_cli("generate -o " + data7 + " --days 7 --seed 6 --no-records").code == 0);
  const std::string weekly = (root / "an_weekly").string();
  REQUIRE(run_cli("analyze --data " + data7 + " -o " + weekly + " --weekly 0").code == 0);
  const std::string weekly_csv = slurp(fs::path(weekly) / "weekly.csv");
  CHECK(weekly_csv.rfind("weekday", 0) == 0);
  CHECK(line_count(weekly_csv) == 8);  // header + seven weekdays
}

TEST_CASE("config files merge under explicit flags") {
  const fs::path root = root_dir();
  const std::string data = (root / "data").string();
  REQUIRE(fs::exists(fs::path(data) / "gct_flows.csv"));  // from the pipeline case

  const fs::path cfg = root / "pre_cfg.json";
  std::ofstream(cfg) << R"({
    "window": {"t_in": 6, "t_out": 2},
    "backbone": {"channels": 3, "layers": 1, "head_hidden": 8},
    "train": {"max_epochs": 3, "learning_rate": 0.002, "patience": 0}
  })";
  const std::string s1b = (root / "s1b").string();
  const CmdResult pre = run_cli("pretrain --data " + data + " -o " + s1b + " --config " +
                                cfg.string() + " --dtype f64 --epochs 2 --seed 2");
  REQUIRE(pre.code == 0);
  const nlohmann::json run = nlohmann::json::parse(slurp(fs::path(s1b) / "run_config.json"));
  CHECK(run.at("train").at("max_epochs") == 2);        // flag beats the file
  CHECK(run.at("train").at("learning_rate") == 0.002);  // file beats the default
  CHECK(run.at("backbone").at("channels") == 3);
  CHECK(run.at("window").at("t_in") == 6);
  const Stage1Model<double> s1 = load_stage1<double>((fs::path(s1b) / "stage1.json").string());
  CHECK(s1.backbone.config().channels == 3);
  CHECK(s1.backbone.config().input_steps == 6);
  CHECK(s1.log.epochs.size() == 2);
}

TEST_CASE("experiment commands produce comparison and ablation reports") {
  const fs::path root = root_dir();
  const std::string data = (root / "data").string();
  const std::string s1b = (root / "s1b").string();
  REQUIRE(fs::exists(fs::path(s1b) / "stage1.json"));  // from the config-merge case

  const std::string shared = " --data " + data + " --stage1 " + s1b +
                             "/stage1.json --dtype f64 --runs 1 --t-in 6 --t-out 2"
                             " --stage2-layers 1 --head-hidden 8 --epochs 1 --patience 0"
                             " --batch 16 --seed 2";

  const std::string cmp = (root / "cmp").string();
  const CmdResult comparison = run_cli("compare" + shared + " -o " + cmp);
  REQUIRE(comparison.code == 0);
  CHECK(fs::exists(fs::path(cmp) / "comparison.csv"));
  const nlohmann::json cj = nlohmann::json::parse(slurp(fs::path(cmp) / "comparison.json"));
  CHECK(cj.at("runs") == 1);
  CHECK(cj.at("baseline").at("overall").at("mae").is_number());
  CHECK(cj.at("framework").at("overall").at("mae").is_number());
  CHECK(cj.at("improvement_ratio").at("overall").contains("mae"));
  CHECK(cj.at("baseline_runs").size() == 1);

  const std::string abl = (root / "abl").string();
  const CmdResult ablation = run_cli("ablate" + shared + " -o " + abl);
  REQUIRE(ablation.code == 0);
  const nlohmann::json aj = nlohmann::json::parse(slurp(fs::path(abl) / "ablation.json"));
  REQUIRE(aj.size() == 5);
  CHECK(aj.at(0).at("name") == "full");
  std::vector<std::string> names;
  for (const auto& row : aj) {
    names.push_back(row.at("name").get<std::string>());
    CHECK(row.at("failed") == false);
    if (!row.at("failed").get<bool>())
      CHECK(row.at("mean").at("overall").at("mae").is_number());
  }
  for (const char* expected :
       {"no_stage1_features", "no_transform", "no_enhance", "no_stage2"})
    CHECK(std::find(names.begin(), names.end(), expected) != names.end());
  const std::string abl_csv = slurp(fs::path(abl) / "ablation.csv");
  CHECK(abl_csv.rfind("variant,mae,rmse,mape,failed", 0) == 0);
  CHECK(line_count(abl_csv) == 6);
}
