#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "condensa/error.hpp"
#include "condensa/experiment.hpp"
#include "condensa/plot.hpp"

using namespace condensa;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "condensa_unit_cli";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args, const std::string& env = "") {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" CONDENSA_CLI_PATH "\" " + args + " > \"" +
                          out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string tiny_config(const fs::path& out_dir, const std::string& split = R"({"stages": [[0, 1], [2, 3]]})",
                        const std::string& extra = "") {
  return R"({
    "data": {"num_classes": 4, "train_per_class": 3, "test_per_class": 2, "frames": 4, "height": 12, "width": 12},
    "split": )" + split + R"(,
    "train": {"epochs": 1, "batch_size": 4},
    "condense": {"iterations": 2)" + extra + R"(},
    "memory": {"videos_per_class": 1},
    "output_dir": ")" + out_dir.generic_string() + R"(",
    "seeds": [1]
  })";
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("budget verb prints bytes and megabytes") {
  struct Row {
    int frames, videos;
    const char* line;
  };
  for (const Row& r : {Row{1, 1, "1,1,150528,0.15"}, Row{1, 2, "2,2,301056,0.30"}, Row{1, 5, "5,5,752640,0.75"},
                       Row{1, 8, "8,8,1204224,1.2"}, Row{1, 16, "16,16,2408448,2.4"},
                       Row{1, 40, "40,40,6021120,6.0"}, Row{8, 5, "40,5,6021120,6.0"}}) {
    const auto res = cli(fmt::format("budget --frames {} --videos {}", r.frames, r.videos));
    CHECK(res.code == 0);
    CHECK(lines(res.out) == std::vector<std::string>{"frames,videos,bytes,mb", r.line});
  }
  const auto small = cli("budget --frames 2 --videos 3 --height 32 --width 32 --channels 3");
  CHECK(lines(small.out).at(1) == "6,3,18432,0.018");
}

TEST_CASE("memory table rows") {
  const auto rows = lines(memory_csv());
  CHECK(rows.front() == "frames,videos,bytes,mb");
  CHECK(std::find(rows.begin(), rows.end(), "40,5,6021120,6.0") != rows.end());
  CHECK(std::find(rows.begin(), rows.end(), "1,1,150528,0.15") != rows.end());
  CHECK(std::find(rows.begin(), rows.end(), "8,8,1204224,1.2") != rows.end());
}

TEST_CASE("config errors exit with code 2 and name the keys") {
  const fs::path cfg = kRoot / "bad.json";
  spit(cfg, R"({"data": {"num_clases": 4, "frames": "eight"}, "bogus": 1})");
  const auto res = cli("run \"" + cfg.string() + "\"");
  CHECK(res.code == 2);
  CHECK(res.err.find("data.num_clases") != std::string::npos);
  CHECK(res.err.find("data.frames") != std::string::npos);
  CHECK(res.err.find("bogus") != std::string::npos);

  spit(cfg, "{ not json");
  CHECK(cli("run \"" + cfg.string() + "\"").code == 2);
  CHECK(cli("run \"" + (kRoot / "missing.json").string() + "\"").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("").code == 2);

  try {
    parse_experiment(R"({"train": {"epochs": -1}, "memory": {"frames_per_exemplar": 3}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::find(e.keys().begin(), e.keys().end(), "train.epochs") != e.keys().end());
    CHECK(std::find(e.keys().begin(), e.keys().end(), "memory.frames_per_exemplar") != e.keys().end());
  }
}

TEST_CASE("runtime errors exit with code 3") {
  const fs::path csv = kRoot / "plot_bad.csv";
  spit(csv, "x,y\n1,2\n");
  const auto res = cli("plot \"" + csv.string() + "\" --x x --y zz --out \"" + (kRoot / "p.svg").string() + "\"");
  CHECK(res.code == 3);
  CHECK(res.err.find("zz") != std::string::npos);
}

TEST_CASE("run writes reports and reruns are byte-identical") {
  const fs::path dir = kRoot / "run_a";
  fs::remove_all(dir);
  const fs::path cfg = kRoot / "run_a.json";
  spit(cfg, tiny_config(dir));
  const auto res = cli("run \"" + cfg.string() + "\"");
  REQUIRE(res.code == 0);
  for (const char* f : {"stages.csv", "summary.csv", "memory.csv", "accuracy_vs_budget.svg"}) CHECK(fs::exists(dir / f));
  const auto stages = lines(slurp(dir / "stages.csv"));
  CHECK(stages.front() == "stage,seen_classes,acc_cnn,acc_nme,memory_mb");
  CHECK(stages.size() == 3);
  const auto memory = lines(slurp(dir / "memory.csv"));
  CHECK(std::find(memory.begin(), memory.end(), "40,5,6021120,6.0") != memory.end());

  std::map<std::string, std::string> first;
  for (const char* f : {"stages.csv", "summary.csv", "memory.csv", "accuracy_vs_budget.svg"}) first[f] = slurp(dir / f);
  REQUIRE(cli("run \"" + cfg.string() + "\"").code == 0);
  for (const auto& [f, bytes] : first) CHECK(slurp(dir / f) == bytes);
}

TEST_CASE("one-stage run has exactly one data row") {
  const fs::path dir = kRoot / "run_one";
  const fs::path cfg = kRoot / "run_one.json";
  spit(cfg, tiny_config(dir, R"({"stages": [[0, 1, 2, 3]]})"));
  REQUIRE(cli("run \"" + cfg.string() + "\"").code == 0);
  CHECK(lines(slurp(dir / "stages.csv")).size() == 2);
}

TEST_CASE("seed override and summary recomputation") {
  const fs::path dir = kRoot / "run_seeds";
  const fs::path cfg = kRoot / "run_seeds.json";
  spit(cfg, tiny_config(dir));
  REQUIRE(cli("run \"" + cfg.string() + "\"", "CONDENSA_SEED=3,4,5").code == 0);
  const CsvTable stages = read_csv(dir / "stages.csv");
  REQUIRE(stages.rows.size() == 6);
  std::vector<double> per_seed;
  for (std::size_t s = 0; s < 3; ++s)
    per_seed.push_back((std::stod(stages.rows[2 * s][2]) + std::stod(stages.rows[2 * s + 1][2])) / 2.0);
  const double mean = (per_seed[0] + per_seed[1] + per_seed[2]) / 3.0;
  double var = 0.0;
  for (double v : per_seed) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / 2.0);
  const CsvTable summary = read_csv(dir / "summary.csv");
  CHECK(summary.header == std::vector<std::string>{"metric", "mean", "std", "seeds"});
  CHECK(summary.rows[0][0] == "acc_cnn");
  CHECK(std::stod(summary.rows[0][1]) == doctest::Approx(mean).epsilon(1e-5));
  CHECK(std::stod(summary.rows[0][2]) == doctest::Approx(sd).epsilon(1e-5));
  CHECK(summary.rows[0][3] == "3");
  CHECK(cli("run \"" + cfg.string() + "\"", "CONDENSA_SEED=x").code == 2);
}

TEST_CASE("plot verb") {
  const fs::path csv = kRoot / "plot.csv";
  spit(csv, "mb,acc\n0.15,0.5\n1.2,0.75\n");
  const fs::path svg = kRoot / "plot.svg";
  REQUIRE(cli("plot \"" + csv.string() + "\" --x mb --y acc --out \"" + svg.string() + "\"").code == 0);
  const std::string a = slurp(svg);
  std::size_t polylines = 0;
  for (std::size_t p = a.find("<polyline"); p != std::string::npos; p = a.find("<polyline", p + 1)) ++polylines;
  CHECK(polylines == 1);
  const auto pts_at = a.find("points=\"") + 8;
  const std::string pts = a.substr(pts_at, a.find('"', pts_at) - pts_at);
  CHECK(std::count(pts.begin(), pts.end(), ',') == 2);
  CHECK(a.find(">mb<") != std::string::npos);
  CHECK(a.find(">acc<") != std::string::npos);
  REQUIRE(cli("plot \"" + csv.string() + "\" --x mb --y acc --out \"" + svg.string() + "\"").code == 0);
  CHECK(slurp(svg) == a);

  spit(csv, "mb,acc\n0.15,0.5\n1.2,high\n");
  try {
    emit_plot(csv, "mb", std::vector<std::string>{"acc"}, svg);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    const std::string what = e.what();
    CHECK(what.find("row 2") != std::string::npos);
    CHECK(what.find("acc") != std::string::npos);
  }
}

TEST_CASE("ablation grids") {
  const std::string base = tiny_config(kRoot / "unused");
  SUBCASE("strategy by prompt gives four rows") {
    const fs::path grid = kRoot / "grid4.json";
    const fs::path out = kRoot / "grid4";
    spit(grid, R"({"base": )" + base + R"(, "axes": {"strategy": ["average", "condensed"], "prompt": ["on", "off"]},
                   "output_dir": ")" + out.generic_string() + R"("})");
    const auto res = cli("ablate \"" + grid.string() + "\"");
    REQUIRE(res.code == 0);
    const CsvTable t = read_csv(out / "ablation.csv");
    CHECK(t.header.front() == "strategy");
    CHECK(t.header.at(1) == "prompt");
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0][0] == "average");
    CHECK(t.rows[0][1] == "on");
    CHECK(t.rows[1][1] == "off");
    CHECK(t.rows[3][0] == "condensed");
  }
  SUBCASE("alpha sweep gives six rows") {
    AblationGrid g = parse_ablation(R"({"base": )" + base + R"(, "axes": {"alpha": [0.01, 0.1, 0.5, 1, 2, 5]}})");
    const auto cells = ablation_cells(g);
    REQUIRE(cells.size() == 6);
    CHECK(ablation_cell_config(g, cells[2]).pipeline.condense.loss_weights.alpha == 0.5);
    CHECK(ablation_cell_config(g, cells[2]).pipeline.condense.loss_weights.beta == 1.0);
    const auto rows = run_ablation(g);
    CHECK(rows.size() == 6);
    CHECK(lines(ablation_csv(rows)).size() == 7);
  }
  SUBCASE("a cell equals the standalone experiment") {
    AblationGrid g = parse_ablation(R"({"base": )" + base +
                                    R"(, "axes": {"strategy": ["condensed"], "prompt": ["off"]}})");
    const auto rows = run_ablation(g);
    REQUIRE(rows.size() == 1);
    ExperimentConfig cfg = parse_experiment(base);
    cfg.pipeline.condense.prompt_mode = PromptMode::disabled;
    const auto standalone = run_pipeline(cfg);
    CHECK(stages_csv(rows[0].result) == stages_csv(standalone));
    CHECK(summary_csv(rows[0].result) == summary_csv(standalone));
  }
  SUBCASE("empty grid and unknown axes") {
    CHECK_THROWS_AS(parse_ablation(R"({"base": )" + base + R"(, "axes": {}})"), DomainError);
    AblationGrid g;
    CHECK_THROWS_AS(ablation_cells(g), DomainError);
    CHECK_THROWS_AS(parse_ablation(R"({"axes": {"colour": ["red"]}})"), ConfigError);
    const fs::path grid = kRoot / "grid_empty.json";
    spit(grid, R"({"axes": {}})");
    CHECK(cli("ablate \"" + grid.string() + "\"").code == 2);
  }
}
