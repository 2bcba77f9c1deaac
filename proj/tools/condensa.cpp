#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "condensa/error.hpp"
#include "condensa/experiment.hpp"
#include "condensa/plot.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

std::vector<std::uint64_t> seed_override() {
  const char* env = std::getenv("CONDENSA_SEED");
  if (!env || !*env) return {};
  return condensa::parse_seed_list(env);
}

int report_config(const std::exception& e) {
  std::cerr << "config error: " << e.what() << "\n";
  return kConfigExit;
}

int report_runtime(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return kRuntimeExit;
}

int run_command(const std::filesystem::path& config_path) {
  condensa::ExperimentConfig cfg;
  try {
    cfg = condensa::load_experiment(config_path);
    if (auto seeds = seed_override(); !seeds.empty()) cfg.seeds = seeds;
  } catch (const condensa::Error& e) {
    return report_config(e);
  }
  try {
    const auto result = condensa::run_experiment(cfg);
    std::cout << condensa::stages_csv(result) << "\n" << condensa::summary_csv(result);
    std::cout << "wrote " << cfg.output_dir.string() << "\n";
  } catch (const std::exception& e) {
    return report_runtime(e);
  }
  return 0;
}

int ablate_command(const std::filesystem::path& grid_path) {
  condensa::AblationGrid grid;
  try {
    grid = condensa::load_ablation(grid_path);
    if (auto seeds = seed_override(); !seeds.empty()) grid.seeds = seeds;
    for (const auto& cell : condensa::ablation_cells(grid)) condensa::ablation_cell_config(grid, cell);
  } catch (const condensa::Error& e) {
    return report_config(e);
  }
  try {
    const auto rows = condensa::run_ablation(grid);
    std::filesystem::create_directories(grid.output_dir);
    std::ofstream(grid.output_dir / "ablation.csv", std::ios::binary) << condensa::ablation_csv(rows);
    std::cout << condensa::ablation_table(rows);
    std::cout << "wrote " << (grid.output_dir / "ablation.csv").string() << "\n";
  } catch (const std::exception& e) {
    return report_runtime(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental video learning with condensed exemplars"};
  app.require_subcommand(1);

  std::filesystem::path config_path, grid_path, csv_path, svg_path;
  std::string x_column;
  std::vector<std::string> y_columns;
  std::uint64_t frames = 1, videos = 1, height = 224, width = 224, channels = 3;

  auto* run = app.add_subcommand("run", "Run an incremental experiment from a JSON config");
  run->add_option("config", config_path, "Experiment config")->required();
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  ablate->add_option("grid", grid_path, "Ablation grid")->required();
  auto* plot = app.add_subcommand("plot", "Render CSV columns as an SVG line chart");
  plot->add_option("csv", csv_path, "Input CSV")->required();
  plot->add_option("--x", x_column, "X column")->required();
  plot->add_option("--y", y_columns, "Y columns")->required()->delimiter(',');
  plot->add_option("--out", svg_path, "Output SVG")->required();
  auto* budget = app.add_subcommand("budget", "Price an exemplar memory budget");
  budget->add_option("--frames", frames, "Frames stored per video");
  budget->add_option("--videos", videos, "Videos stored");
  budget->add_option("--height", height, "Frame height");
  budget->add_option("--width", width, "Frame width");
  budget->add_option("--channels", channels, "Frame channels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  if (*run) return run_command(config_path);
  if (*ablate) return ablate_command(grid_path);
  if (*plot) {
    try {
      condensa::emit_plot(csv_path, x_column, y_columns, svg_path);
    } catch (const std::exception& e) {
      return report_runtime(e);
    }
    return 0;
  }
  std::cout << "frames,videos,bytes,mb\n" << condensa::budget_row(frames, videos, height, width, channels);
  return 0;
}
