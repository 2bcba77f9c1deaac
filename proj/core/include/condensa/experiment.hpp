#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "condensa/datagen.hpp"
#include "condensa/incremental.hpp"

namespace condensa {

/// A declarative experiment: data, task split, training, condensing and
/// memory settings, output directory and seeds.
struct ExperimentConfig {
  SynthSpec data;
  TaskSplit split = TaskSplit{{{0, 1, 2, 3}, {4, 5}, {6, 7}}};
  PipelineConfig pipeline;
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds = {1};
};

/// Strict JSON parsing: unknown keys and ill-typed values raise ConfigError
/// listing every offending key path.
ExperimentConfig parse_experiment(std::string_view json_text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Parses a comma-separated seed list (the CONDENSA_SEED override).
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<StageReport> stages;
};

struct MetricSummary {
  double mean = 0.0, stddev = 0.0;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  MetricSummary cnn, nme;  // over per-seed average accuracies
};

/// Dataset for one seed: the configured spec with its seed mixed with the run seed.
Dataset experiment_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs every seed in order; no files are written.
ExperimentResult run_pipeline(const ExperimentConfig& cfg);

std::string stages_csv(const ExperimentResult& result);
std::string summary_csv(const ExperimentResult& result);
/// Reference budget grid in `frames,videos,bytes,mb` form, priced at 224×224×3.
std::string memory_csv();
std::string budget_row(std::uint64_t frames_per_video, std::uint64_t videos, std::uint64_t height,
                       std::uint64_t width, std::uint64_t channels);

/// run_pipeline plus stages.csv, summary.csv, memory.csv and
/// accuracy_vs_budget.svg in cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Formats an accuracy the way stages.csv does (6 decimals, "nan" when undefined).
std::string format_accuracy(double v);

struct AblationRow {
  std::vector<std::pair<std::string, std::string>> cell;  // axis name -> value
  ExperimentResult result;
};

struct AblationGrid {
  std::string base_json;  // experiment document the axes override
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;  // JSON-encoded values
  std::filesystem::path output_dir = "ablation";
  std::optional<std::vector<std::uint64_t>> seeds;  // replaces the base seed list when set
};

AblationGrid parse_ablation(std::string_view json_text);
AblationGrid load_ablation(const std::filesystem::path& path);

/// Applies one cell's axis values to the base configuration.
ExperimentConfig ablation_cell_config(const AblationGrid& grid,
                                      const std::vector<std::pair<std::string, std::string>>& cell);

/// Cartesian product of the axes, in axis order (last axis fastest).
std::vector<std::vector<std::pair<std::string, std::string>>> ablation_cells(const AblationGrid& grid);

std::vector<AblationRow> run_ablation(const AblationGrid& grid);
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Fixed-width text table for terminals.
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace condensa
