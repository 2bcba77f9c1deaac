#include "condensa/experiment.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "condensa/error.hpp"
#include "condensa/memory.hpp"
#include "condensa/plot.hpp"
#include "condensa/rng.hpp"

namespace condensa {
namespace {

using json = nlohmann::ordered_json;

// Collects every problem in a document before reporting.
class Validator {
 public:
  void unknown_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) fail(join(path, it.key()), "unknown key");
    }
  }

  const json* section(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key)) return nullptr;
    const json& v = obj.at(key);
    if (!v.is_object()) {
      fail(join(path, key), "expected an object");
      return nullptr;
    }
    return &v;
  }

  template <typename T>
  void get(const json* obj, const std::string& path, const char* key, T& out) {
    if (!obj || !obj->contains(key)) return;
    const json& v = obj->at(key);
    const std::string where = join(path, key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return fail(where, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        return fail(where, "expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(where, "expected a number");
    } else {
      if (!v.is_string()) return fail(where, "expected a string");
    }
    out = v.get<T>();
  }

  void fail(const std::string& key, const std::string& why) {
    keys.push_back(key);
    messages.push_back(key + ": " + why);
  }

  void raise_if_failed(const char* what) const {
    if (keys.empty()) return;
    std::string msg = std::string(what) + " invalid:";
    for (const auto& m : messages) msg += "\n  " + m;
    throw ConfigError(msg, keys);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  std::vector<std::string> keys, messages;
};

const std::map<std::string, PromptMode> kPromptModes = {
    {"instance", PromptMode::instance}, {"class", PromptMode::class_shared},
    {"task", PromptMode::task_shared}, {"disabled", PromptMode::disabled}};

const std::map<std::string, CondenseStrategy> kStrategies = {
    {"condensed", CondenseStrategy::condensed}, {"average", CondenseStrategy::average},
    {"random", CondenseStrategy::random}, {"all", CondenseStrategy::all},
    {"prompt_only", CondenseStrategy::prompt_only}};

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{} is not valid JSON: {}", what, e.what()), {"<document>"});
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string(), {path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

ExperimentConfig parse_experiment_json(const json& doc) {
  Validator v;
  ExperimentConfig cfg;
  if (!doc.is_object()) {
    v.fail("<document>", "expected an object");
    v.raise_if_failed("experiment config");
  }
  v.unknown_keys(doc, "", {"data", "split", "train", "condense", "memory", "model", "output_dir", "seeds"});

  if (const json* d = v.section(doc, "", "data")) {
    v.unknown_keys(*d, "data", {"num_classes", "train_per_class", "test_per_class", "frames", "height", "width",
                                "channels", "noise_std", "seed"});
    v.get(d, "data", "num_classes", cfg.data.num_classes);
    v.get(d, "data", "train_per_class", cfg.data.train_per_class);
    v.get(d, "data", "test_per_class", cfg.data.test_per_class);
    v.get(d, "data", "frames", cfg.data.frames);
    v.get(d, "data", "height", cfg.data.height);
    v.get(d, "data", "width", cfg.data.width);
    v.get(d, "data", "channels", cfg.data.channels);
    v.get(d, "data", "noise_std", cfg.data.noise_std);
    v.get(d, "data", "seed", cfg.data.seed);
  }
  if (cfg.data.num_classes == 0) v.fail("data.num_classes", "must be >= 1");
  if (cfg.data.frames == 0) v.fail("data.frames", "must be >= 1");
  if (cfg.data.height < 3) v.fail("data.height", "must be >= 3");
  if (cfg.data.width < 3) v.fail("data.width", "must be >= 3");
  if (cfg.data.channels == 0 || cfg.data.channels > 255) v.fail("data.channels", "must be in 1..255");
  if (cfg.data.train_per_class == 0) v.fail("data.train_per_class", "must be >= 1");
  if (cfg.data.test_per_class == 0) v.fail("data.test_per_class", "must be >= 1");
  if (cfg.data.noise_std < 0) v.fail("data.noise_std", "must be >= 0");

  if (const json* s = v.section(doc, "", "split")) {
    v.unknown_keys(*s, "split", {"base", "increments", "stages"});
    if (s->contains("stages")) {
      if (s->contains("base") || s->contains("increments")) v.fail("split", "use either stages or base/increments");
      try {
        cfg.split.stages = s->at("stages").get<std::vector<std::vector<std::uint32_t>>>();
      } catch (const json::exception&) {
        v.fail("split.stages", "expected a list of class-id lists");
      }
    } else {
      std::size_t base = 4;
      std::vector<std::size_t> inc = {2, 2};
      v.get(s, "split", "base", base);
      if (s->contains("increments")) {
        try {
          inc = s->at("increments").get<std::vector<std::size_t>>();
        } catch (const json::exception&) {
          v.fail("split.increments", "expected a list of counts");
        }
      }
      cfg.split = TaskSplit::sequential(base, inc);
    }
  }
  try {
    cfg.split.validate(cfg.data.num_classes);
  } catch (const DomainError& e) {
    v.fail("split", e.what());
  }

  auto& tc = cfg.pipeline.train;
  if (const json* t = v.section(doc, "", "train")) {
    v.unknown_keys(*t, "train", {"epochs", "batch_size", "lr_base", "lr_incremental", "optimizer", "momentum", "clip_norm",
                                "distillation"});
    v.get(t, "train", "epochs", tc.epochs);
    v.get(t, "train", "batch_size", tc.batch_size);
    v.get(t, "train", "lr_base", tc.lr_base);
    v.get(t, "train", "lr_incremental", tc.lr_incremental);
    std::string optimizer;
    v.get(t, "train", "optimizer", optimizer);
    if (optimizer == "sgd") tc.optimizer = Optimizer::sgd;
    else if (optimizer == "adam") tc.optimizer = Optimizer::adam;
    else if (!optimizer.empty()) v.fail("train.optimizer", "expected sgd or adam");
    v.get(t, "train", "momentum", tc.momentum);
    v.get(t, "train", "clip_norm", tc.clip_norm);
    v.get(t, "train", "distillation", tc.distillation);
  }
  if (tc.epochs == 0) v.fail("train.epochs", "must be >= 1");
  if (tc.batch_size == 0) v.fail("train.batch_size", "must be >= 1");
  if (!(tc.lr_base > 0)) v.fail("train.lr_base", "must be > 0");
  if (!(tc.lr_incremental > 0)) v.fail("train.lr_incremental", "must be > 0");
  if (!(tc.momentum >= 0 && tc.momentum < 1)) v.fail("train.momentum", "must be in [0, 1)");
  if (!(tc.clip_norm >= 0)) v.fail("train.clip_norm", "must be >= 0");

  auto& cc = cfg.pipeline.condense;
  if (const json* c = v.section(doc, "", "condense")) {
    v.unknown_keys(*c, "condense", {"iterations", "lr_weights", "lr_prompt", "alpha", "beta", "gamma", "eta",
                                    "prompt_mode", "strategy", "store_float"});
    std::size_t iterations = static_cast<std::size_t>(cc.iterations);
    v.get(c, "condense", "iterations", iterations);
    cc.iterations = static_cast<long>(iterations);
    v.get(c, "condense", "lr_weights", cc.lr_weights);
    v.get(c, "condense", "lr_prompt", cc.lr_prompt);
    v.get(c, "condense", "alpha", cc.loss_weights.alpha);
    v.get(c, "condense", "beta", cc.loss_weights.beta);
    v.get(c, "condense", "gamma", cc.loss_weights.gamma);
    v.get(c, "condense", "eta", cc.loss_weights.eta);
    v.get(c, "condense", "store_float", cc.store_float);
    std::string mode, strategy;
    v.get(c, "condense", "prompt_mode", mode);
    v.get(c, "condense", "strategy", strategy);
    if (!mode.empty()) {
      if (auto it = kPromptModes.find(mode); it != kPromptModes.end()) cc.prompt_mode = it->second;
      else v.fail("condense.prompt_mode", "expected instance, class, task or disabled");
    }
    if (!strategy.empty()) {
      if (auto it = kStrategies.find(strategy); it != kStrategies.end()) cc.strategy = it->second;
      else v.fail("condense.strategy", "expected condensed, average, random, all or prompt_only");
    }
  }
  if (!(cc.lr_weights > 0)) v.fail("condense.lr_weights", "must be > 0");
  if (!(cc.lr_prompt > 0)) v.fail("condense.lr_prompt", "must be > 0");
  for (auto [name, val] : {std::pair{"alpha", cc.loss_weights.alpha}, std::pair{"beta", cc.loss_weights.beta},
                           std::pair{"gamma", cc.loss_weights.gamma}, std::pair{"eta", cc.loss_weights.eta}})
    if (!(val >= 0)) v.fail(std::string("condense.") + name, "must be >= 0");
  if (cc.strategy == CondenseStrategy::prompt_only && cc.prompt_mode == PromptMode::disabled) {
    v.fail("condense.prompt_mode", "prompt_only needs prompting enabled");
  }

  auto& mc = cfg.pipeline.memory;
  if (const json* m = v.section(doc, "", "memory")) {
    v.unknown_keys(*m, "memory", {"frames_per_exemplar", "videos_per_class"});
    v.get(m, "memory", "frames_per_exemplar", mc.frames_per_exemplar);
    v.get(m, "memory", "videos_per_class", mc.videos_per_class);
  }
  if (cc.strategy == CondenseStrategy::all) {
    if (mc.frames_per_exemplar == 0 || mc.frames_per_exemplar > cfg.data.frames) {
      v.fail("memory.frames_per_exemplar", "must be in 1..data.frames for strategy all");
    }
  } else if (mc.frames_per_exemplar != 1) {
    v.fail("memory.frames_per_exemplar", "single-frame strategies store exactly 1 frame");
  }
  cc.frames_per_exemplar = mc.frames_per_exemplar;

  if (const json* m = v.section(doc, "", "model")) {
    v.unknown_keys(*m, "model", {"shift_fold"});
    v.get(m, "model", "shift_fold", cfg.pipeline.shift_fold);
  }
  if (!(cfg.pipeline.shift_fold >= 0 && cfg.pipeline.shift_fold <= 0.5)) v.fail("model.shift_fold", "must be in [0, 0.5]");

  if (doc.contains("output_dir")) {
    if (doc.at("output_dir").is_string()) cfg.output_dir = doc.at("output_dir").get<std::string>();
    else v.fail("output_dir", "expected a string");
  }
  if (doc.contains("seeds")) {
    try {
      cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
      if (cfg.seeds.empty()) v.fail("seeds", "must list at least one seed");
    } catch (const json::exception&) {
      v.fail("seeds", "expected a list of non-negative integers");
    }
  }
  v.raise_if_failed("experiment config");
  return cfg;
}

double parsed_accuracy(double v) { return std::stod(format_accuracy(v)); }

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace

std::string format_accuracy(double v) { return std::isfinite(v) ? fmt::format("{:.6f}", v) : std::string("nan"); }

ExperimentConfig parse_experiment(std::string_view text) {
  return parse_experiment_json(parse_json(text, "experiment config"));
}

ExperimentConfig load_experiment(const std::filesystem::path& path) { return parse_experiment(slurp(path)); }

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty entry in seed list", {"CONDENSA_SEED"});
    item = item.substr(b, e - b + 1);
    std::size_t used = 0;
    std::uint64_t s = 0;
    try {
      s = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.front() == '-') throw ConfigError("bad seed '" + item + "'", {"CONDENSA_SEED"});
    seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("empty seed list", {"CONDENSA_SEED"});
  return seeds;
}

Dataset experiment_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  SynthSpec spec = cfg.data;
  spec.seed = mix_seed(cfg.data.seed, seed);
  return generate_dataset(spec);
}

ExperimentResult run_pipeline(const ExperimentConfig& cfg) {
  ExperimentResult result;
  std::vector<double> cnn, nme;
  for (std::uint64_t seed : cfg.seeds) {
    const Dataset data = experiment_dataset(cfg, seed);
    IncrementalLearner learner(data, cfg.split, cfg.pipeline, seed);
    SeedRun run{seed, learner.run_all()};
    std::vector<double> c, n;
    for (const auto& r : run.stages) {
      c.push_back(parsed_accuracy(r.acc_cnn));
      n.push_back(parsed_accuracy(r.acc_nme));
    }
    cnn.push_back(average_accuracy(c));
    nme.push_back(average_accuracy(n));
    result.runs.push_back(std::move(run));
  }
  result.cnn = summarize(cnn);
  result.nme = summarize(nme);
  return result;
}

std::string stages_csv(const ExperimentResult& result) {
  std::string out = "stage,seen_classes,acc_cnn,acc_nme,memory_mb\n";
  for (const auto& run : result.runs)
    for (const auto& r : run.stages)
      out += fmt::format("{},{},{},{},{:.6f}\n", r.stage, r.seen_classes, format_accuracy(r.acc_cnn),
                         format_accuracy(r.acc_nme), r.memory_mb);
  return out;
}

std::string summary_csv(const ExperimentResult& result) {
  std::string out = "metric,mean,std,seeds\n";
  out += fmt::format("acc_cnn,{},{},{}\n", format_accuracy(result.cnn.mean), format_accuracy(result.cnn.stddev),
                     result.runs.size());
  out += fmt::format("acc_nme,{},{},{}\n", format_accuracy(result.nme.mean), format_accuracy(result.nme.stddev),
                     result.runs.size());
  return out;
}

std::string budget_row(std::uint64_t frames_per_video, std::uint64_t videos, std::uint64_t height,
                       std::uint64_t width, std::uint64_t channels) {
  const std::uint64_t frames = frames_per_video * videos;
  const MemoryBudget b = memory_bytes(frames, height, width, channels);
  return fmt::format("{},{},{},{}\n", frames, videos, b.bytes, format_megabytes(b.megabytes));
}

std::string memory_csv() {
  std::string out = "frames,videos,bytes,mb\n";
  const std::pair<int, int> grid[] = {{8, 1}, {8, 2}, {8, 5}, {1, 1}, {1, 2}, {1, 5}, {1, 8}, {1, 16}, {1, 40}};
  for (auto [f, v] : grid) out += budget_row(f, v, 224, 224, 3);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result = run_pipeline(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string stages = stages_csv(result);
  write_text(cfg.output_dir / "stages.csv", stages);
  write_text(cfg.output_dir / "summary.csv", summary_csv(result));
  write_text(cfg.output_dir / "memory.csv", memory_csv());

  // Per-stage means across seeds, taken from the written values.
  const CsvTable table = parse_csv(stages);
  const std::size_t n_stages = cfg.split.stages.size();
  CsvTable curve;
  curve.header = {"memory_mb", "acc_cnn", "acc_nme"};
  for (std::size_t s = 0; s < n_stages; ++s) {
    double mb = 0, c = 0, n = 0;
    for (std::size_t r = 0; r < result.runs.size(); ++r) {
      const auto& row = table.rows[r * n_stages + s];
      mb += std::stod(row[4]);
      c += std::stod(row[2]);
      n += std::stod(row[3]);
    }
    const double k = static_cast<double>(result.runs.size());
    curve.rows.push_back({fmt::format("{:.6f}", mb / k), format_accuracy(c / k), format_accuracy(n / k)});
  }
  const std::string ys[] = {"acc_cnn", "acc_nme"};
  write_text(cfg.output_dir / "accuracy_vs_budget.svg", render_line_chart(curve, "memory_mb", ys));
  return result;
}

AblationGrid parse_ablation(std::string_view text) {
  const json doc = parse_json(text, "ablation grid");
  Validator v;
  AblationGrid grid;
  if (!doc.is_object()) {
    v.fail("<document>", "expected an object");
    v.raise_if_failed("ablation grid");
  }
  v.unknown_keys(doc, "", {"base", "axes", "output_dir"});
  if (doc.contains("base")) {
    if (doc.at("base").is_object()) grid.base_json = doc.at("base").dump();
    else v.fail("base", "expected an experiment config object");
  } else {
    grid.base_json = "{}";
  }
  static const char* kAxes[] = {"strategy", "prompt_mode", "prompt", "alpha", "beta", "gamma", "eta",
                                "iterations", "frames", "budget", "videos_per_class", "distillation"};
  if (!doc.contains("axes") || !doc.at("axes").is_object()) {
    v.fail("axes", "expected an object of axis -> value list");
  } else {
    for (auto it = doc.at("axes").begin(); it != doc.at("axes").end(); ++it) {
      const std::string key = "axes." + it.key();
      if (std::find_if(std::begin(kAxes), std::end(kAxes), [&](const char* a) { return it.key() == a; }) ==
          std::end(kAxes)) {
        v.fail(key, "unknown axis");
        continue;
      }
      if (!it.value().is_array()) {
        v.fail(key, "expected a list of values");
        continue;
      }
      std::vector<std::string> values;
      for (const auto& x : it.value()) values.push_back(x.dump());
      grid.axes.emplace_back(it.key(), std::move(values));
    }
  }
  if (doc.contains("output_dir")) {
    if (doc.at("output_dir").is_string()) grid.output_dir = doc.at("output_dir").get<std::string>();
    else v.fail("output_dir", "expected a string");
  }
  v.raise_if_failed("ablation grid");
  bool empty = grid.axes.empty();
  for (const auto& [name, values] : grid.axes) empty = empty || values.empty();
  if (empty) throw DomainError("ablation grid is empty");
  // Surface base-config errors before any cell runs.
  parse_experiment(grid.base_json);
  return grid;
}

AblationGrid load_ablation(const std::filesystem::path& path) { return parse_ablation(slurp(path)); }

ExperimentConfig ablation_cell_config(const AblationGrid& grid,
                                      const std::vector<std::pair<std::string, std::string>>& cell) {
  json doc = json::parse(grid.base_json);
  auto set = [&](const char* section, const char* key, const json& value) { doc[section][key] = value; };
  for (const auto& [axis, text] : cell) {
    const json value = json::parse(text);
    if (axis == "strategy") set("condense", "strategy", value);
    else if (axis == "prompt_mode") set("condense", "prompt_mode", value);
    else if (axis == "prompt") {
      const bool on = value.is_boolean() ? value.get<bool>() : value == "on";
      set("condense", "prompt_mode", on ? "instance" : "disabled");
    } else if (axis == "alpha" || axis == "beta" || axis == "gamma" || axis == "eta" || axis == "iterations") {
      set("condense", axis.c_str(), value);
    } else if (axis == "frames") set("data", "frames", value);
    else if (axis == "videos_per_class") set("memory", "videos_per_class", value);
    else if (axis == "distillation") set("train", "distillation", value);
    else if (axis == "budget") {
      if (!value.is_array() || value.size() != 2) throw ConfigError("budget axis values are [frames, videos]", {"axes.budget"});
      set("memory", "frames_per_exemplar", value[0]);
      set("memory", "videos_per_class", value[1]);
    } else {
      throw ConfigError("unknown ablation axis " + axis, {"axes." + axis});
    }
  }
  ExperimentConfig cfg = parse_experiment_json(doc);
  if (grid.seeds) cfg.seeds = *grid.seeds;
  return cfg;
}

std::vector<std::vector<std::pair<std::string, std::string>>> ablation_cells(const AblationGrid& grid) {
  if (grid.axes.empty()) throw DomainError("ablation grid is empty");
  std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
  for (const auto& [axis, values] : grid.axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& partial : cells)
      for (const auto& v : values) {
        auto c = partial;
        c.emplace_back(axis, v);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  return cells;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid) {
  std::vector<AblationRow> rows;
  for (const auto& cell : ablation_cells(grid)) rows.push_back({cell, run_pipeline(ablation_cell_config(grid, cell))});
  return rows;
}

namespace {

std::string cell_text(const std::string& encoded) {
  const json v = json::parse(encoded);
  if (v.is_string()) return v.get<std::string>();
  std::string s = v.dump();
  for (char& ch : s)
    if (ch == ',') ch = 'x';  // [1,8] -> [1x8], keeps the CSV flat
  return s;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return {};
  std::string out;
  for (const auto& [axis, v] : rows.front().cell) out += axis + ",";
  out += "avg_acc_cnn,std_acc_cnn,avg_acc_nme,std_acc_nme\n";
  for (const auto& row : rows) {
    for (const auto& [axis, v] : row.cell) out += cell_text(v) + ",";
    out += fmt::format("{},{},{},{}\n", format_accuracy(row.result.cnn.mean), format_accuracy(row.result.cnn.stddev),
                       format_accuracy(row.result.nme.mean), format_accuracy(row.result.nme.stddev));
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return {};
  std::string out;
  for (const auto& [axis, v] : rows.front().cell) out += fmt::format("{:<14}", axis);
  out += fmt::format("{:>16}{:>16}\n", "CNN", "NME");
  for (const auto& row : rows) {
    for (const auto& [axis, v] : row.cell) out += fmt::format("{:<14}", cell_text(v));
    auto pct = [](const MetricSummary& m) {
      return std::isfinite(m.mean) ? fmt::format("{:.2f}±{:.2f}", 100 * m.mean, 100 * m.stddev) : std::string("-");
    };
    out += fmt::format("{:>16}{:>16}\n", pct(row.result.cnn), pct(row.result.nme));
  }
  return out;
}

}  // namespace condensa
