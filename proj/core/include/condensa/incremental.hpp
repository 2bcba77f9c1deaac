#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "condensa/condenser.hpp"
#include "condensa/datagen.hpp"
#include "condensa/memory.hpp"
#include "condensa/model.hpp"

namespace condensa {

/// Disjoint class sets L^1..L^K, trained in order.
struct TaskSplit {
  std::vector<std::vector<std::uint32_t>> stages;

  /// base classes first, then consecutive groups of the given sizes.
  static TaskSplit sequential(std::size_t base, std::span<const std::size_t> increments);
  /// Throws unless the stages partition 0..num_classes-1 exactly.
  void validate(std::size_t num_classes) const;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 24;
  std::size_t batch_size = 2;
  double lr_base = 0.005;           // first stage
  double lr_incremental = 0.0003;  // later stages
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.9;  // sgd only
  double clip_norm = 20.0;  // global gradient-norm ceiling, 0 disables
  bool distillation = true;
};

struct PipelineConfig {
  TrainConfig train;
  CondenseConfig condense;
  MemoryConfig memory;
  double shift_fold = 0.125;
};

struct StageReport {
  std::size_t stage = 0;  // 1-based
  std::size_t seen_classes = 0;
  double acc_cnn = 0.0;
  double acc_nme = 0.0;  // NaN when the bank does not cover every seen class
  double memory_mb = 0.0;
  std::vector<double> loss_curve;  // mean batch loss per epoch
};

enum class Source : std::uint8_t { fresh, memory };

/// Sample order mixing two sources in proportion to their sizes (the source
/// whose next draw is proportionally earliest goes first, ties to fresh data),
/// chunked into batches of `batch` samples.
std::vector<std::vector<Source>> interleave(std::size_t new_count, std::size_t mem_count, std::size_t batch);

/// Width- and height-pooled squared differences summed over channels and the
/// kept axis, for both stage maps, rows weighted by their time multiplicity.
Tensor distill_spatial(Graph& g, const FeatureBundle& current, const FeatureBundle& previous);

/// Squared L2 distance between clip embeddings.
Tensor distill_flat(Graph& g, const Tensor& current, const Tensor& previous);

/// Model features of a stored exemplar (frame path for single frames).
FeatureBundle exemplar_features(Graph& g, const CondensedExemplar& ex, const ModelParams& model, std::size_t frames);

struct CilTerms {
  double ce_new = 0.0, ce_memory = 0.0, distill = 0.0;
};

/// Batch objective: mean over samples of CE on new clips, and CE plus
/// spatial+flat distillation on memory exemplars. `head_index` maps class ids
/// to head rows. Distillation is skipped without an old model.
Tensor cil_loss(Graph& g, std::span<const VideoClip* const> new_batch,
                std::span<const CondensedExemplar* const> mem_batch, const ModelParams& model,
                const ModelSnapshot* old_model, std::span<const std::int64_t> head_index, std::size_t frames,
                CilTerms* terms = nullptr);

/// Argmax of head logits; head_classes[i] is the class id of head row i.
double evaluate_cnn(const ModelParams& model, std::span<const VideoClip> testset,
                    std::span<const std::uint32_t> head_classes);

/// Nearest mean of exemplars. Every test label must have exemplars in `bank`.
double evaluate_nme(const ModelParams& model, const MemoryBank& bank, std::span<const VideoClip> testset,
                    std::size_t frames);

/// Nearest-mean prediction over explicit means (ties to the smaller class id).
std::uint32_t nearest_mean(std::span<const double> embedding, const std::map<std::uint32_t, std::vector<double>>& means);

double average_accuracy(std::span<const double> per_stage);

/// Drives the stage sequence for one seed.
class IncrementalLearner {
 public:
  IncrementalLearner(const Dataset& data, TaskSplit split, PipelineConfig cfg, std::uint64_t seed);

  /// k is 1-based and must be the next unrun stage.
  StageReport run_stage(std::size_t k);
  std::vector<StageReport> run_all();

  const ModelParams& model() const { return model_; }
  const MemoryBank& bank() const { return bank_; }
  const std::vector<std::uint32_t>& head_classes() const { return head_classes_; }
  std::size_t stages_done() const { return done_; }

 private:
  void train_stage(std::size_t k, StageReport& report);
  void build_memory(std::size_t k);

  const Dataset& data_;
  TaskSplit split_;
  PipelineConfig cfg_;
  std::uint64_t seed_;
  ModelParams model_;
  MemoryBank bank_;
  std::optional<ModelSnapshot> old_;
  std::vector<std::uint32_t> head_classes_;
  std::vector<std::int64_t> head_index_;
  std::size_t done_ = 0;
};

}  // namespace condensa
