#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "condensa/exemplar.hpp"
#include "condensa/model.hpp"
#include "condensa/tensor.hpp"

namespace condensa {

struct LossWeights {
  double alpha = 1.0;  // L_c feature consistency
  double beta = 1.0;   // L_c cross-entropy
  double gamma = 1.0;  // L_p feature consistency
  double eta = 1.0;    // L_p cross-entropy
};

enum class PromptMode { instance, class_shared, task_shared, disabled };

enum class CondenseStrategy {
  condensed,   // learned softmax frame weights (+ prompt)
  average,     // uniform frame mean, no optimization
  random,      // one uniformly drawn source frame
  all,         // keep frames_per_exemplar uniformly spaced raw frames
  prompt_only, // prompt trained on a blank frame, no condensing weights
};

struct CondenseConfig {
  long iterations = 400;
  double lr_weights = 0.01;
  double lr_prompt = 0.001;
  LossWeights loss_weights;
  PromptMode prompt_mode = PromptMode::instance;
  CondenseStrategy strategy = CondenseStrategy::condensed;
  bool store_float = false;
  std::size_t frames_per_exemplar = 1;  // only read by strategy=all
};

void validate(const CondenseConfig& cfg);

/// Learnable state of one exemplar. `prompt` may be shared between exemplars.
struct CondenseState {
  Tensor weights;  // T raw logits
  Tensor prompt;   // C×H×W
  long step = 0;
};

/// Σ_t softmax(weights)_t · frames[t]; frames: T×C×H×W.
Tensor condense_frame(Graph& g, const Tensor& weights, const Tensor& frames);

/// Embedding of the original clip under a frozen model; the regression target
/// of both feature-consistency terms.
Tensor clip_embedding(const Tensor& clip, const ModelParams& frozen);

/// (l_f, l_ce) for `frame` fed as a T-fold replicated clip.
std::pair<Tensor, Tensor> condensing_loss(Graph& g, const Tensor& frame, const Tensor& target_embedding,
                                          std::uint32_t label, const ModelParams& model, std::size_t frames);

/// condensing_loss evaluated on frame + prompt.
std::pair<Tensor, Tensor> prompt_loss(Graph& g, const Tensor& frame, const Tensor& prompt,
                                      const Tensor& target_embedding, std::uint32_t label,
                                      const ModelParams& model, std::size_t frames);

double total_objective(const LossBreakdown& parts, const LossWeights& lw);

/// Loss weights actually optimized for a configuration (prompt terms drop out
/// when prompting is disabled, condensing terms when there is no condensed frame).
LossWeights effective_weights(const CondenseConfig& cfg);

/// Builds the weighted objective on `g` for one exemplar and reports its parts.
Tensor condensing_objective(Graph& g, const CondenseState& state, const Tensor& clip, const Tensor& target,
                            std::uint32_t label, const ModelParams& model, const CondenseConfig& cfg,
                            LossBreakdown* parts);

/// Bakes the prompt into the condensed frame and stores it (quantized unless
/// cfg.store_float).
CondensedExemplar finalize_exemplar(const CondenseState& state, const Tensor& clip, std::uint32_t label,
                                    const CondenseConfig& cfg);

/// Condenses one clip (T×C×H×W in [0,1]). `model` must not be mutated
/// concurrently; it is used read-only.
CondensedExemplar optimize_exemplar(const Tensor& clip, std::uint32_t label, const ModelParams& model,
                                    const CondenseConfig& cfg, std::uint64_t seed);

struct CondenseBatchResult {
  std::vector<CondensedExemplar> exemplars;
  /// Final prompt of each exemplar; class/task sharing hands out the same tensor.
  std::vector<Tensor> prompts;
};

/// Condenses a set of clips, sharing prompts according to cfg.prompt_mode
/// (one per clip, per label, or one for the whole call).
CondenseBatchResult condense_exemplars(std::span<const Tensor> clips, std::span<const std::uint32_t> labels,
                                       const ModelParams& model, const CondenseConfig& cfg, std::uint64_t seed);

}  // namespace condensa
