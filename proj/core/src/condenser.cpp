#include "condensa/condenser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "condensa/datagen.hpp"
#include "condensa/error.hpp"
#include "condensa/ops.hpp"
#include "condensa/rng.hpp"

namespace condensa {
namespace {

Shape frame_shape(const Tensor& clip) { return {clip.dim(1), clip.dim(2), clip.dim(3)}; }

void require_clip(const Tensor& clip, const char* where) {
  if (clip.rank() != 4) {
    throw DimensionError(std::string(where) + ": expected T×C×H×W clip, got " + shape_string(clip.shape()));
  }
  if (clip.dim(0) == 0) throw DomainError(std::string(where) + ": clip has no frames");
}

std::vector<double> softmax_values(const Tensor& logits) {
  Graph g;
  Tensor s = ops::softmax(g, logits, 0);
  return {s.data().begin(), s.data().end()};
}

const ModelParams& ensure_frozen(const ModelParams& model, ModelParams& storage) {
  for (const auto& t : model.parameters())
    if (t.requires_grad()) {
      storage = model.frozen();
      return storage;
    }
  return model;
}

// Indices of F uniformly spaced frames out of T (segment centres).
std::vector<std::size_t> uniform_indices(std::size_t T, std::size_t F) {
  std::vector<std::size_t> idx(F);
  for (std::size_t j = 0; j < F; ++j) idx[j] = ((2 * j + 1) * T) / (2 * F);
  return idx;
}

CondensedExemplar raw_frames_exemplar(const Tensor& clip, std::uint32_t label, std::span<const std::size_t> picks,
                                      const CondenseConfig& cfg) {
  const std::size_t T = clip.dim(0), M = clip.numel() / T;
  CondensedExemplar ex;
  ex.label = label;
  ex.frames = picks.size();
  ex.channels = clip.dim(1);
  ex.height = clip.dim(2);
  ex.width = clip.dim(3);
  ex.quantized = !cfg.store_float;
  ex.weights_audit.assign(T, 0.0f);
  auto cd = clip.data();
  for (std::size_t t : picks) {
    ex.weights_audit[t] = static_cast<float>(1.0 / static_cast<double>(picks.size()));
    for (std::size_t i = 0; i < M; ++i) {
      const double v = cd[t * M + i];
      if (ex.quantized) {
        ex.bytes.push_back(quantize_unit(v));
      } else {
        ex.values.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
    }
  }
  return ex;
}

}  // namespace

void validate(const CondenseConfig& cfg) {
  if (cfg.iterations < 0) throw DomainError("condense: iterations must be >= 0");
  if (!(cfg.lr_weights > 0.0) || !(cfg.lr_prompt > 0.0)) throw DomainError("condense: learning rates must be > 0");
  const auto& w = cfg.loss_weights;
  if (!(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0 && w.eta >= 0)) {
    throw DomainError("condense: balance weights must be >= 0");
  }
  if (cfg.strategy == CondenseStrategy::prompt_only && cfg.prompt_mode == PromptMode::disabled) {
    throw DomainError("condense: prompt_only strategy needs prompting enabled");
  }
  if (cfg.strategy == CondenseStrategy::all && cfg.frames_per_exemplar == 0) {
    throw DomainError("condense: frames_per_exemplar must be >= 1");
  }
}

Tensor condense_frame(Graph& g, const Tensor& weights, const Tensor& frames) {
  if (weights.rank() != 1 || weights.dim(0) == 0) throw DomainError("condense_frame: need at least one frame weight");
  require_clip(frames, "condense_frame");
  if (frames.dim(0) != weights.dim(0)) {
    throw DimensionError("condense_frame: " + std::to_string(weights.dim(0)) + " weights for clip " +
                         shape_string(frames.shape()));
  }
  return ops::weighted_sum(g, ops::softmax(g, weights, 0), frames);
}

Tensor clip_embedding(const Tensor& clip, const ModelParams& frozen) {
  ModelParams storage;
  const ModelParams& m = ensure_frozen(frozen, storage);
  Graph g;
  return extract_features(g, clip, m).embedding;
}

std::pair<Tensor, Tensor> condensing_loss(Graph& g, const Tensor& frame, const Tensor& target_embedding,
                                          std::uint32_t label, const ModelParams& model, std::size_t frames) {
  if (label >= model.num_classes()) {
    throw DomainError("condensing_loss: label " + std::to_string(label) + " outside head of " +
                      std::to_string(model.num_classes()) + " classes");
  }
  FeatureBundle b = extract_frame_features(g, frame, frames, model);
  Tensor l_f = ops::squared_distance(g, b.embedding, target_embedding);
  Tensor l_ce = ops::cross_entropy(g, classify(g, b, model), label);
  return {l_f, l_ce};
}

std::pair<Tensor, Tensor> prompt_loss(Graph& g, const Tensor& frame, const Tensor& prompt,
                                      const Tensor& target_embedding, std::uint32_t label, const ModelParams& model,
                                      std::size_t frames) {
  if (frame.shape() != prompt.shape()) {
    throw DimensionError("prompt_loss: prompt " + shape_string(prompt.shape()) + " does not match frame " +
                         shape_string(frame.shape()));
  }
  return condensing_loss(g, ops::add(g, frame, prompt), target_embedding, label, model, frames);
}

double total_objective(const LossBreakdown& p, const LossWeights& lw) {
  return lw.alpha * p.l_c_f + lw.beta * p.l_c_ce + lw.gamma * p.l_p_f + lw.eta * p.l_p_ce;
}

LossWeights effective_weights(const CondenseConfig& cfg) {
  LossWeights lw = cfg.loss_weights;
  if (cfg.prompt_mode == PromptMode::disabled) lw.gamma = lw.eta = 0.0;
  if (cfg.strategy == CondenseStrategy::prompt_only) lw.alpha = lw.beta = 0.0;
  return lw;
}

Tensor condensing_objective(Graph& g, const CondenseState& state, const Tensor& clip, const Tensor& target,
                            std::uint32_t label, const ModelParams& model, const CondenseConfig& cfg,
                            LossBreakdown* parts) {
  require_clip(clip, "condensing_objective");
  const LossWeights lw = effective_weights(cfg);
  const std::size_t T = clip.dim(0);
  const bool blank = cfg.strategy == CondenseStrategy::prompt_only;
  Tensor frame = blank ? Tensor::zeros(frame_shape(clip)) : condense_frame(g, state.weights, clip);

  auto [lcf, lcce] = condensing_loss(g, frame, target, label, model, T);
  LossBreakdown b;
  b.l_c_f = lcf.item();
  b.l_c_ce = lcce.item();
  Tensor root = ops::add(g, ops::scale(g, lcf, lw.alpha), ops::scale(g, lcce, lw.beta));
  if (cfg.prompt_mode == PromptMode::disabled) {
    // Zero prompt: the prompted frame is the condensed frame itself.
    b.l_p_f = b.l_c_f;
    b.l_p_ce = b.l_c_ce;
  } else {
    auto [lpf, lpce] = prompt_loss(g, frame, state.prompt, target, label, model, T);
    b.l_p_f = lpf.item();
    b.l_p_ce = lpce.item();
    root = ops::add(g, root, ops::scale(g, lpf, lw.gamma));
    root = ops::add(g, root, ops::scale(g, lpce, lw.eta));
  }
  b.total = total_objective(b, lw);
  if (parts) *parts = b;
  return root;
}

CondensedExemplar finalize_exemplar(const CondenseState& state, const Tensor& clip, std::uint32_t label,
                                    const CondenseConfig& cfg) {
  require_clip(clip, "finalize_exemplar");
  const std::size_t T = clip.dim(0);
  CondensedExemplar ex;
  ex.label = label;
  ex.frames = 1;
  ex.channels = clip.dim(1);
  ex.height = clip.dim(2);
  ex.width = clip.dim(3);
  ex.quantized = !cfg.store_float;

  std::vector<double> pixels(ex.frame_size(), 0.0);
  if (cfg.strategy == CondenseStrategy::prompt_only) {
    ex.weights_audit.assign(T, 0.0f);
  } else {
    Graph g;
    Tensor frame = condense_frame(g, state.weights, clip);
    std::copy(frame.data().begin(), frame.data().end(), pixels.begin());
    for (double w : softmax_values(state.weights)) ex.weights_audit.push_back(static_cast<float>(w));
  }
  if (cfg.prompt_mode != PromptMode::disabled && state.prompt.defined()) {
    if (state.prompt.numel() != pixels.size()) {
      throw DimensionError("finalize_exemplar: prompt " + shape_string(state.prompt.shape()) +
                           " does not match frame");
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] += state.prompt[i];
  }
  if (ex.quantized) {
    ex.bytes.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) ex.bytes[i] = quantize_unit(pixels[i]);
  } else {
    ex.values.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) ex.values[i] = static_cast<float>(std::clamp(pixels[i], 0.0, 1.0));
  }
  return ex;
}

CondenseBatchResult condense_exemplars(std::span<const Tensor> clips, std::span<const std::uint32_t> labels,
                                       const ModelParams& model, const CondenseConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (clips.size() != labels.size()) throw DimensionError("condense_exemplars: clips and labels differ in length");
  ModelParams storage;
  const ModelParams& frozen = ensure_frozen(model, storage);
  const std::size_t n = clips.size();
  CondenseBatchResult result;
  result.exemplars.resize(n);
  result.prompts.resize(n);

  if (cfg.strategy == CondenseStrategy::random || cfg.strategy == CondenseStrategy::all) {
    for (std::size_t i = 0; i < n; ++i) {
      require_clip(clips[i], "condense_exemplars");
      const std::size_t T = clips[i].dim(0);
      if (cfg.strategy == CondenseStrategy::random) {
        Rng rng = make_rng(seed, i);
        const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
        result.exemplars[i] = raw_frames_exemplar(clips[i], labels[i], std::span(&pick, 1), cfg);
      } else {
        const auto picks = uniform_indices(T, std::min(cfg.frames_per_exemplar, T));
        result.exemplars[i] = raw_frames_exemplar(clips[i], labels[i], picks, cfg);
      }
    }
    return result;
  }

  CondenseConfig run_cfg = cfg;
  if (cfg.strategy == CondenseStrategy::average) run_cfg.iterations = 0;
  const bool prompting = cfg.prompt_mode != PromptMode::disabled;

  // Group members share one prompt tensor.
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t key = i;
    if (cfg.prompt_mode == PromptMode::class_shared) key = labels[i];
    if (cfg.prompt_mode == PromptMode::task_shared) key = 0;
    groups[key].push_back(i);
  }

  for (const auto& [key, members] : groups) {
    const Tensor& first = clips[members.front()];
    require_clip(first, "condense_exemplars");
    Tensor prompt = prompting ? Tensor::zeros(frame_shape(first), true) : Tensor();
    std::vector<CondenseState> states(members.size());
    std::vector<Tensor> targets(members.size());
    std::vector<LossBreakdown> initial(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      const Tensor& clip = clips[members[j]];
      require_clip(clip, "condense_exemplars");
      if (frame_shape(clip) != frame_shape(first)) {
        throw DimensionError("condense_exemplars: clips sharing a prompt must share a frame shape");
      }
      states[j].weights = Tensor::zeros({clip.dim(0)}, cfg.strategy != CondenseStrategy::prompt_only);
      states[j].prompt = prompt;
      targets[j] = clip_embedding(clip, frozen);
    }

    for (long step = 0; step < run_cfg.iterations; ++step) {
      if (prompt.defined()) prompt.zero_grad();
      for (std::size_t j = 0; j < members.size(); ++j) {
        states[j].weights.zero_grad();
        Graph g;
        LossBreakdown parts;
        Tensor root = condensing_objective(g, states[j], clips[members[j]], targets[j], labels[members[j]], frozen,
                                           run_cfg, &parts);
        if (!std::isfinite(root.item())) throw OptimizationError("non-finite condensing loss", step);
        if (step == 0) initial[j] = parts;
        g.backward(root, {.accumulate = true});
      }
      for (auto& s : states) {
        if (s.weights.requires_grad() && s.weights.has_grad()) {
          auto w = s.weights.data();
          auto gw = s.weights.grad();
          for (std::size_t t = 0; t < w.size(); ++t) w[t] -= run_cfg.lr_weights * gw[t];
        }
        s.step = step + 1;
      }
      if (prompt.defined() && prompt.has_grad()) {
        auto p = prompt.data();
        auto gp = prompt.grad();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= run_cfg.lr_prompt * gp[i];
      }
    }

    for (std::size_t j = 0; j < members.size(); ++j) {
      const std::size_t i = members[j];
      Graph g;
      LossBreakdown final_parts;
      Tensor root = condensing_objective(g, states[j], clips[i], targets[j], labels[i], frozen, run_cfg, &final_parts);
      if (!std::isfinite(root.item())) throw OptimizationError("non-finite condensing loss", run_cfg.iterations);
      CondensedExemplar ex = finalize_exemplar(states[j], clips[i], labels[i], run_cfg);
      ex.initial_loss = run_cfg.iterations > 0 ? initial[j] : final_parts;
      ex.final_loss = final_parts;
      result.exemplars[i] = std::move(ex);
      result.prompts[i] = prompt;
    }
  }
  return result;
}

CondensedExemplar optimize_exemplar(const Tensor& clip, std::uint32_t label, const ModelParams& model,
                                    const CondenseConfig& cfg, std::uint64_t seed) {
  std::uint32_t labels[] = {label};
  return std::move(condense_exemplars(std::span(&clip, 1), labels, model, cfg, seed).exemplars.front());
}

}  // namespace condensa
