#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "condensa/tensor.hpp"

namespace condensa {

inline constexpr std::size_t kConv1Channels = 8;
inline constexpr std::size_t kEmbeddingDim = 16;

/// Two-stage temporal-shift CNN f(·;θ) plus a growable linear head h(·;ξ).
///
///   clip T×C×H×W -> conv3x3(C→8) -> relu -> temporal shift
///                -> conv3x3/2(8→16) -> relu -> spatial GAP -> temporal mean
///
/// Copying a ModelParams shares tensor storage; use clone() for an
/// independent copy.
struct ModelParams {
  Tensor conv1_w, conv1_b;  // 8×C×3×3, 8
  Tensor conv2_w, conv2_b;  // 16×8×3×3, 16
  Tensor head_w, head_b;    // K×16, K
  double shift_fold = 0.125;

  /// He-initialized extractor with an empty (0-class) head.
  static ModelParams init(std::size_t channels, double shift_fold, std::uint64_t seed);

  std::size_t num_classes() const { return head_w.dim(0); }
  std::size_t channels() const { return conv1_w.dim(1); }

  std::vector<Tensor> parameters() const { return {conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b}; }

  ModelParams clone() const;
  /// Deep copy with gradients disabled; forward passes through it record
  /// nothing for the parameters.
  ModelParams frozen() const;
};

bool bit_equal(const ModelParams& a, const ModelParams& b);

struct FeatureBundle {
  Tensor embedding;                 // kEmbeddingDim
  std::array<Tensor, 2> stage_maps; // post-shift conv1 map, conv2 map; rows × C_l × H_l × W_l
  /// Time steps represented by each stage-map row. A plain clip has one row
  /// per frame (all ones); the replicated-frame path collapses identical rows.
  std::vector<double> row_multiplicity;
};

/// Immutable deep copy of the parameters at the end of a stage.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const ModelParams& params) : params_(params.frozen()) {}
  const ModelParams& params() const { return params_; }

 private:
  ModelParams params_;
};

inline ModelSnapshot snapshot(const ModelParams& params) { return ModelSnapshot(params); }

std::size_t shifted_channel_count(std::size_t channels, double fold);

/// Shifts the first floor(fold·C) channels forward in time (+1), the next
/// floor(fold·C) backward (-1), zero-filling vacated slots.
Tensor temporal_shift(Graph& g, const Tensor& x, double fold);

/// clip: T×C×H×W in [0,1].
FeatureBundle extract_features(Graph& g, const Tensor& clip, const ModelParams& params);

/// Features of `frame` (C×H×W) replicated `frames` times along time. Equal to
/// extract_features(replicate(frame)) but only evaluates the distinct rows
/// that survive the temporal shift (at most three).
FeatureBundle extract_frame_features(Graph& g, const Tensor& frame, std::size_t frames,
                                     const ModelParams& params);

Tensor classify(Graph& g, const FeatureBundle& bundle, const ModelParams& params);

/// Appends n_new head rows drawn from N(0, 0.01²) with zero bias. Existing
/// rows are copied bit-for-bit.
ModelParams extend_head(const ModelParams& params, std::size_t n_new, std::uint64_t seed);

}  // namespace condensa
