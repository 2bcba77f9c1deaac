#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "condensa/tensor.hpp"

namespace condensa {

/// Per-term condensing losses; total = α·l_c_f + β·l_c_ce + γ·l_p_f + η·l_p_ce.
struct LossBreakdown {
  double l_c_f = 0.0, l_c_ce = 0.0, l_p_f = 0.0, l_p_ce = 0.0, total = 0.0;
  bool operator==(const LossBreakdown&) const = default;
};

/// One stored memory item: usually a single condensed frame with its prompt
/// baked in, or several raw frames for the keep-all baseline.
struct CondensedExemplar {
  std::uint32_t label = 0;
  std::size_t frames = 1;  // stored frames
  std::size_t channels = 0, height = 0, width = 0;
  bool quantized = true;
  std::vector<std::uint8_t> bytes;  // populated when quantized
  std::vector<float> values;        // populated otherwise, in [0,1]
  std::vector<float> weights_audit; // normalized condensing weights, one per source frame
  LossBreakdown initial_loss, final_loss;
  std::uint32_t stage = 0;

  std::size_t frame_size() const { return channels * height * width; }
  /// Budget bytes: one per channel value when quantized, four otherwise.
  std::size_t storage_bytes() const;
  /// frames×C×H×W tensor with values in [0,1].
  Tensor to_tensor() const;
  /// FNV-1a over the stored pixel payload.
  std::uint64_t pixel_hash() const;

  /// Equality over the persisted fields (label, geometry, pixels, weights audit).
  bool same_content(const CondensedExemplar& other) const;
};

}  // namespace condensa
