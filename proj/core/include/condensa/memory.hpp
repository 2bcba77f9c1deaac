#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "condensa/exemplar.hpp"
#include "condensa/model.hpp"

namespace condensa {

struct MemoryConfig {
  std::size_t frames_per_exemplar = 1;
  std::size_t videos_per_class = 2;
};

/// Relative gap below which two herding distances are treated as tied.
inline constexpr double kHerdingTieTolerance = 1e-12;

/// Greedy iCaRL herding over clip embeddings: step j picks the unchosen i
/// minimizing ‖μ − (S + x_i)/j‖, ties (within kHerdingTieTolerance) to the
/// lowest index. Returns the selection order.
std::vector<std::size_t> herding_select(std::span<const std::vector<double>> embeddings, std::size_t m);

struct MemoryBudget {
  std::uint64_t bytes = 0;
  double megabytes = 0.0;  // bytes / 10^6
};

/// One byte per channel value.
MemoryBudget memory_bytes(std::uint64_t frames, std::uint64_t height, std::uint64_t width, std::uint64_t channels);

/// Megabytes rounded to two significant figures, trailing zero kept
/// (0.1505 -> "0.15", 6.02 -> "6.0", 0.301 -> "0.30").
std::string format_megabytes(double mb);

/// Exemplar memory M^{1:k}. Entries are immutable once inserted.
class MemoryBank {
 public:
  using Entry = std::shared_ptr<const CondensedExemplar>;

  explicit MemoryBank(std::size_t videos_per_class = 2) : videos_per_class_(videos_per_class) {}

  void insert(CondensedExemplar exemplar);

  std::size_t videos_per_class() const { return videos_per_class_; }
  const std::map<std::uint32_t, std::vector<Entry>>& classes() const { return classes_; }
  std::vector<Entry> entries() const;  // class order, then insertion order
  std::size_t size() const;
  bool empty() const { return classes_.empty(); }
  bool has_class(std::uint32_t label) const { return classes_.count(label) != 0; }
  std::uint64_t bytes() const;

  /// Field-by-field equality over what the store persists.
  bool same_content(const MemoryBank& other) const;

 private:
  std::size_t videos_per_class_;
  std::map<std::uint32_t, std::vector<Entry>> classes_;
};

/// Embedding of a stored exemplar: single frames are replicated to `frames`
/// time steps, multi-frame exemplars are fed as clips.
std::vector<double> exemplar_embedding(const CondensedExemplar& ex, const ModelParams& model, std::size_t frames);

/// Mean exemplar embedding per class present in the bank.
std::map<std::uint32_t, std::vector<double>> class_means(const MemoryBank& bank, const ModelParams& model,
                                                         std::size_t frames);

}  // namespace condensa
