#include "condensa/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "condensa/error.hpp"

namespace condensa {

std::size_t CondensedExemplar::storage_bytes() const {
  return frames * frame_size() * (quantized ? 1 : sizeof(float));
}

Tensor CondensedExemplar::to_tensor() const {
  const std::size_t n = frames * frame_size();
  std::vector<double> v(n);
  if (quantized) {
    for (std::size_t i = 0; i < n; ++i) v[i] = bytes[i] / 255.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) v[i] = values[i];
  }
  return Tensor::from({frames, channels, height, width}, std::move(v));
}

std::uint64_t CondensedExemplar::pixel_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  if (quantized) {
    feed(bytes.data(), bytes.size());
  } else {
    feed(values.data(), values.size() * sizeof(float));
  }
  return h;
}

bool CondensedExemplar::same_content(const CondensedExemplar& o) const {
  return label == o.label && frames == o.frames && channels == o.channels && height == o.height &&
         width == o.width && quantized == o.quantized && bytes == o.bytes && values == o.values &&
         weights_audit == o.weights_audit;
}

std::vector<std::size_t> herding_select(std::span<const std::vector<double>> x, std::size_t m) {
  const std::size_t n = x.size();
  if (m > n) throw DomainError(fmt::format("herding_select: cannot pick {} of {} embeddings", m, n));
  if (m == 0) return {};
  const std::size_t d = x.front().size();
  std::vector<double> mu(d, 0.0);
  for (const auto& v : x) {
    if (v.size() != d) throw DimensionError("herding_select: embeddings differ in dimension");
    for (std::size_t k = 0; k < d; ++k) mu[k] += v[k];
  }
  for (auto& v : mu) v /= static_cast<double>(n);

  std::vector<double> running(d, 0.0);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> order;
  std::vector<double> dist(n);
  for (std::size_t j = 1; j <= m; ++j) {
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = mu[k] - (running[k] + x[i][k]) / static_cast<double>(j);
        acc += diff * diff;
      }
      dist[i] = acc;
      best_dist = std::min(best_dist, acc);
    }
    // Distances equal up to round-off count as ties.
    const double cutoff = best_dist + kHerdingTieTolerance * std::max(best_dist, 1e-300);
    std::size_t best = 0;
    while (taken[best] || dist[best] > cutoff) ++best;
    taken[best] = true;
    order.push_back(best);
    for (std::size_t k = 0; k < d; ++k) running[k] += x[best][k];
  }
  return order;
}

MemoryBudget memory_bytes(std::uint64_t frames, std::uint64_t height, std::uint64_t width, std::uint64_t channels) {
  MemoryBudget b;
  b.bytes = frames * height * width * channels;
  b.megabytes = static_cast<double>(b.bytes) / 1e6;
  return b;
}

std::string format_megabytes(double mb) {
  if (mb == 0.0) return "0.0";
  const int magnitude = static_cast<int>(std::floor(std::log10(std::abs(mb))));
  const int decimals = std::max(0, 1 - magnitude);
  const double unit = std::pow(10.0, decimals);
  const double rounded = std::floor(mb * unit + 0.5) / unit;
  // Rounding can carry into the next decade (9.96 -> 10), which has one fewer decimal.
  const int carried = static_cast<int>(std::floor(std::log10(rounded)));
  return fmt::format("{:.{}f}", rounded, std::max(0, 1 - carried));
}

void MemoryBank::insert(CondensedExemplar exemplar) {
  auto& list = classes_[exemplar.label];
  if (list.size() >= videos_per_class_) {
    throw DomainError(fmt::format("memory bank: class {} already holds {} exemplars", exemplar.label, list.size()));
  }
  list.push_back(std::make_shared<const CondensedExemplar>(std::move(exemplar)));
}

std::vector<MemoryBank::Entry> MemoryBank::entries() const {
  std::vector<Entry> out;
  for (const auto& [label, list] : classes_) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::size_t MemoryBank::size() const {
  std::size_t n = 0;
  for (const auto& [label, list] : classes_) n += list.size();
  return n;
}

std::uint64_t MemoryBank::bytes() const {
  std::uint64_t n = 0;
  for (const auto& [label, list] : classes_)
    for (const auto& e : list) n += e->storage_bytes();
  return n;
}

bool MemoryBank::same_content(const MemoryBank& other) const {
  if (classes_.size() != other.classes_.size()) return false;
  for (auto a = classes_.begin(), b = other.classes_.begin(); a != classes_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.size() != b->second.size()) return false;
    for (std::size_t i = 0; i < a->second.size(); ++i)
      if (!a->second[i]->same_content(*b->second[i])) return false;
  }
  return true;
}

std::vector<double> exemplar_embedding(const CondensedExemplar& ex, const ModelParams& model, std::size_t frames) {
  Graph g;
  Tensor pixels = ex.to_tensor();
  FeatureBundle b = ex.frames == 1
                        ? extract_frame_features(g, pixels.reshaped({ex.channels, ex.height, ex.width}), frames, model)
                        : extract_features(g, pixels, model);
  return {b.embedding.data().begin(), b.embedding.data().end()};
}

std::map<std::uint32_t, std::vector<double>> class_means(const MemoryBank& bank, const ModelParams& model,
                                                         std::size_t frames) {
  const ModelParams frozen = model.frozen();
  std::map<std::uint32_t, std::vector<double>> means;
  for (const auto& [label, list] : bank.classes()) {
    if (list.empty()) throw DomainError(fmt::format("class_means: class {} has no exemplars", label));
    std::vector<double> acc;
    for (const auto& e : list) {
      auto emb = exemplar_embedding(*e, frozen, frames);
      if (acc.empty()) acc.assign(emb.size(), 0.0);
      for (std::size_t k = 0; k < emb.size(); ++k) acc[k] += emb[k];
    }
    for (auto& v : acc) v /= static_cast<double>(list.size());
    means[label] = std::move(acc);
  }
  return means;
}

}  // namespace condensa
