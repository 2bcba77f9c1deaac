#include "condensa/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "condensa/error.hpp"
#include "condensa/ops.hpp"
#include "condensa/rng.hpp"

namespace condensa {
namespace {

std::span<double> grad_of(TensorStorage* s) {
  if (s->grad.empty()) s->grad.assign(s->data.size(), 0.0);
  return s->grad;
}

void validate_fold(double fold) {
  if (!(fold >= 0.0 && fold <= 0.5)) {
    throw DomainError("shift fold must lie in [0, 0.5], got " + std::to_string(fold));
  }
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor deep_copy(const Tensor& t, bool requires_grad) {
  Tensor c = t.clone();
  c.set_requires_grad(requires_grad);
  return c;
}

// One map row per distinct time step of a T-fold replicated frame after the
// temporal shift: t=0 (forward group zeroed), interior steps (unchanged),
// t=T-1 (backward group zeroed).
struct ReplicaRows {
  std::vector<int> zero_forward, zero_backward;
  std::vector<double> multiplicity;
};

ReplicaRows replica_rows(std::size_t frames, std::size_t shifted) {
  ReplicaRows r;
  if (shifted == 0) {
    r.zero_forward = {0};
    r.zero_backward = {0};
    r.multiplicity = {static_cast<double>(frames)};
  } else if (frames == 1) {
    r.zero_forward = {1};
    r.zero_backward = {1};
    r.multiplicity = {1.0};
  } else if (frames == 2) {
    r.zero_forward = {1, 0};
    r.zero_backward = {0, 1};
    r.multiplicity = {1.0, 1.0};
  } else {
    r.zero_forward = {1, 0, 0};
    r.zero_backward = {0, 0, 1};
    r.multiplicity = {1.0, static_cast<double>(frames - 2), 1.0};
  }
  return r;
}

Tensor replicated_shift(Graph& g, const Tensor& x, const ReplicaRows& rows, std::size_t shifted) {
  const std::size_t C = x.dim(1), HW = x.dim(2) * x.dim(3), V = rows.multiplicity.size();
  Tensor out = Tensor::zeros({V, C, x.dim(2), x.dim(3)});
  auto xd = x.data();
  auto yd = out.data();
  auto keep = [zf = rows.zero_forward, zb = rows.zero_backward, shifted](std::size_t v, std::size_t c) {
    if (c < shifted) return !zf[v];
    if (c < 2 * shifted) return !zb[v];
    return true;
  };
  for (std::size_t v = 0; v < V; ++v)
    for (std::size_t c = 0; c < C; ++c)
      if (keep(v, c)) std::copy_n(xd.begin() + c * HW, HW, yd.begin() + (v * C + c) * HW);
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("replicated_shift", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t c = 0; c < C; ++c)
          if (keep(v, c))
            for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += os->grad[(v * C + c) * HW + i];
    });
  }
  return out;
}

FeatureBundle second_stage(Graph& g, const Tensor& shifted_map, std::vector<double> multiplicity,
                           double total_frames, const ModelParams& p) {
  FeatureBundle b;
  b.stage_maps[0] = shifted_map;
  b.stage_maps[1] = ops::relu(g, ops::conv2d(g, shifted_map, p.conv2_w, p.conv2_b, 2, 1));
  Tensor pooled = ops::global_avg_pool(g, b.stage_maps[1]);
  const std::size_t rows = multiplicity.size();
  std::vector<double> w(rows);
  for (std::size_t i = 0; i < rows; ++i) w[i] = multiplicity[i] / total_frames;
  b.embedding = ops::weighted_sum(g, Tensor::from({rows}, std::move(w)), pooled);
  b.row_multiplicity = std::move(multiplicity);
  return b;
}

}  // namespace

ModelParams ModelParams::init(std::size_t channels, double shift_fold, std::uint64_t seed) {
  validate_fold(shift_fold);
  if (channels == 0) throw DomainError("model needs at least one input channel");
  Rng rng = make_rng(seed, 0x6d6f64656cULL);
  ModelParams p;
  p.conv1_w = gaussian({kConv1Channels, channels, 3, 3}, std::sqrt(2.0 / (9.0 * channels)), rng);
  p.conv1_b = Tensor::zeros({kConv1Channels}, true);
  p.conv2_w = gaussian({kEmbeddingDim, kConv1Channels, 3, 3}, std::sqrt(2.0 / (9.0 * kConv1Channels)), rng);
  p.conv2_b = Tensor::zeros({kEmbeddingDim}, true);
  p.head_w = Tensor::zeros({0, kEmbeddingDim}, true);
  p.head_b = Tensor::zeros({0}, true);
  p.shift_fold = shift_fold;
  return p;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.conv1_w = deep_copy(conv1_w, conv1_w.requires_grad());
  p.conv1_b = deep_copy(conv1_b, conv1_b.requires_grad());
  p.conv2_w = deep_copy(conv2_w, conv2_w.requires_grad());
  p.conv2_b = deep_copy(conv2_b, conv2_b.requires_grad());
  p.head_w = deep_copy(head_w, head_w.requires_grad());
  p.head_b = deep_copy(head_b, head_b.requires_grad());
  p.shift_fold = shift_fold;
  return p;
}

ModelParams ModelParams::frozen() const {
  ModelParams p = clone();
  for (auto& t : p.parameters()) t.set_requires_grad(false);
  return p;
}

bool bit_equal(const ModelParams& a, const ModelParams& b) {
  if (a.shift_fold != b.shift_fold) return false;
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape()) return false;
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin())) return false;
  }
  return true;
}

std::size_t shifted_channel_count(std::size_t channels, double fold) {
  validate_fold(fold);
  return static_cast<std::size_t>(std::floor(fold * static_cast<double>(channels)));
}

Tensor temporal_shift(Graph& g, const Tensor& x, double fold) {
  if (x.rank() != 4) throw DimensionError("temporal_shift: expected T×C×H×W, got " + shape_string(x.shape()));
  const std::size_t T = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (T == 0) throw DomainError("temporal_shift: clip has no frames");
  const std::size_t n = shifted_channel_count(C, fold);
  // Source time step for (t, c), or -1 for a zero-filled slot.
  auto source = [=](std::size_t t, std::size_t c) -> long {
    if (c < n) return t == 0 ? -1 : static_cast<long>(t) - 1;
    if (c < 2 * n) return t + 1 >= T ? -1 : static_cast<long>(t) + 1;
    return static_cast<long>(t);
  };
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const long s = source(t, c);
      if (s >= 0) std::copy_n(xd.begin() + (s * C + c) * HW, HW, yd.begin() + (t * C + c) * HW);
    }
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("temporal_shift", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          const long s = source(t, c);
          if (s < 0) continue;
          for (std::size_t i = 0; i < HW; ++i) gx[(s * C + c) * HW + i] += os->grad[(t * C + c) * HW + i];
        }
    });
  }
  return out;
}

FeatureBundle extract_features(Graph& g, const Tensor& clip, const ModelParams& p) {
  if (clip.rank() != 4 || clip.dim(0) == 0 || clip.dim(1) != p.channels()) {
    throw DimensionError("extract_features: expected T×" + std::to_string(p.channels()) + "×H×W clip, got " +
                         shape_string(clip.shape()));
  }
  const std::size_t T = clip.dim(0);
  Tensor a1 = ops::relu(g, ops::conv2d(g, clip, p.conv1_w, p.conv1_b, 1, 1));
  Tensor s1 = temporal_shift(g, a1, p.shift_fold);
  return second_stage(g, s1, std::vector<double>(T, 1.0), static_cast<double>(T), p);
}

FeatureBundle extract_frame_features(Graph& g, const Tensor& frame, std::size_t frames, const ModelParams& p) {
  if (frame.rank() != 3 || frame.dim(0) != p.channels()) {
    throw DimensionError("extract_frame_features: expected " + std::to_string(p.channels()) +
                         "×H×W frame, got " + shape_string(frame.shape()));
  }
  if (frames == 0) throw DomainError("extract_frame_features: replication count must be >= 1");
  Tensor x = ops::replicate(g, frame, 1);  // 1×C×H×W, differentiable in frame
  Tensor a1 = ops::relu(g, ops::conv2d(g, x, p.conv1_w, p.conv1_b, 1, 1));
  const std::size_t n = shifted_channel_count(a1.dim(1), p.shift_fold);
  ReplicaRows rows = replica_rows(frames, n);
  Tensor s1 = replicated_shift(g, a1, rows, n);
  return second_stage(g, s1, rows.multiplicity, static_cast<double>(frames), p);
}

Tensor classify(Graph& g, const FeatureBundle& bundle, const ModelParams& p) {
  if (p.num_classes() == 0) throw DomainError("classify: head has no classes");
  return ops::linear(g, bundle.embedding, p.head_w, p.head_b);
}

ModelParams extend_head(const ModelParams& params, std::size_t n_new, std::uint64_t seed) {
  if (n_new == 0) throw DomainError("extend_head: must add at least one class");
  ModelParams p = params.clone();
  const std::size_t K = params.num_classes(), D = params.head_w.dim(1);
  Rng rng = make_rng(seed, 0x68656164ULL + K);
  std::normal_distribution<double> dist(0.0, 0.01);
  std::vector<double> w(params.head_w.data().begin(), params.head_w.data().end());
  std::vector<double> b(params.head_b.data().begin(), params.head_b.data().end());
  for (std::size_t i = 0; i < n_new * D; ++i) w.push_back(dist(rng));
  b.resize(K + n_new, 0.0);
  p.head_w = Tensor::from({K + n_new, D}, std::move(w), params.head_w.requires_grad());
  p.head_b = Tensor::from({K + n_new}, std::move(b), params.head_b.requires_grad());
  return p;
}

}  // namespace condensa
