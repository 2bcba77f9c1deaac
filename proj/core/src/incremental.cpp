#include "condensa/incremental.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "condensa/error.hpp"
#include "condensa/ops.hpp"
#include "condensa/rng.hpp"

namespace condensa {
namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TaskSplit TaskSplit::sequential(std::size_t base, std::span<const std::size_t> increments) {
  TaskSplit s;
  std::uint32_t next = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::uint32_t> stage(n);
    std::iota(stage.begin(), stage.end(), next);
    next += static_cast<std::uint32_t>(n);
    s.stages.push_back(std::move(stage));
  };
  take(base);
  for (std::size_t n : increments) take(n);
  return s;
}

void TaskSplit::validate(std::size_t num_classes) const {
  if (stages.empty()) throw DomainError("task split has no stages");
  std::set<std::uint32_t> seen;
  for (const auto& st : stages) {
    if (st.empty()) throw DomainError("task split contains an empty stage");
    for (auto c : st) {
      if (c >= num_classes) throw DomainError(fmt::format("task split names class {} of {}", c, num_classes));
      if (!seen.insert(c).second) throw DomainError(fmt::format("class {} appears in two stages", c));
    }
  }
  if (seen.size() != num_classes) {
    throw DomainError(fmt::format("task split covers {} of {} classes", seen.size(), num_classes));
  }
}

std::vector<std::vector<Source>> interleave(std::size_t new_count, std::size_t mem_count, std::size_t batch) {
  if (new_count == 0 && mem_count == 0) throw DomainError("interleave: both sources are empty");
  if (batch == 0) throw DomainError("interleave: batch size must be >= 1");
  std::vector<std::vector<Source>> out;
  std::size_t used_new = 0, used_mem = 0;
  while (used_new + used_mem < new_count + mem_count) {
    if (out.empty() || out.back().size() == batch) out.emplace_back();
    // Compare (used_new+1)/new_count against (used_mem+1)/mem_count without division.
    bool take_new;
    if (used_new == new_count) {
      take_new = false;
    } else if (used_mem == mem_count) {
      take_new = true;
    } else {
      take_new = (used_new + 1) * mem_count <= (used_mem + 1) * new_count;
    }
    out.back().push_back(take_new ? Source::fresh : Source::memory);
    ++(take_new ? used_new : used_mem);
  }
  return out;
}

Tensor distill_spatial(Graph& g, const FeatureBundle& cur, const FeatureBundle& prev) {
  if (cur.row_multiplicity != prev.row_multiplicity) {
    throw DimensionError("distill_spatial: bundles come from different temporal layouts");
  }
  Tensor total;
  for (std::size_t l = 0; l < cur.stage_maps.size(); ++l) {
    const Tensor& a = cur.stage_maps[l];
    const Tensor& b = prev.stage_maps[l];
    if (a.shape() != b.shape()) {
      throw DimensionError("distill_spatial: stage map " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    const auto& w = cur.row_multiplicity;
    Tensor width = ops::squared_distance(g, ops::pool_sum(g, a, ops::PoolAxis::width),
                                         ops::pool_sum(g, b, ops::PoolAxis::width), w);
    Tensor height = ops::squared_distance(g, ops::pool_sum(g, a, ops::PoolAxis::height),
                                          ops::pool_sum(g, b, ops::PoolAxis::height), w);
    Tensor layer = ops::add(g, width, height);
    total = total.defined() ? ops::add(g, total, layer) : layer;
  }
  return total;
}

Tensor distill_flat(Graph& g, const Tensor& cur, const Tensor& prev) { return ops::squared_distance(g, cur, prev); }

FeatureBundle exemplar_features(Graph& g, const CondensedExemplar& ex, const ModelParams& model, std::size_t frames) {
  Tensor pixels = ex.to_tensor();
  if (ex.frames == 1) return extract_frame_features(g, pixels.reshaped({ex.channels, ex.height, ex.width}), frames, model);
  return extract_features(g, pixels, model);
}

Tensor cil_loss(Graph& g, std::span<const VideoClip* const> new_batch,
                std::span<const CondensedExemplar* const> mem_batch, const ModelParams& model,
                const ModelSnapshot* old_model, std::span<const std::int64_t> head_index, std::size_t frames,
                CilTerms* terms) {
  const std::size_t n = new_batch.size() + mem_batch.size();
  if (n == 0) throw DomainError("cil_loss: empty batch");
  auto head_of = [&](std::uint32_t label) -> std::size_t {
    if (label >= head_index.size() || head_index[label] < 0) {
      throw DomainError(fmt::format("cil_loss: class {} has no head row", label));
    }
    return static_cast<std::size_t>(head_index[label]);
  };
  CilTerms t;
  Tensor total;
  auto accumulate = [&](const Tensor& v) { total = total.defined() ? ops::add(g, total, v) : v; };
  for (const VideoClip* clip : new_batch) {
    FeatureBundle b = extract_features(g, clip->to_tensor(), model);
    Tensor ce = ops::cross_entropy(g, classify(g, b, model), head_of(clip->label));
    t.ce_new += ce.item();
    accumulate(ce);
  }
  for (const CondensedExemplar* ex : mem_batch) {
    FeatureBundle b = exemplar_features(g, *ex, model, frames);
    Tensor ce = ops::cross_entropy(g, classify(g, b, model), head_of(ex->label));
    t.ce_memory += ce.item();
    accumulate(ce);
    if (old_model) {
      FeatureBundle ob = exemplar_features(g, *ex, old_model->params(), frames);
      Tensor dist = ops::add(g, distill_spatial(g, b, ob), distill_flat(g, b.embedding, ob.embedding));
      t.distill += dist.item();
      accumulate(dist);
    }
  }
  if (terms) {
    const double inv = 1.0 / static_cast<double>(n);
    *terms = {t.ce_new * inv, t.ce_memory * inv, t.distill * inv};
  }
  return ops::scale(g, total, 1.0 / static_cast<double>(n));
}

double evaluate_cnn(const ModelParams& model, std::span<const VideoClip> testset,
                    std::span<const std::uint32_t> head_classes) {
  if (testset.empty()) throw DomainError("evaluate_cnn: empty test set");
  if (head_classes.size() != model.num_classes()) throw DimensionError("evaluate_cnn: head class map has wrong size");
  const ModelParams frozen = model.frozen();
  std::size_t correct = 0;
  for (const auto& clip : testset) {
    Graph g;
    Tensor logits = classify(g, extract_features(g, clip.to_tensor(), frozen), frozen);
    if (head_classes[argmax(logits.data())] == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

std::uint32_t nearest_mean(std::span<const double> e, const std::map<std::uint32_t, std::vector<double>>& means) {
  if (means.empty()) throw DomainError("nearest_mean: no class means");
  std::uint32_t best = means.begin()->first;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [label, mu] : means) {
    if (mu.size() != e.size()) throw DimensionError("nearest_mean: embedding and mean differ in dimension");
    double d = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) d += (e[k] - mu[k]) * (e[k] - mu[k]);
    if (d < best_d) {
      best_d = d;
      best = label;
    }
  }
  return best;
}

double evaluate_nme(const ModelParams& model, const MemoryBank& bank, std::span<const VideoClip> testset,
                    std::size_t frames) {
  if (testset.empty()) throw DomainError("evaluate_nme: empty test set");
  for (const auto& clip : testset) {
    if (!bank.has_class(clip.label)) {
      throw DomainError(fmt::format("evaluate_nme: no exemplars for class {}", clip.label));
    }
  }
  const ModelParams frozen = model.frozen();
  const auto means = class_means(bank, frozen, frames);
  std::size_t correct = 0;
  for (const auto& clip : testset) {
    Graph g;
    Tensor e = extract_features(g, clip.to_tensor(), frozen).embedding;
    if (nearest_mean(e.data(), means) == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

double average_accuracy(std::span<const double> per_stage) {
  if (per_stage.empty()) throw DomainError("average_accuracy: no stages");
  double s = 0.0;
  for (double a : per_stage) s += a;
  return s / static_cast<double>(per_stage.size());
}

IncrementalLearner::IncrementalLearner(const Dataset& data, TaskSplit split, PipelineConfig cfg, std::uint64_t seed)
    : data_(data),
      split_(std::move(split)),
      cfg_(std::move(cfg)),
      seed_(seed),
      model_(ModelParams::init(data.spec.channels, cfg_.shift_fold, mix_seed(seed, 1))),
      bank_(cfg_.memory.videos_per_class),
      head_index_(data.spec.num_classes, -1) {
  split_.validate(data.spec.num_classes);
  validate(cfg_.condense);
  if (cfg_.train.epochs == 0 || cfg_.train.batch_size == 0) throw DomainError("train: epochs and batch size must be >= 1");
}

std::vector<StageReport> IncrementalLearner::run_all() {
  std::vector<StageReport> out;
  for (std::size_t k = done_ + 1; k <= split_.stages.size(); ++k) out.push_back(run_stage(k));
  return out;
}

StageReport IncrementalLearner::run_stage(std::size_t k) {
  if (k != done_ + 1 || k > split_.stages.size()) {
    throw ContractError(fmt::format("run_stage: stage {} requested but next stage is {}", k, done_ + 1));
  }
  const auto& classes = split_.stages[k - 1];
  if (k >= 2) old_.emplace(model_);
  model_ = extend_head(model_, classes.size(), mix_seed(seed_, 100 + k));
  for (auto c : classes) {
    head_index_[c] = static_cast<std::int64_t>(head_classes_.size());
    head_classes_.push_back(c);
  }

  StageReport report;
  report.stage = k;
  report.seen_classes = head_classes_.size();
  train_stage(k, report);
  build_memory(k);

  std::vector<VideoClip> test;
  for (const auto& clip : data_.test)
    if (head_index_[clip.label] >= 0) test.push_back(clip);
  report.acc_cnn = evaluate_cnn(model_, test, head_classes_);
  const bool covered = std::all_of(head_classes_.begin(), head_classes_.end(),
                                   [&](std::uint32_t c) { return bank_.has_class(c); });
  report.acc_nme = covered ? evaluate_nme(model_, bank_, test, data_.spec.frames)
                           : std::numeric_limits<double>::quiet_NaN();
  report.memory_mb = static_cast<double>(bank_.bytes()) / 1e6;
  done_ = k;
  return report;
}

void IncrementalLearner::train_stage(std::size_t k, StageReport& report) {
  const auto& tc = cfg_.train;
  std::vector<const VideoClip*> fresh;
  for (const auto& clip : data_.train)
    if (std::find(split_.stages[k - 1].begin(), split_.stages[k - 1].end(), clip.label) != split_.stages[k - 1].end())
      fresh.push_back(&clip);
  std::vector<const CondensedExemplar*> memory;
  const auto entries = bank_.entries();
  for (const auto& e : entries) memory.push_back(e.get());
  const ModelSnapshot* old = tc.distillation && old_ ? &*old_ : nullptr;

  Rng rng = make_rng(seed_, 200 + k);
  const double lr0 = k == 1 ? tc.lr_base : tc.lr_incremental;
  auto params = model_.parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].numel(), 0.0);
    m2[i].assign(params[i].numel(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = epoch < tc.epochs / 2 ? lr0 : 0.5 * lr0;
    std::shuffle(fresh.begin(), fresh.end(), rng);
    std::shuffle(memory.begin(), memory.end(), rng);
    std::size_t next_fresh = 0, next_mem = 0;
    double loss_sum = 0.0;
    const auto batches = interleave(fresh.size(), memory.size(), tc.batch_size);
    for (const auto& batch : batches) {
      std::vector<const VideoClip*> nb;
      std::vector<const CondensedExemplar*> mb;
      for (Source s : batch) {
        if (s == Source::fresh) nb.push_back(fresh[next_fresh++]);
        else mb.push_back(memory[next_mem++]);
      }
      Graph g;
      Tensor loss = cil_loss(g, nb, mb, model_, old, head_index_, data_.spec.frames);
      if (!std::isfinite(loss.item())) {
        throw OptimizationError(fmt::format("non-finite training loss in stage {} epoch {}", k, epoch), 0);
      }
      loss_sum += loss.item();
      g.backward(loss);
      double norm2 = 0.0;
      for (const auto& p : params)
        if (p.has_grad())
          for (double v : p.grad()) norm2 += v * v;
      const double norm = std::sqrt(norm2);
      const double clip = tc.clip_norm > 0 && norm > tc.clip_norm ? tc.clip_norm / norm : 1.0;
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t j = 0; j < params.size(); ++j) {
        if (!params[j].has_grad()) continue;
        auto d = params[j].data();
        auto gr = params[j].grad();
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double gi = clip * gr[i];
          if (tc.optimizer == Optimizer::sgd) {
            m1[j][i] = tc.momentum * m1[j][i] + gi;
            d[i] -= lr * m1[j][i];
          } else {
            m1[j][i] = kBeta1 * m1[j][i] + (1.0 - kBeta1) * gi;
            m2[j][i] = kBeta2 * m2[j][i] + (1.0 - kBeta2) * gi * gi;
            d[i] -= lr * (m1[j][i] / c1) / (std::sqrt(m2[j][i] / c2) + kEps);
          }
        }
      }
    }
    report.loss_curve.push_back(loss_sum / static_cast<double>(batches.size()));
  }
}

void IncrementalLearner::build_memory(std::size_t k) {
  const std::size_t m = cfg_.memory.videos_per_class;
  if (m == 0) return;
  const ModelParams frozen = model_.frozen();
  std::vector<Tensor> clips;
  std::vector<std::uint32_t> heads;
  std::vector<std::uint32_t> labels;
  for (auto c : split_.stages[k - 1]) {
    std::vector<const VideoClip*> members;
    std::vector<std::vector<double>> embeddings;
    for (const auto& clip : data_.train) {
      if (clip.label != c) continue;
      members.push_back(&clip);
      const Tensor e = clip_embedding(clip.to_tensor(), frozen);
      embeddings.emplace_back(e.data().begin(), e.data().end());
    }
    for (std::size_t i : herding_select(embeddings, std::min(m, members.size()))) {
      clips.push_back(members[i]->to_tensor());
      heads.push_back(static_cast<std::uint32_t>(head_index_[c]));
      labels.push_back(c);
    }
  }
  auto result = condense_exemplars(clips, heads, frozen, cfg_.condense, mix_seed(seed_, 300 + k));
  for (std::size_t i = 0; i < result.exemplars.size(); ++i) {
    auto& ex = result.exemplars[i];
    ex.label = labels[i];
    ex.stage = static_cast<std::uint32_t>(k);
    bank_.insert(std::move(ex));
  }
}

}  // namespace condensa
