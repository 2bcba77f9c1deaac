#pragma once
// Shared helpers for tests: random inputs and clean-room reference
// implementations that do not reuse the library's ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "condensa/model.hpp"
#include "condensa/rng.hpp"
#include "condensa/tensor.hpp"

namespace testsupport {

using condensa::Rng;
using condensa::Shape;
using condensa::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(condensa::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from zero, so ReLU kinks stay outside the FD stencil.
inline Tensor random_nonzero(Shape shape, Rng& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(condensa::shape_numel(shape));
  for (double& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// 4-D array indexed [a][b][c][d] over a flat row-major vector.
struct Grid4 {
  std::size_t A, B, C, D;
  std::vector<double> v;
  Grid4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) : A(a), B(b), C(c), D(d), v(a * b * c * d, 0.0) {}
  double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) { return v[((a * B + b) * C + c) * D + d]; }
  double at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return v[((a * B + b) * C + c) * D + d];
  }
};

inline Grid4 naive_conv(const Grid4& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t pad) {
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  const std::size_t OH = (x.C + 2 * pad - KH) / stride + 1, OW = (x.D + 2 * pad - KW) / stride + 1;
  Grid4 y(x.A, O, OH, OW);
  for (std::size_t n = 0; n < x.A; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = bias.defined() ? bias[o] : 0.0;
          for (std::size_t c = 0; c < x.B; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long yy = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(x.C) || xx >= static_cast<long>(x.D)) continue;
                acc += kernel[((o * x.B + c) * KH + ky) * KW + kx] * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

inline Grid4 to_grid(const Tensor& t) {
  Grid4 g(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
  std::copy(t.data().begin(), t.data().end(), g.v.begin());
  return g;
}

/// Straightforward forward pass of the extractor, written without the library ops.
inline std::vector<double> naive_embedding(const Tensor& clip, const condensa::ModelParams& p) {
  Grid4 a = naive_conv(to_grid(clip), p.conv1_w, p.conv1_b, 1, 1);
  for (double& v : a.v) v = std::max(v, 0.0);
  const std::size_t T = a.A, C = a.B;
  const std::size_t n = static_cast<std::size_t>(std::floor(p.shift_fold * static_cast<double>(C)));
  Grid4 s(T, C, a.C, a.D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < a.C; ++y)
        for (std::size_t x = 0; x < a.D; ++x) {
          long src = static_cast<long>(t);
          if (c < n) src = static_cast<long>(t) - 1;
          else if (c < 2 * n) src = static_cast<long>(t) + 1;
          s.at(t, c, y, x) = (src < 0 || src >= static_cast<long>(T)) ? 0.0 : a.at(src, c, y, x);
        }
  Grid4 b = naive_conv(s, p.conv2_w, p.conv2_b, 2, 1);
  std::vector<double> e(b.B, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < b.B; ++c) {
      double acc = 0.0;
      for (std::size_t y = 0; y < b.C; ++y)
        for (std::size_t x = 0; x < b.D; ++x) acc += std::max(b.at(t, c, y, x), 0.0);
      e[c] += acc / static_cast<double>(b.C * b.D) / static_cast<double>(T);
    }
  return e;
}

/// Replicates a C×H×W frame into a T×C×H×W clip.
inline Tensor replicate_frame(const Tensor& frame, std::size_t T) {
  std::vector<double> v;
  v.reserve(T * frame.numel());
  for (std::size_t t = 0; t < T; ++t) v.insert(v.end(), frame.data().begin(), frame.data().end());
  return Tensor::from({T, frame.dim(0), frame.dim(1), frame.dim(2)}, std::move(v));
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Herding by exhaustive greedy evaluation of every candidate, computed with
/// explicit running means rather than incremental sums.
inline std::vector<std::size_t> brute_force_herding(const std::vector<std::vector<double>>& x, std::size_t m) {
  const std::size_t n = x.size(), d = x.empty() ? 0 : x[0].size();
  std::vector<double> mu(d, 0.0);
  for (const auto& row : x)
    for (std::size_t k = 0; k < d; ++k) mu[k] += row[k] / static_cast<double>(n);
  std::vector<std::size_t> chosen;
  std::vector<bool> used(n, false);
  for (std::size_t j = 1; j <= m; ++j) {
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      std::vector<double> mean(d, 0.0);
      for (std::size_t c : chosen)
        for (std::size_t k = 0; k < d; ++k) mean[k] += x[c][k];
      for (std::size_t k = 0; k < d; ++k) mean[k] = (mean[k] + x[i][k]) / static_cast<double>(j);
      dist[i] = sq_dist(mu, mean);
    }
    const double lo = *std::min_element(dist.begin(), dist.end());
    std::size_t best = 0;
    while (used[best] || dist[best] > lo + 1e-12 * std::max(lo, 1e-300)) ++best;
    used[best] = true;
    chosen.push_back(best);
  }
  return chosen;
}

inline std::uint32_t brute_force_nearest(const std::vector<double>& e,
                                         const std::map<std::uint32_t, std::vector<double>>& means) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [label, mu] : means) {
    const double d = sq_dist(e, mu);
    if (d < best_d) {
      best_d = d;
      best = label;
    }
  }
  return best;
}

}  // namespace testsupport
