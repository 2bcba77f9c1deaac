#include "condensa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "condensa/error.hpp"

namespace condensa::ops {
namespace {

std::span<double> grad_of(TensorStorage* s) {
  if (s->grad.empty()) s->grad.assign(s->data.size(), 0.0);
  return s->grad;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": produced a non-finite value");
  }
#endif
}

// Output index range [lo, hi) such that out*stride + k - pad lands inside [0, extent).
std::pair<long, long> valid_range(long out_extent, long extent, long stride, long k, long pad) {
  long lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  long hi = extent - 1 + pad - k < 0 ? 0 : (extent - 1 + pad - k) / stride + 1;
  return {lo, std::min(hi, out_extent)};
}

struct ConvGeometry {
  long C, H, W, KH, KW, OH, OW, S, P;
};

// Unfolds one C×H×W image into a (C·KH·KW)×(OH·OW) matrix, zero where padded.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const long Q = g.OH * g.OW;
  std::fill(col, col + g.C * g.KH * g.KW * Q, 0.0);
  for (long c = 0; c < g.C; ++c)
    for (long ky = 0; ky < g.KH; ++ky) {
      const auto [oy0, oy1] = valid_range(g.OH, g.H, g.S, ky, g.P);
      for (long kx = 0; kx < g.KW; ++kx) {
        const auto [ox0, ox1] = valid_range(g.OW, g.W, g.S, kx, g.P);
        double* row = col + ((c * g.KH + ky) * g.KW + kx) * Q;
        for (long oy = oy0; oy < oy1; ++oy) {
          const double* xr = x + (c * g.H + oy * g.S + ky - g.P) * g.W + kx - g.P;
          double* dst = row + oy * g.OW;
          for (long ox = ox0; ox < ox1; ++ox) dst[ox] = xr[ox * g.S];
        }
      }
    }
}

// Adjoint of im2col: scatters column gradients back onto the image.
void col2im(const ConvGeometry& g, const double* col, double* x) {
  const long Q = g.OH * g.OW;
  for (long c = 0; c < g.C; ++c)
    for (long ky = 0; ky < g.KH; ++ky) {
      const auto [oy0, oy1] = valid_range(g.OH, g.H, g.S, ky, g.P);
      for (long kx = 0; kx < g.KW; ++kx) {
        const auto [ox0, ox1] = valid_range(g.OW, g.W, g.S, kx, g.P);
        const double* row = col + ((c * g.KH + ky) * g.KW + kx) * Q;
        for (long oy = oy0; oy < oy1; ++oy) {
          double* xr = x + (c * g.H + oy * g.S + ky - g.P) * g.W + kx - g.P;
          const double* src = row + oy * g.OW;
          for (long ox = ox0; ox < ox1; ++ox) xr[ox * g.S] += src[ox];
        }
      }
    }
}

// Four interleaved partial sums so the reduction vectorizes.
double dot(const double* a, const double* b, long n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  long i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride < 1) throw DomainError("conv2d: stride must be >= 1");
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (static_cast<long>(kernel.dim(1)) != C) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " does not match input " +
                         shape_string(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || static_cast<long>(bias.dim(0)) != O)) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match kernel " +
                         shape_string(kernel.shape()));
  }
  const long S = static_cast<long>(stride), P = static_cast<long>(pad);
  if (H + 2 * P < KH || W + 2 * P < KW) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                         shape_string(x.shape()));
  }
  const long OH = (H + 2 * P - KH) / S + 1, OW = (W + 2 * P - KW) / S + 1;

  const ConvGeometry geo{C, H, W, KH, KW, OH, OW, S, P};
  const long K = C * KH * KW, Q = OH * OW;
  Tensor out = Tensor::zeros({std::size_t(N), std::size_t(O), std::size_t(OH), std::size_t(OW)});
  const double* xin = x.data().data();
  const double* wk = kernel.data().data();
  double* y = out.data().data();

  std::vector<double> col(static_cast<std::size_t>(K * Q));
  for (long n = 0; n < N; ++n) {
    im2col(geo, xin + n * C * H * W, col.data());
    for (long o = 0; o < O; ++o) {
      double* yp = y + (n * O + o) * Q;
      if (bias.defined()) std::fill(yp, yp + Q, bias[o]);
      for (long k = 0; k < K; ++k) {
        const double wv = wk[o * K + k];
        const double* cr = col.data() + k * Q;
        for (long q = 0; q < Q; ++q) yp[q] += wv * cr[q];
      }
    }
  }
  check_finite(out, "conv2d");

  if (Graph::needs_grad({&x, &kernel, &bias})) {
    auto* xs = x.storage();
    auto* ks = kernel.storage();
    auto* bs = bias.defined() ? bias.storage() : nullptr;
    auto* os = out.storage();
    g.record("conv2d", {x, kernel, bias}, out, [=] {
      const double* gy = os->grad.data();
      const double* xin = xs->data.data();
      const double* wk = ks->data.data();
      double* gx = xs->requires_grad ? grad_of(xs).data() : nullptr;
      double* gw = ks->requires_grad ? grad_of(ks).data() : nullptr;
      if (bs && bs->requires_grad) {
        auto gb = grad_of(bs);
        for (long n = 0; n < N; ++n)
          for (long o = 0; o < O; ++o) {
            const double* gp = gy + (n * O + o) * Q;
            double acc = 0.0;
            for (long q = 0; q < Q; ++q) acc += gp[q];
            gb[o] += acc;
          }
      }
      if (!gx && !gw) return;
      std::vector<double> col(static_cast<std::size_t>(K * Q));
      std::vector<double> gcol(gx ? static_cast<std::size_t>(K * Q) : 0);
      for (long n = 0; n < N; ++n) {
        const double* gyn = gy + n * O * Q;
        if (gw) {
          im2col(geo, xin + n * C * H * W, col.data());
          for (long o = 0; o < O; ++o)
            for (long k = 0; k < K; ++k) gw[o * K + k] += dot(gyn + o * Q, col.data() + k * Q, Q);
        }
        if (gx) {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          for (long o = 0; o < O; ++o)
            for (long k = 0; k < K; ++k) {
              const double wv = wk[o * K + k];
              const double* gp = gyn + o * Q;
              double* gc = gcol.data() + k * Q;
              for (long q = 0; q < Q; ++q) gc[q] += wv * gp[q];
            }
          col2im(geo, gcol.data(), gx + n * C * H * W);
        }
      }
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("relu", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xs->data[i] > 0.0) gx[i] += os->grad[i];
    });
  }
  return out;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  const std::size_t K = weight.dim(0), D = weight.dim(1);
  if (x.rank() != 1 && x.rank() != 2) {
    throw DimensionError("linear: input must be D or N×D, got " + shape_string(x.shape()));
  }
  const bool batched = x.rank() == 2;
  const std::size_t N = batched ? x.dim(0) : 1;
  if (x.shape().back() != D) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != K)) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  Tensor out = Tensor::zeros(batched ? Shape{N, K} : Shape{K});
  auto xd = x.data();
  auto wd = weight.data();
  auto yd = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      double acc = bias.defined() ? bias[k] : 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += wd[k * D + d] * xd[n * D + d];
      yd[n * K + k] = acc;
    }
  check_finite(out, "linear");
  if (Graph::needs_grad({&x, &weight, &bias})) {
    auto* xs = x.storage();
    auto* ws = weight.storage();
    auto* bs = bias.defined() ? bias.storage() : nullptr;
    auto* os = out.storage();
    g.record("linear", {x, weight, bias}, out, [=] {
      const auto& gy = os->grad;
      if (xs->requires_grad) {
        auto gx = grad_of(xs);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t d = 0; d < D; ++d) gx[n * D + d] += gy[n * K + k] * ws->data[k * D + d];
      }
      if (ws->requires_grad) {
        auto gw = grad_of(ws);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t d = 0; d < D; ++d) gw[k * D + d] += gy[n * K + k] * xs->data[n * D + d];
      }
      if (bs && bs->requires_grad) {
        auto gb = grad_of(bs);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k) gb[k] += gy[n * K + k];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({N, C});
  auto xd = x.data();
  auto yd = out.data();
  const double inv = 1.0 / static_cast<double>(HW);
  for (std::size_t i = 0; i < N * C; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < HW; ++j) acc += xd[i * HW + j];
    yd[i] = acc * inv;
  }
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("global_avg_pool", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t i = 0; i < N * C; ++i) {
        const double v = os->grad[i] * inv;
        for (std::size_t j = 0; j < HW; ++j) gx[i * HW + j] += v;
      }
    });
  }
  return out;
}

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Tensor out = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xd[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        yd[base + k * inner] = std::exp(xd[base + k * inner] - mx);
        z += yd[base + k * inner];
      }
      for (std::size_t k = 0; k < len; ++k) yd[base + k * inner] /= z;
    }
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("softmax", {x}, out, [=] {
      auto gx = grad_of(xs);
      const auto& y = os->data;
      const auto& gy = os->grad;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * inner;
            gx[i] += y[i] * (gy[i] - dot);
          }
        }
    });
  }
  return out;
}

Tensor cross_entropy(Graph& g, const Tensor& logits, std::size_t label) {
  require_rank(logits, 1, "cross_entropy", "logits");
  const std::size_t K = logits.dim(0);
  if (label >= K) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                      std::to_string(K) + " classes");
  }
  auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  double se = 0.0;
  for (double v : z) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  Tensor out = Tensor::scalar(lse - z[label]);
  check_finite(out, "cross_entropy");
  if (Graph::needs_grad({&logits})) {
    auto* ls = logits.storage();
    auto* os = out.storage();
    g.record("cross_entropy", {logits}, out, [=] {
      auto gl = grad_of(ls);
      const double up = os->grad[0];
      for (std::size_t k = 0; k < K; ++k) {
        const double p = std::exp(ls->data[k] - lse);
        gl[k] += up * (p - (k == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor squared_distance(Graph& g, const Tensor& a, const Tensor& b, std::span<const double> row_weights) {
  require_same_shape(a, b, "squared_distance");
  const std::size_t n = a.numel();
  std::size_t row = n;
  if (!row_weights.empty()) {
    if (a.rank() == 0 || a.dim(0) != row_weights.size()) {
      throw DimensionError("squared_distance: " + std::to_string(row_weights.size()) +
                           " row weights for shape " + shape_string(a.shape()));
    }
    row = n / a.dim(0);
  }
  std::vector<double> w(row_weights.begin(), row_weights.end());
  auto ad = a.data();
  auto bd = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ad[i] - bd[i];
    acc += (w.empty() ? 1.0 : w[i / row]) * d * d;
  }
  Tensor out = Tensor::scalar(acc);
  if (Graph::needs_grad({&a, &b})) {
    auto* as = a.storage();
    auto* bs = b.storage();
    auto* os = out.storage();
    g.record("squared_distance", {a, b}, out, [=, w = std::move(w)] {
      const double up = os->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double d = 2.0 * up * (w.empty() ? 1.0 : w[i / row]) * (as->data[i] - bs->data[i]);
        if (as->requires_grad) grad_of(as)[i] += d;
        if (bs->requires_grad) grad_of(bs)[i] -= d;
      }
    });
  }
  return out;
}

Tensor mse(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw DimensionError("mse: empty input");
  return scale(g, squared_distance(g, a, b), 1.0 / static_cast<double>(a.numel()));
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data(), bd = b.data();
  auto yd = out.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] + bd[i];
  if (Graph::needs_grad({&a, &b})) {
    auto* as = a.storage();
    auto* bs = b.storage();
    auto* os = out.storage();
    g.record("add", {a, b}, out, [=] {
      if (as->requires_grad) {
        auto ga = grad_of(as);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        auto gb = grad_of(bs);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += os->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data(), bd = b.data();
  auto yd = out.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] - bd[i];
  if (Graph::needs_grad({&a, &b})) {
    auto* as = a.storage();
    auto* bs = b.storage();
    auto* os = out.storage();
    g.record("sub", {a, b}, out, [=] {
      if (as->requires_grad) {
        auto ga = grad_of(as);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += os->grad[i];
      }
      if (bs->requires_grad) {
        auto gb = grad_of(bs);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= os->grad[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto yd = out.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = s * ad[i];
  if (Graph::needs_grad({&a})) {
    auto* as = a.storage();
    auto* os = out.storage();
    g.record("scale", {a}, out, [=] {
      auto ga = grad_of(as);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * os->grad[i];
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (Graph::needs_grad({&a})) {
    auto* as = a.storage();
    auto* os = out.storage();
    g.record("sum", {a}, out, [=] {
      auto ga = grad_of(as);
      for (auto& v : ga) v += os->grad[0];
    });
  }
  return out;
}

Tensor weighted_sum(Graph& g, const Tensor& weights, const Tensor& stack) {
  require_rank(weights, 1, "weighted_sum", "weights");
  if (stack.rank() < 1 || stack.dim(0) != weights.dim(0)) {
    throw DimensionError("weighted_sum: weights " + shape_string(weights.shape()) +
                         " do not match stack " + shape_string(stack.shape()));
  }
  const std::size_t T = weights.dim(0);
  Shape item(stack.shape().begin() + 1, stack.shape().end());
  const std::size_t M = shape_numel(item);
  Tensor out = Tensor::zeros(item);
  auto wd = weights.data();
  auto sd = stack.data();
  auto yd = out.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < M; ++i) yd[i] += wd[t] * sd[t * M + i];
  if (Graph::needs_grad({&weights, &stack})) {
    auto* ws = weights.storage();
    auto* ss = stack.storage();
    auto* os = out.storage();
    g.record("weighted_sum", {weights, stack}, out, [=] {
      const auto& gy = os->grad;
      if (ws->requires_grad) {
        auto gw = grad_of(ws);
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t i = 0; i < M; ++i) acc += gy[i] * ss->data[t * M + i];
          gw[t] += acc;
        }
      }
      if (ss->requires_grad) {
        auto gs = grad_of(ss);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t i = 0; i < M; ++i) gs[t * M + i] += ws->data[t] * gy[i];
      }
    });
  }
  return out;
}

Tensor replicate(Graph& g, const Tensor& x, std::size_t n) {
  if (n == 0) throw DomainError("replicate: count must be >= 1");
  Shape shape{n};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t M = x.numel();
  Tensor out = Tensor::zeros(shape);
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t r = 0; r < n; ++r) std::copy(xd.begin(), xd.end(), yd.begin() + r * M);
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("replicate", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < M; ++i) gx[i] += os->grad[r * M + i];
    });
  }
  return out;
}

Tensor pool_sum(Graph& g, const Tensor& x, PoolAxis axis) {
  require_rank(x, 4, "pool_sum", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool over_width = axis == PoolAxis::width;
  const std::size_t keep = over_width ? H : W;
  Tensor out = Tensor::zeros({N, C, keep});
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) yd[nc * keep + (over_width ? h : w)] += xd[(nc * H + h) * W + w];
  if (Graph::needs_grad({&x})) {
    auto* xs = x.storage();
    auto* os = out.storage();
    g.record("pool_sum", {x}, out, [=] {
      auto gx = grad_of(xs);
      for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            gx[(nc * H + h) * W + w] += os->grad[nc * keep + (over_width ? h : w)];
    });
  }
  return out;
}

}  // namespace condensa::ops
