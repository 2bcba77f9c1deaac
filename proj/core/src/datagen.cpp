#include "condensa/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "condensa/error.hpp"
#include "condensa/rng.hpp"

namespace condensa {
namespace {

// Per-instance variation: heading offset (radians), radius and brightness factors.
constexpr double kHeadingJitter = 0.3, kSizeJitter = 0.2, kGainJitter = 0.3;

double object_radius(const SynthSpec& s) {
  return std::max(1.5, static_cast<double>(std::min(s.height, s.width)) / 6.0);
}

// Reflect p into [lo, hi].
double reflect(double p, double lo, double hi) {
  if (hi <= lo) return lo;
  const double span = hi - lo;
  double q = std::fmod(p - lo, 2.0 * span);
  if (q < 0) q += 2.0 * span;
  return lo + (q <= span ? q : 2.0 * span - q);
}

struct Trajectory {
  double x0, y0, phase, direction, heading, scale, gain;
};

Trajectory draw_trajectory(const SynthSpec& s, const ClassParams& p, std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  const double r = object_radius(s);
  const double orbit = p.motion == MotionKind::circular ? std::min(s.height, s.width) / 5.0 : 0.0;
  auto uniform = [&](double lo, double hi) {
    if (hi <= lo) return (lo + hi) / 2.0;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  Trajectory tr;
  tr.x0 = uniform(r + orbit, s.width - 1 - r - orbit);
  tr.y0 = uniform(r + orbit, s.height - 1 - r - orbit);
  tr.phase = uniform(0.0, 2.0 * std::numbers::pi);
  tr.direction = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  tr.heading = p.angle + uniform(-kHeadingJitter, kHeadingJitter);
  tr.scale = uniform(1.0 - kSizeJitter, 1.0 + kSizeJitter);
  tr.gain = uniform(1.0 - kGainJitter, 1.0);
  return tr;
}

bool inside(ShapeKind shape, double dx, double dy, double r) {
  switch (shape) {
    case ShapeKind::square:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::disc:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::cross:
      return (std::abs(dx) <= r && std::abs(dy) <= r / 3.0) || (std::abs(dy) <= r && std::abs(dx) <= r / 3.0);
  }
  return false;
}

double shape_intensity(ShapeKind shape, std::size_t channel, std::size_t channels) {
  const auto primary = static_cast<std::size_t>(shape) % channels;
  return channel == primary ? 1.0 : 0.25;
}

}  // namespace

Tensor VideoClip::to_tensor() const {
  std::vector<double> v(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) v[i] = pixels[i] / 255.0;
  return Tensor::from({frames, channels, height, width}, std::move(v));
}

ClassParams class_params(std::uint32_t class_id) {
  ClassParams p;
  p.class_id = class_id;
  // Latin square over each block of nine ids: consecutive ids differ in both
  // shape and motion.
  p.shape = static_cast<ShapeKind>(class_id % 3);
  p.motion = static_cast<MotionKind>((class_id + class_id / 3) % 3);
  p.speed_level = class_id / 9;
  p.speed = 3.0 + p.speed_level;
  // Headings spread by the golden ratio so linear classes point different ways.
  const double frac = std::fmod(class_id * 0.6180339887498949, 1.0);
  p.angle = 2.0 * std::numbers::pi * frac;
  return p;
}

std::uint8_t quantize_unit(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

std::array<double, 2> object_center(const SynthSpec& s, const ClassParams& p, std::uint64_t seed, std::size_t t) {
  const Trajectory tr = draw_trajectory(s, p, seed);
  const double r = object_radius(s);
  const double td = static_cast<double>(t);
  double x = tr.x0, y = tr.y0;
  switch (p.motion) {
    case MotionKind::linear:
      x += td * p.speed * std::cos(tr.heading);
      y += td * p.speed * std::sin(tr.heading);
      break;
    case MotionKind::circular: {
      const double orbit = std::min(s.height, s.width) / 5.0;
      const double omega = orbit > 0 ? 0.25 * p.speed / orbit : 0.0;
      x += orbit * std::cos(tr.phase + tr.direction * omega * td);
      y += orbit * std::sin(tr.phase + tr.direction * omega * td);
      break;
    }
    case MotionKind::zigzag: {
      const std::size_t k = t % 4;
      const double tri = k <= 2 ? static_cast<double>(k) : 4.0 - static_cast<double>(k);
      x += tr.direction * td * p.speed;
      y += (tri - 1.0) * 3.0 * p.speed;
      break;
    }
  }
  return {reflect(x, r, s.width - 1 - r), reflect(y, r, s.height - 1 - r)};
}

VideoClip render_clip(const SynthSpec& s, const ClassParams& p, std::uint64_t seed) {
  if (s.frames * s.channels * s.height * s.width == 0) throw DomainError("render_clip: empty clip geometry");
  VideoClip clip;
  clip.frames = s.frames;
  clip.channels = s.channels;
  clip.height = s.height;
  clip.width = s.width;
  clip.label = p.class_id;
  clip.instance = seed;
  clip.pixels.resize(s.frames * s.channels * s.height * s.width);

  Rng noise_rng = make_rng(seed, 2);
  std::normal_distribution<double> noise(0.0, s.noise_std > 0 ? s.noise_std : 1.0);
  const Trajectory tr = draw_trajectory(s, p, seed);
  const double r = object_radius(s) * tr.scale;
  std::size_t i = 0;
  for (std::size_t t = 0; t < s.frames; ++t) {
    const auto [cx, cy] = object_center(s, p, seed, t);
    for (std::size_t c = 0; c < s.channels; ++c) {
      const double level = tr.gain * shape_intensity(p.shape, c, s.channels);
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x, ++i) {
          double v = inside(p.shape, x - cx, y - cy, r) ? level : 0.0;
          if (s.noise_std > 0) v += noise(noise_rng);
          clip.pixels[i] = quantize_unit(v);
        }
    }
  }
  return clip;
}

std::uint64_t instance_seed(const SynthSpec& s, std::uint32_t class_id, std::size_t index) {
  return mix_seed(s.seed, (static_cast<std::uint64_t>(class_id) << 32) | index);
}

Dataset generate_dataset(const SynthSpec& s) {
  if (s.num_classes == 0) throw DomainError("generate_dataset: need at least one class");
  Dataset d;
  d.spec = s;
  d.train.reserve(s.num_classes * s.train_per_class);
  d.test.reserve(s.num_classes * s.test_per_class);
  for (std::uint32_t c = 0; c < s.num_classes; ++c) {
    const ClassParams p = class_params(c);
    for (std::size_t i = 0; i < s.train_per_class; ++i) d.train.push_back(render_clip(s, p, instance_seed(s, c, i)));
    for (std::size_t i = 0; i < s.test_per_class; ++i)
      d.test.push_back(render_clip(s, p, instance_seed(s, c, s.train_per_class + i)));
  }
  return d;
}

}  // namespace condensa
