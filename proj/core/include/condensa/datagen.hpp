#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "condensa/tensor.hpp"

namespace condensa {

/// uint8 pixel block T×C×H×W with its class label.
struct VideoClip {
  std::size_t frames = 0, channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
  std::uint32_t label = 0;
  std::uint64_t instance = 0;

  std::size_t frame_size() const { return channels * height * width; }
  /// T×C×H×W float tensor, byte/255.
  Tensor to_tensor() const;
  bool operator==(const VideoClip&) const = default;
};

enum class ShapeKind { square, disc, cross };
enum class MotionKind { linear, circular, zigzag };

struct ClassParams {
  std::uint32_t class_id = 0;
  ShapeKind shape = ShapeKind::square;
  MotionKind motion = MotionKind::linear;
  unsigned speed_level = 0;
  double speed = 2.0;  // pixels per frame
  double angle = 0.0;  // heading of linear motion, radians
};

/// Class id -> (shape, motion, speed level). Injective over all ids.
ClassParams class_params(std::uint32_t class_id);

struct SynthSpec {
  std::size_t num_classes = 8;
  std::size_t train_per_class = 20;
  std::size_t test_per_class = 10;
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  double noise_std = 0.05;
  std::uint64_t seed = 7;
};

struct Dataset {
  SynthSpec spec;
  std::vector<VideoClip> train, test;
};

/// Pixel value in [0,1] -> byte, clamped, rounding half up.
std::uint8_t quantize_unit(double v);

/// Deterministic in (spec geometry, params, instance_seed). The object starts
/// at a seeded position and reflects off the borders.
VideoClip render_clip(const SynthSpec& spec, const ClassParams& params, std::uint64_t instance_seed);

/// Object centre of `params` at frame t for the given instance seed (the
/// trajectory render_clip rasterizes).
std::array<double, 2> object_center(const SynthSpec& spec, const ClassParams& params,
                                     std::uint64_t instance_seed, std::size_t t);

/// Seed of the i-th clip of a class; train uses i < train_per_class, test the
/// following test_per_class indices, so the two seed sets never intersect.
std::uint64_t instance_seed(const SynthSpec& spec, std::uint32_t class_id, std::size_t index);

Dataset generate_dataset(const SynthSpec& spec);

}  // namespace condensa
