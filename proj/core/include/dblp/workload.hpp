#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dblp/tensor.hpp"

namespace dblp {

// ---------------------------------------------------------------------------
// Synthetic gradients with a scripted global norm.

struct NormSegment {
  std::uint64_t first = 0;  // inclusive
  std::uint64_t last = 0;   // inclusive
  double norm = 0.0;

  bool operator==(const NormSegment&) const = default;
};

class NormProfile {
 public:
  NormProfile() = default;
  /// Throws ConfigError for overlapping, unordered, or negative segments.
  explicit NormProfile(std::vector<NormSegment> segments);

  /// A single segment [0, steps) at `norm`.
  static NormProfile constant(double norm, std::uint64_t steps);

  /// Parses `first-last:norm` entries separated by commas,
  /// e.g. "0-19:10,20-39:4".
  static NormProfile parse(std::string_view text);
  std::string to_string() const;

  /// Throws ConfigError unless the segments cover [0, steps) without gaps.
  void require_coverage(std::uint64_t steps) const;

  /// Throws std::out_of_range for a step outside every segment.
  double target(std::uint64_t step) const;

  const std::vector<NormSegment>& segments() const { return segments_; }

 private:
  std::vector<NormSegment> segments_;
};

/// Deterministic pseudo-random tensors whose global L2 norm equals
/// profile.target(step). Same (step, seed) always yields the same tensors.
TensorList synth_gradient(std::uint64_t step, const NormProfile& profile, const TensorLayout& layout,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Softmax regression on Gaussian blobs.

struct BlobDataset {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<float> x;               // row-major, size() x features
  std::vector<std::uint32_t> labels;  // in [0, classes)

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const { return {x.data() + i * features, features}; }

  /// Concatenation of several datasets with the same shape.
  static BlobDataset concat(std::span<const BlobDataset> parts);
};

/// Unit-variance Gaussian blobs around class centers placed on signed
/// coordinate axes, scaled so every pair of centers is at least
/// `separation` apart. Labels cycle through the classes.
BlobDataset make_blobs(std::size_t classes, std::size_t features, std::size_t examples, double separation,
                       std::uint64_t seed);

struct ToyModel {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<float> weight;  // classes x features, row-major
  std::vector<float> bias;    // classes

  static ToyModel init(std::size_t classes, std::size_t features, std::uint64_t seed);

  TensorLayout layout() const;
  TensorList parameters() const;
  /// Throws LayoutMismatch when `params` does not match layout().
  void set_parameters(const TensorList& params);
};

/// Mean softmax cross-entropy over the batch, evaluated in double.
double toy_loss(const ToyModel& model, const BlobDataset& data, std::span<const std::uint32_t> batch);

/// Closed-form gradient of toy_loss: tensors "weight" and "bias".
TensorList toy_grad(const ToyModel& model, const BlobDataset& data, std::span<const std::uint32_t> batch);

/// Fraction of examples whose arg-max logit is the label.
double toy_eval(const ToyModel& model, const BlobDataset& data);

/// `batch` example indices for (seed, step), drawn with replacement.
std::vector<std::uint32_t> sample_batch(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                        std::uint64_t step);

// ---------------------------------------------------------------------------
// Per-worker gradient sources.

class GradientSource {
 public:
  virtual ~GradientSource() = default;
  virtual TensorLayout layout() const = 0;
  virtual TensorList initial_parameters() const = 0;
  virtual TensorList gradient(std::uint64_t step, const TensorList& parameters) = 0;
};

class SyntheticSource final : public GradientSource {
 public:
  SyntheticSource(TensorLayout layout, NormProfile profile, std::uint64_t seed);

  TensorLayout layout() const override { return layout_; }
  TensorList initial_parameters() const override { return zeros_like(layout_); }
  TensorList gradient(std::uint64_t step, const TensorList& parameters) override;

 private:
  TensorLayout layout_;
  NormProfile profile_;
  std::uint64_t seed_;
};

struct ToyParams {
  std::size_t classes = 3;
  std::size_t features = 10;
  std::size_t examples_per_worker = 600;
  std::size_t batch = 32;
  double separation = 6.5;
  std::uint64_t init_seed = 7;
};

class ToySource final : public GradientSource {
 public:
  /// `data_seed` picks this worker's shard; `init_seed` is shared so every
  /// worker starts from the same weights.
  ToySource(const ToyParams& params, std::uint64_t data_seed);

  TensorLayout layout() const override;
  TensorList initial_parameters() const override;
  TensorList gradient(std::uint64_t step, const TensorList& parameters) override;

  const BlobDataset& dataset() const { return data_; }

 private:
  ToyParams params_;
  std::uint64_t data_seed_;
  BlobDataset data_;
  ToyModel scratch_;
};

}  // namespace dblp
