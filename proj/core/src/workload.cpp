#include "dblp/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "dblp/error.hpp"
#include "dblp/lossnet.hpp"

namespace dblp {
namespace {

double uniform_pm1(std::uint64_t bits) { return 2.0 * unit_interval(bits) - 1.0; }

double gaussian(std::uint64_t seed, std::uint64_t stream, std::uint64_t round, std::uint64_t index) {
  // Box-Muller over two independent counters.
  const double u1 = 1.0 - unit_interval(counter_hash(seed, stream, round, 2 * index));
  const double u2 = unit_interval(counter_hash(seed, stream, round, 2 * index + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double parse_double(std::string_view text, std::string_view what) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("bad {} '{}'", what, text));
  }
}

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(fmt::format("bad {} '{}'", what, text));
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Row-wise logits -> probabilities, in place.
void softmax(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

void logits(const ToyModel& model, std::span<const float> x, std::vector<double>& z) {
  z.assign(model.classes, 0.0);
  for (std::size_t c = 0; c < model.classes; ++c) {
    double acc = model.bias[c];
    const float* w = model.weight.data() + c * model.features;
    for (std::size_t d = 0; d < model.features; ++d) acc += static_cast<double>(w[d]) * x[d];
    z[c] = acc;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

NormProfile::NormProfile(std::vector<NormSegment> segments) : segments_(std::move(segments)) {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (s.first > s.last) throw ConfigError(fmt::format("norm segment {}-{} is reversed", s.first, s.last));
    if (!(s.norm >= 0.0) || !std::isfinite(s.norm)) {
      throw ConfigError(fmt::format("norm segment {}-{} has invalid norm {}", s.first, s.last, s.norm));
    }
    if (i > 0 && s.first <= segments_[i - 1].last) {
      throw ConfigError(fmt::format("norm segment starting at {} overlaps or is out of order", s.first));
    }
  }
}

NormProfile NormProfile::constant(double norm, std::uint64_t steps) {
  if (steps == 0) throw ConfigError("norm profile needs at least one step");
  return NormProfile({{0, steps - 1, norm}});
}

NormProfile NormProfile::parse(std::string_view text) {
  std::vector<NormSegment> segments;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto entry = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (entry.empty()) continue;
    const auto colon = entry.find(':');
    const auto dash = entry.find('-');
    if (colon == std::string_view::npos || dash == std::string_view::npos || dash > colon) {
      throw ConfigError(fmt::format("norm segment '{}' is not first-last:norm", entry));
    }
    segments.push_back({parse_u64(trim(entry.substr(0, dash)), "segment start"),
                        parse_u64(trim(entry.substr(dash + 1, colon - dash - 1)), "segment end"),
                        parse_double(trim(entry.substr(colon + 1)), "segment norm")});
  }
  if (segments.empty()) throw ConfigError("norm profile is empty");
  return NormProfile(std::move(segments));
}

std::string NormProfile::to_string() const {
  std::string out;
  for (const auto& s : segments_) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}-{}:{}", s.first, s.last, s.norm);
  }
  return out;
}

void NormProfile::require_coverage(std::uint64_t steps) const {
  std::uint64_t next = 0;
  for (const auto& s : segments_) {
    if (next >= steps) break;
    if (s.first != next) throw ConfigError(fmt::format("norm profile has a gap at step {}", next));
    next = s.last + 1;
  }
  if (next < steps) throw ConfigError(fmt::format("norm profile ends before step {}", steps - 1));
}

double NormProfile::target(std::uint64_t step) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), step,
                             [](std::uint64_t s, const NormSegment& seg) { return s < seg.first; });
  if (it == segments_.begin() || step > std::prev(it)->last) {
    throw std::out_of_range(fmt::format("step {} outside the norm profile", step));
  }
  return std::prev(it)->norm;
}

TensorList synth_gradient(std::uint64_t step, const NormProfile& profile, const TensorLayout& layout,
                          std::uint64_t seed) {
  const double target = profile.target(step);
  auto out = zeros_like(layout);
  // Element k takes 24 bits from half of mix(base + k / 2), keyed by (seed, step).
  const auto base = counter_hash(seed, static_cast<std::uint64_t>(Stream::Gradient), step, 0);
  std::uint64_t index = 0;
  std::uint64_t bits = 0;
  double sum = 0.0;
  for (auto& t : out) {
    for (auto& v : t.values) {
      if (index % 2 == 0) bits = splitmix64_mix(base + index / 2);
      const auto half = static_cast<std::uint32_t>(index % 2 == 0 ? bits : bits >> 32);
      ++index;
      v = static_cast<float>(static_cast<double>(half >> 8) * 0x1.0p-23 - 1.0);
      sum += static_cast<double>(v) * v;
    }
  }
  const double scale = sum > 0.0 ? target / std::sqrt(sum) : 0.0;
  for (auto& t : out) {
    for (auto& v : t.values) v = static_cast<float>(v * scale);
  }
  return out;
}

// ---------------------------------------------------------------------------

BlobDataset BlobDataset::concat(std::span<const BlobDataset> parts) {
  BlobDataset out;
  if (parts.empty()) return out;
  out.classes = parts.front().classes;
  out.features = parts.front().features;
  for (const auto& p : parts) {
    if (p.classes != out.classes || p.features != out.features) throw LayoutMismatch("dataset shapes differ");
    out.x.insert(out.x.end(), p.x.begin(), p.x.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

BlobDataset make_blobs(std::size_t classes, std::size_t features, std::size_t examples, double separation,
                       std::uint64_t seed) {
  if (classes < 2 || features == 0 || classes > 2 * features) {
    throw ConfigError(fmt::format("need 2 <= classes <= 2 * features (got {} classes, {} features)", classes,
                                  features));
  }
  // Centers at +-s * e_k; the closest pair is s * sqrt(2) apart.
  const double scale = separation / std::numbers::sqrt2;
  BlobDataset data;
  data.classes = classes;
  data.features = features;
  data.x.resize(examples * features);
  data.labels.resize(examples);
  const auto stream = static_cast<std::uint64_t>(Stream::Dataset);
  for (std::size_t i = 0; i < examples; ++i) {
    const auto label = static_cast<std::uint32_t>(i % classes);
    data.labels[i] = label;
    const std::size_t axis = label % features;
    const double sign = label < features ? 1.0 : -1.0;
    for (std::size_t d = 0; d < features; ++d) {
      const double center = d == axis ? sign * scale : 0.0;
      data.x[i * features + d] = static_cast<float>(center + gaussian(seed, stream, i, d));
    }
  }
  return data;
}

ToyModel ToyModel::init(std::size_t classes, std::size_t features, std::uint64_t seed) {
  ToyModel m;
  m.classes = classes;
  m.features = features;
  m.weight.resize(classes * features);
  m.bias.assign(classes, 0.0f);
  const auto stream = static_cast<std::uint64_t>(Stream::Init);
  for (std::size_t i = 0; i < m.weight.size(); ++i) {
    m.weight[i] = static_cast<float>(0.01 * uniform_pm1(counter_hash(seed, stream, 0, i)));
  }
  return m;
}

TensorLayout ToyModel::layout() const { return {{"weight", classes * features}, {"bias", classes}}; }

TensorList ToyModel::parameters() const { return {{"weight", weight}, {"bias", bias}}; }

void ToyModel::set_parameters(const TensorList& params) {
  if (layout_of(params) != layout()) throw LayoutMismatch("toy model parameters do not match its layout");
  weight = params[0].values;
  bias = params[1].values;
}

double toy_loss(const ToyModel& model, const BlobDataset& data, std::span<const std::uint32_t> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> z;
  double loss = 0.0;
  for (auto i : batch) {
    logits(model, data.row(i), z);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    loss += (m + std::log(sum)) - z[data.labels[i]];
  }
  return loss / static_cast<double>(batch.size());
}

TensorList toy_grad(const ToyModel& model, const BlobDataset& data, std::span<const std::uint32_t> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> gw(model.classes * model.features, 0.0);
  std::vector<double> gb(model.classes, 0.0);
  std::vector<double> z;
  for (auto i : batch) {
    const auto x = data.row(i);
    logits(model, x, z);
    softmax(z);
    z[data.labels[i]] -= 1.0;
    for (std::size_t c = 0; c < model.classes; ++c) {
      gb[c] += z[c];
      for (std::size_t d = 0; d < model.features; ++d) gw[c * model.features + d] += z[c] * x[d];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor weight{"weight", std::vector<float>(gw.size())};
  Tensor bias{"bias", std::vector<float>(gb.size())};
  for (std::size_t k = 0; k < gw.size(); ++k) weight.values[k] = static_cast<float>(gw[k] * inv);
  for (std::size_t k = 0; k < gb.size(); ++k) bias.values[k] = static_cast<float>(gb[k] * inv);
  return {std::move(weight), std::move(bias)};
}

double toy_eval(const ToyModel& model, const BlobDataset& data) {
  if (data.size() == 0) return 0.0;
  std::vector<double> z;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    logits(model, data.row(i), z);
    const auto best = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<std::uint32_t> sample_batch(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                        std::uint64_t step) {
  if (dataset_size == 0 || batch == 0) throw std::invalid_argument("empty dataset or batch");
  std::vector<std::uint32_t> out(batch);
  const auto stream = static_cast<std::uint64_t>(Stream::Batch);
  for (std::size_t k = 0; k < batch; ++k) {
    out[k] = static_cast<std::uint32_t>(counter_hash(seed, stream, step, k) % dataset_size);
  }
  return out;
}

// ---------------------------------------------------------------------------

SyntheticSource::SyntheticSource(TensorLayout layout, NormProfile profile, std::uint64_t seed)
    : layout_(std::move(layout)), profile_(std::move(profile)), seed_(seed) {}

TensorList SyntheticSource::gradient(std::uint64_t step, const TensorList& /*parameters*/) {
  return synth_gradient(step, profile_, layout_, seed_);
}

ToySource::ToySource(const ToyParams& params, std::uint64_t data_seed)
    : params_(params),
      data_seed_(data_seed),
      data_(make_blobs(params.classes, params.features, params.examples_per_worker, params.separation, data_seed)),
      scratch_(ToyModel::init(params.classes, params.features, params.init_seed)) {
  if (params.batch == 0) throw ConfigError("toy batch size must be positive");
}

TensorLayout ToySource::layout() const { return scratch_.layout(); }

TensorList ToySource::initial_parameters() const {
  return ToyModel::init(params_.classes, params_.features, params_.init_seed).parameters();
}

TensorList ToySource::gradient(std::uint64_t step, const TensorList& parameters) {
  scratch_.set_parameters(parameters);
  const auto batch = sample_batch(data_.size(), params_.batch, data_seed_, step);
  return toy_grad(scratch_, data_, batch);
}

}  // namespace dblp
