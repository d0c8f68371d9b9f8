#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dblp {

using Bytes = std::vector<std::byte>;
using ByteView = std::span<const std::byte>;

struct TensorSpec {
  std::string name;
  std::uint64_t element_count = 0;

  bool operator==(const TensorSpec&) const = default;
};

using TensorLayout = std::vector<TensorSpec>;

struct Tensor {
  std::string name;
  std::vector<float> values;

  bool operator==(const Tensor&) const = default;
};

using TensorList = std::vector<Tensor>;

std::uint64_t total_elements(const TensorLayout& layout);
TensorLayout layout_of(const TensorList& tensors);

/// Zero tensors shaped by `layout`.
TensorList zeros_like(const TensorLayout& layout);

/// Flattens tensors in list order into one contiguous little-endian f32 buffer.
Bytes serialize_tensors(const TensorList& tensors);

/// Inverse of serialize_tensors. Throws LengthMismatch when the buffer is
/// not exactly 4 * total_elements(layout) bytes.
TensorList deserialize_tensors(ByteView buffer, const TensorLayout& layout);

}  // namespace dblp
