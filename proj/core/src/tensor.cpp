#include "dblp/tensor.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "dblp/error.hpp"

namespace dblp {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void store_f32_le(float v, std::byte* out) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    out[i] = static_cast<std::byte>(bits & 0xFFu);
    bits >>= 8;
  }
}

float load_f32_le(const std::byte* in) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) {
    bits = (bits << 8) | std::to_integer<std::uint32_t>(in[i]);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::uint64_t total_elements(const TensorLayout& layout) {
  std::uint64_t n = 0;
  for (const auto& spec : layout) n += spec.element_count;
  return n;
}

TensorLayout layout_of(const TensorList& tensors) {
  TensorLayout layout;
  layout.reserve(tensors.size());
  for (const auto& t : tensors) layout.push_back({t.name, t.values.size()});
  return layout;
}

TensorList zeros_like(const TensorLayout& layout) {
  TensorList out;
  out.reserve(layout.size());
  for (const auto& spec : layout) {
    out.push_back({spec.name, std::vector<float>(spec.element_count, 0.0f)});
  }
  return out;
}

Bytes serialize_tensors(const TensorList& tensors) {
  std::size_t count = 0;
  for (const auto& t : tensors) count += t.values.size();
  Bytes out(count * 4);
  std::byte* cursor = out.data();
  for (const auto& t : tensors) {
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(cursor, t.values.data(), t.values.size() * 4);
      cursor += t.values.size() * 4;
    } else {
      for (float v : t.values) {
        store_f32_le(v, cursor);
        cursor += 4;
      }
    }
  }
  return out;
}

TensorList deserialize_tensors(ByteView buffer, const TensorLayout& layout) {
  const auto expected = total_elements(layout) * 4;
  if (buffer.size() != expected) {
    throw LengthMismatch(fmt::format("buffer holds {} bytes, layout requires {}",
                                     buffer.size(), expected));
  }
  TensorList out;
  out.reserve(layout.size());
  const std::byte* cursor = buffer.data();
  for (const auto& spec : layout) {
    Tensor t{spec.name, std::vector<float>(spec.element_count)};
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(t.values.data(), cursor, spec.element_count * 4);
      cursor += spec.element_count * 4;
    } else {
      for (auto& v : t.values) {
        v = load_f32_le(cursor);
        cursor += 4;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dblp
