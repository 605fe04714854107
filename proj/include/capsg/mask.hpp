#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "capsg/error.hpp"

namespace capsg {

/// Inclusive pixel rectangle; x = column, y = row.
struct Box {
  long x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool valid() const noexcept { return x1 >= x0 && y1 >= y0; }
  long width() const noexcept { return x1 - x0 + 1; }
  long height() const noexcept { return y1 - y0 + 1; }
  long area() const noexcept { return valid() ? width() * height() : 0; }
};

/// Binary pixel mask, row-major.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) {
    bits[r * width + c] = v ? 1 : 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool empty() const { return count() == 0; }
  bool same_shape(const Mask& o) const {
    return height == o.height && width == o.width;
  }
};

inline Mask mask_union(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw_shape("mask_union: shape mismatch");
  Mask out(a.height, a.width);
  for (std::size_t i = 0; i < out.bits.size(); ++i)
    out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
  return out;
}

inline std::size_t mask_intersection_count(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw_shape("mask_intersection_count: shape mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] & b.bits[i]) != 0;
  return n;
}

inline std::size_t mask_union_count(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw_shape("mask_union_count: shape mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] | b.bits[i]) != 0;
  return n;
}

/// Tight enclosing rectangle; invalid Box for an empty mask.
inline Box mask_bounds(const Mask& m) {
  Box b;
  b.x0 = static_cast<long>(m.width);
  b.y0 = static_cast<long>(m.height);
  b.x1 = -1;
  b.y1 = -1;
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      b.x0 = std::min(b.x0, static_cast<long>(c));
      b.y0 = std::min(b.y0, static_cast<long>(r));
      b.x1 = std::max(b.x1, static_cast<long>(c));
      b.y1 = std::max(b.y1, static_cast<long>(r));
    }
  }
  return b;
}

}  // namespace capsg
