#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsg/num/matrix.hpp"

namespace capsg::io {

/// In-memory view of a .ftns file. Layout, all little-endian:
///   magic "FTNS" | version u8 = 1 | dtype u8 = 1 (fp32) | ndim u8 |
///   ndim × u64 dims | row-major fp32 payload
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

Tensor read_tensor(const std::string& path);
void write_tensor(const Tensor& tensor, const std::string& path);

/// Conversions at the fp32 file boundary (everything internal is fp64).
Tensor tensor_from_matrix(const num::Matrix& m);
num::Matrix matrix_from_tensor(const Tensor& t);  // requires 2 dims

/// 3-D (rows, cols, dim) tensor flattened to a (rows·cols)×dim matrix.
num::Matrix grid_from_tensor(const Tensor& t, std::size_t& grid_rows,
                             std::size_t& grid_cols);
Tensor tensor_from_grid(const num::Matrix& m, std::size_t grid_rows,
                        std::size_t grid_cols);

}  // namespace capsg::io
