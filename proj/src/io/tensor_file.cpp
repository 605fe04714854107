#include "capsg/io/tensor_file.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace capsg::io {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'N', 'S'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void write_u64_le(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

void write_f32_le(std::ofstream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open tensor file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < 7) throw_format(path + ": truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw_format(path + ": bad magic (expected FTNS)");
  if (bytes[4] != kVersion)
    throw_format(path + ": unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] != kDtypeF32)
    throw_format(path + ": unsupported dtype " + std::to_string(bytes[5]));
  const std::size_t ndim = bytes[6];

  const std::size_t header = 7 + 8 * ndim;
  if (bytes.size() < header) throw_format(path + ": truncated dimension list");

  Tensor t;
  t.dims.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i)
    t.dims[i] = read_u64_le(bytes.data() + 7 + 8 * i);

  const std::uint64_t count = t.element_count();
  if (bytes.size() != header + 4 * count)
    throw_format(path + ": payload length does not match dimensions");

  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.data[i] = read_f32_le(bytes.data() + header + 4 * i);
    if (!std::isfinite(t.data[i]))
      throw_format(path + ": non-finite value at index " + std::to_string(i));
  }
  return t;
}

void write_tensor(const Tensor& tensor, const std::string& path) {
  if (tensor.element_count() != tensor.data.size())
    throw_argument("write_tensor: dims do not match payload size");
  for (float f : tensor.data)
    if (!std::isfinite(f)) throw_argument("write_tensor: non-finite value");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot open tensor file for writing: " + path);
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(kDtypeF32));
  out.put(static_cast<char>(tensor.dims.size()));
  for (auto d : tensor.dims) write_u64_le(out, d);
  for (float f : tensor.data) write_f32_le(out, f);
  if (!out) throw_data("short write: " + path);
}

Tensor tensor_from_matrix(const num::Matrix& m) {
  Tensor t;
  t.dims = {m.rows(), m.cols()};
  t.data.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  return t;
}

num::Matrix matrix_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2) throw_format("expected a 2-dimensional tensor");
  num::Matrix m(static_cast<std::size_t>(t.dims[0]), static_cast<std::size_t>(t.dims[1]));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

num::Matrix grid_from_tensor(const Tensor& t, std::size_t& grid_rows,
                             std::size_t& grid_cols) {
  if (t.dims.size() != 3) throw_format("expected a 3-dimensional tensor");
  grid_rows = static_cast<std::size_t>(t.dims[0]);
  grid_cols = static_cast<std::size_t>(t.dims[1]);
  const std::size_t dim = static_cast<std::size_t>(t.dims[2]);
  num::Matrix m(grid_rows * grid_cols, dim);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

Tensor tensor_from_grid(const num::Matrix& m, std::size_t grid_rows,
                        std::size_t grid_cols) {
  if (m.rows() != grid_rows * grid_cols)
    throw_shape("tensor_from_grid: rows != grid product");
  Tensor t;
  t.dims = {grid_rows, grid_cols, m.cols()};
  t.data.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  return t;
}

}  // namespace capsg::io
