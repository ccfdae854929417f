#include "hmcam/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

#include "hmcam/errors.hpp"

namespace hmcam {

namespace {

constexpr std::uint32_t kTensorFileVersion = 1;

void put_le(std::ofstream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& b, std::size_t off, int bytes, const std::filesystem::path& path) {
  if (off + static_cast<std::size_t>(bytes) > b.size()) throw DataError("truncated tensor file " + path.string());
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b[off + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

}  // namespace

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("ADVT", 4);
  put_le(out, kTensorFileVersion, 4);
  put_le(out, t.rank(), 4);
  for (std::size_t e : t.shape()) put_le(out, e, 8);
  for (double v : t.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  if (!out) throw DataError("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::string(b.begin(), b.begin() + 4) != "ADVT") {
    throw DataError("not a tensor file: " + path.string());
  }
  if (get_le(b, 4, 4, path) != kTensorFileVersion) throw DataError("unsupported tensor file version in " + path.string());
  const auto rank = get_le(b, 8, 4, path);
  std::size_t off = 12;
  Tensor::Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i, off += 8) shape.push_back(get_le(b, off, 8, path));
  const std::size_t n = shape_product(shape);
  if (b.size() != off + 8 * n) throw DataError("tensor file size does not match its shape: " + path.string());
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_le(b, off + 8 * i, 8, path));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace hmcam
