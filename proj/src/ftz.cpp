#include "msav/ftz.hpp"

#include <bit>
#include <cstring>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace msav {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'Z', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF),
               static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

[[noreturn]] void corrupt(const std::filesystem::path& path,
                          const std::string& what) {
  throw std::runtime_error("corrupt FTZ file " + path.string() + ": " + what);
}

}  // namespace

void write_ftz(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  os.write(kMagic, 4);
  const Shape& shape = t.shape();
  if (shape.size() > 255) {
    throw std::invalid_argument("FTZ rank limit exceeded");
  }
  const char rank = static_cast<char>(shape.size());
  os.write(&rank, 1);
  for (std::size_t d : shape) put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

Tensor read_ftz(const std::filesystem::path& path, bool requires_grad) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open FTZ file " + path.string());
  }
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    corrupt(path, "bad magic");
  }
  char rank_c;
  is.read(&rank_c, 1);
  if (!is) corrupt(path, "missing rank");
  const std::size_t rank = static_cast<unsigned char>(rank_c);
  Shape shape(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    shape[d] = get_u32(is);
    if (!is) corrupt(path, "truncated dims");
    if (shape[d] == 0) corrupt(path, "zero dimension");
  }
  const std::size_t n = shape_numel(shape);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(is);
    if (!is) corrupt(path, "truncated data");
    data[i] = std::bit_cast<float>(bits);
  }
  is.peek();
  if (!is.eof()) corrupt(path, "trailing bytes");
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace msav
