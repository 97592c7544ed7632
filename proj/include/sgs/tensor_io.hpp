#pragma once
// Portable tensor files: magic "SSGT", u32 rank, u32 extents, then the
// float32 payload in row-major order, all little-endian. Writes go through
// a temp file and rename so readers never observe partial files.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgs/tensor.hpp"

namespace sgs {

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Atomically replaces `path` with `bytes`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::string encode_tensor_file(const Shape& shape, std::span<const float> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("tensor file: data length does not match shape");
  std::string buf;
  buf.reserve(8 + 4 * shape.size() + 4 * data.size());
  buf += "SSGT";
  detail::put_u32(buf, static_cast<std::uint32_t>(shape.size()));
  for (int e : shape) detail::put_u32(buf, static_cast<std::uint32_t>(e));
  for (float v : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(buf, bits);
  }
  return buf;
}

struct LoadedTensor {
  Shape shape;
  std::vector<float> data;
};

inline LoadedTensor decode_tensor_file(const std::string& bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(p, "SSGT", 4) != 0)
    throw std::runtime_error("tensor file: bad magic in " + origin);
  const std::uint32_t rank = detail::get_u32(p + 4);
  if (rank > 8) throw std::runtime_error("tensor file: implausible rank in " + origin);
  if (bytes.size() < 8 + 4ull * rank)
    throw std::runtime_error("tensor file: truncated header in " + origin);
  LoadedTensor t;
  std::int64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = detail::get_u32(p + 8 + 4 * i);
    if (e > (1u << 30)) throw std::runtime_error("tensor file: implausible extent in " + origin);
    t.shape.push_back(static_cast<int>(e));
    numel *= e;
  }
  const size_t payload_off = 8 + 4ull * rank;
  if (bytes.size() != payload_off + 4ull * static_cast<std::uint64_t>(numel))
    throw std::runtime_error("tensor file: payload size mismatch in " + origin);
  t.data.resize(static_cast<size_t>(numel));
  for (std::int64_t i = 0; i < numel; ++i) {
    const std::uint32_t bits = detail::get_u32(p + payload_off + 4 * static_cast<size_t>(i));
    float v;
    std::memcpy(&v, &bits, 4);
    t.data[static_cast<size_t>(i)] = v;
  }
  return t;
}

inline void write_tensor_file(const std::filesystem::path& path, const Shape& shape,
                              std::span<const float> data) {
  write_file_atomic(path, encode_tensor_file(shape, data));
}

inline LoadedTensor read_tensor_file(const std::filesystem::path& path) {
  return decode_tensor_file(read_file(path), path.string());
}

template <class S>
void save_tensor(const std::filesystem::path& path, const Tensor<S>& t) {
  std::vector<float> data(t.value().begin(), t.value().end());
  write_tensor_file(path, t.shape(), data);
}

template <class S>
Tensor<S> load_tensor(const std::filesystem::path& path, bool requires_grad = false) {
  LoadedTensor lt = read_tensor_file(path);
  std::vector<S> data(lt.data.begin(), lt.data.end());
  return Tensor<S>::from(lt.shape, std::move(data), requires_grad);
}

}  // namespace sgs
