#pragma once

// Binary tensor container.
//
//   bytes 0..3   magic "SPT1"
//   byte  4      dtype code: 1 = f32, 2 = f64
//   byte  5      rank
//   then rank x u32 little-endian dims, then the row-major little-endian payload.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sonic/error.hpp"
#include "sonic/nn/tensor.hpp"

namespace sonic::io {

inline constexpr char kTensorMagic[4] = {'S', 'P', 'T', '1'};

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

using AnyTensor = std::variant<nn::Tensor<float>, nn::Tensor<double>>;

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
  return value;
}

template <typename T>
using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_tensor(const nn::Tensor<T>& t) {
  if (t.shape.size() > 255) throw InvalidArgument("tensor rank exceeds 255");
  if (t.data.size() != nn::shape_size(t.shape)) throw ShapeError("tensor data does not match its shape");
  std::vector<std::uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
  out.push_back(static_cast<std::uint8_t>(t.shape.size()));
  for (std::size_t d : t.shape) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("tensor dim exceeds u32");
    detail::put_le(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + t.data.size() * sizeof(T));
  for (T v : t.data) detail::put_le(out, std::bit_cast<detail::Bits<T>>(v));
  return out;
}

inline AnyTensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& source = "tensor") {
  if (bytes.size() < 6 || !std::equal(std::begin(kTensorMagic), std::end(kTensorMagic), bytes.begin(),
                                      [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw DataError(source + ": not a tensor file (bad magic)");
  }
  const std::uint8_t code = bytes[4];
  const std::size_t rank = bytes[5];
  if (code != 1 && code != 2) throw DataError(source + ": unknown dtype code " + std::to_string(code));
  std::size_t offset = 6;
  if (bytes.size() < offset + 4 * rank) throw DataError(source + ": truncated header");
  nn::Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, offset += 4) shape[i] = detail::get_le<std::uint32_t>(&bytes[offset]);

  auto read_payload = [&]<typename T>(std::type_identity<T>) -> AnyTensor {
    const std::size_t count = nn::shape_size(shape);
    if (bytes.size() - offset != count * sizeof(T)) {
      throw DataError(source + ": payload holds " + std::to_string(bytes.size() - offset) +
                      " bytes, expected " + std::to_string(count * sizeof(T)));
    }
    std::vector<T> data(count);
    for (std::size_t i = 0; i < count; ++i, offset += sizeof(T)) {
      data[i] = std::bit_cast<T>(detail::get_le<detail::Bits<T>>(&bytes[offset]));
    }
    return nn::Tensor<T>(shape, std::move(data));
  };
  return code == 1 ? read_payload(std::type_identity<float>{}) : read_payload(std::type_identity<double>{});
}

template <typename T>
void write_tensor_file(const std::filesystem::path& path, const nn::Tensor<T>& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write tensor file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing tensor file " + path.string());
}

inline AnyTensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

// Reads a file whose dtype must match T.
template <typename T>
nn::Tensor<T> read_tensor_file_as(const std::filesystem::path& path) {
  auto any = read_tensor_file(path);
  if (auto* t = std::get_if<nn::Tensor<T>>(&any)) return std::move(*t);
  throw DataError(path.string() + ": unexpected tensor dtype");
}

}  // namespace sonic::io
