/*
 * Copyright 2026 The muli Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "muli/error.hpp"

namespace muli::detail {

// Little-endian scalar encoding. On big-endian hosts the bytes are swapped;
// file formats are LE regardless of host.

template <typename T>
inline T byteswap_integral(T v) {
  static_assert(std::is_integral_v<T>);
  T out = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out = static_cast<T>(out << 8) | static_cast<T>((v >> (8 * i)) & T{0xff});
  }
  return out;
}

template <typename T>
inline T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    return byteswap_integral(v);
  }
  return v;
}

template <typename T>
inline void append_le(std::string& buf, T v) {
  T le = to_le(v);
  char raw[sizeof(T)];
  std::memcpy(raw, &le, sizeof(T));
  buf.append(raw, sizeof(T));
}

inline void append_f32_le(std::string& buf, float v) {
  append_le(buf, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T read_le() {
    T le;
    take(&le, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      return byteswap_integral(le);
    }
    return le;
  }

  float read_f32_le() { return std::bit_cast<float>(read_le<std::uint32_t>()); }

  std::string read_bytes(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }

  std::size_t remaining() const { return size_ - pos_; }

 private:
  void take(void* dst, std::size_t n) {
    if (pos_ + n > size_) {
      throw IoError("truncated file: wanted " + std::to_string(n) +
                    " bytes at offset " + std::to_string(pos_));
    }
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

/// Write `contents` to `path` atomically (temp file in the same directory, then rename).
inline void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open for writing: " + tmp.string());
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
      throw IoError("short write: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw IoError("rename failed for " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open: " + path.string());
  }
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return contents;
}

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError("bad floating point value: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace muli::detail
