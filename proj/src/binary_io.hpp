#pragma once

// Little-endian encoding helpers shared by the RFLOW1, RFFS1 and detector
// file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "resflow/error.hpp"

namespace resflow::detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }

  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::uint16_t u16(const char* what) { return get<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) fail(Errc::truncated, std::string("truncated ") + what);
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace resflow::detail
