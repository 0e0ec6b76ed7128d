#ifndef RELXFORGE_CRC64_HPP_
#define RELXFORGE_CRC64_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

#include "relxforge/error.hpp"

namespace relxforge {

// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
class Crc64 {
 public:
  void update(std::span<const std::byte> data) {
    for (std::byte b : data) {
      crc_ = table()[(crc_ ^ static_cast<std::uint8_t>(b)) & 0xFF] ^ (crc_ >> 8);
    }
  }
  void update(std::string_view s) {
    update(std::as_bytes(std::span<const char>(s.data(), s.size())));
  }
  std::uint64_t value() const { return crc_ ^ ~std::uint64_t{0}; }

 private:
  static const std::array<std::uint64_t, 256>& table() {
    static const std::array<std::uint64_t, 256> t = [] {
      std::array<std::uint64_t, 256> out{};
      constexpr std::uint64_t poly = 0xC96C5795D7870F42ULL;
      for (std::uint64_t i = 0; i < 256; ++i) {
        std::uint64_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ poly : c >> 1;
        out[i] = c;
      }
      return out;
    }();
    return t;
  }

  std::uint64_t crc_ = ~std::uint64_t{0};
};

inline std::uint64_t crc64(std::string_view s) {
  Crc64 c;
  c.update(s);
  return c.value();
}

inline std::uint64_t crc64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open " + path);
  Crc64 c;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    c.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return c.value();
}

}  // namespace relxforge

#endif  // RELXFORGE_CRC64_HPP_
