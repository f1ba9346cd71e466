#include "shardplace/tx_id.hpp"

#include <stdexcept>

namespace shardplace {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

TxId TxId::from_hex(std::string_view hex) {
  if (hex.size() != 2 * kBytes) {
    throw std::invalid_argument("transaction id must be 64 hex digits, got " + std::to_string(hex.size()));
  }
  std::array<std::uint8_t, kBytes> bytes{};
  for (std::size_t i = 0; i < kBytes; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) {
      throw std::invalid_argument("transaction id contains a non-hex character");
    }
    bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return TxId(bytes);
}

TxId TxId::from_words(std::uint64_t w0, std::uint64_t w1, std::uint64_t w2, std::uint64_t w3) {
  std::array<std::uint8_t, kBytes> bytes{};
  const std::uint64_t words[4] = {w0, w1, w2, w3};
  for (std::size_t w = 0; w < 4; ++w) {
    for (std::size_t b = 0; b < 8; ++b) {
      bytes[w * 8 + b] = static_cast<std::uint8_t>(words[w] >> (56 - 8 * b));
    }
  }
  return TxId(bytes);
}

std::string TxId::to_hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(2 * kBytes, '0');
  for (std::size_t i = 0; i < kBytes; ++i) {
    out[2 * i] = kDigits[bytes_[i] >> 4];
    out[2 * i + 1] = kDigits[bytes_[i] & 0xF];
  }
  return out;
}

std::uint64_t TxId::prefix64() const {
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < 8; ++b) v = v << 8 | bytes_[b];
  return v;
}

std::size_t TxIdHash::operator()(const TxId& id) const noexcept {
  // Ids are hash outputs already; fold two words.
  const auto& b = id.bytes();
  std::uint64_t a = 0, c = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    a = a << 8 | b[i];
    c = c << 8 | b[24 + i];
  }
  return static_cast<std::size_t>(a ^ (c * 0x9E3779B97F4A7C15ULL));
}

}  // namespace shardplace
