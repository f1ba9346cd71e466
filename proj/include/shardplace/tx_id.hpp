#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace shardplace {

/// 256-bit transaction identifier. Bytes are kept in the order they appear in
/// the canonical lowercase hex encoding, so byte 0 holds the leading bits.
class TxId {
 public:
  static constexpr std::size_t kBytes = 32;

  TxId() = default;
  explicit TxId(const std::array<std::uint8_t, kBytes>& bytes) : bytes_(bytes) {}

  /// Accepts exactly 64 hex digits (either case). Throws std::invalid_argument.
  static TxId from_hex(std::string_view hex);
  /// Packs four words big-endian, `w0` first.
  static TxId from_words(std::uint64_t w0, std::uint64_t w1, std::uint64_t w2, std::uint64_t w3);

  std::string to_hex() const;
  const std::array<std::uint8_t, kBytes>& bytes() const { return bytes_; }
  /// Leading 64 bits as a big-endian integer.
  std::uint64_t prefix64() const;

  auto operator<=>(const TxId&) const = default;

 private:
  std::array<std::uint8_t, kBytes> bytes_{};
};

struct TxIdHash {
  std::size_t operator()(const TxId& id) const noexcept;
};

}  // namespace shardplace

template <>
struct std::hash<shardplace::TxId> {
  std::size_t operator()(const shardplace::TxId& id) const noexcept {
    return shardplace::TxIdHash{}(id);
  }
};
