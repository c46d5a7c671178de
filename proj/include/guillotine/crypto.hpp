#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace guillotine::crypto {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 over a byte span.
Digest sha256(std::span<const std::uint8_t> data);
Digest sha256(std::string_view text);

std::string to_hex(std::span<const std::uint8_t> data);
std::optional<Bytes> from_hex(std::string_view hex);

std::string to_base64(std::span<const std::uint8_t> data);
std::optional<Bytes> from_base64(std::string_view text);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(std::span<const std::uint8_t> b) {
  return std::string(b.begin(), b.end());
}

using PublicKey = std::array<std::uint8_t, 32>;
using Signature = std::array<std::uint8_t, 64>;

/// Ed25519 signing key. Deterministically derived from a 32-byte seed so that
/// simulated administrators and regulators are reproducible per scenario seed.
class SigningKey {
 public:
  static SigningKey from_seed(std::span<const std::uint8_t, 32> seed);
  /// Derives a seed as sha256(label || seed_value) and builds a key from it.
  static SigningKey derive(std::string_view label, std::uint64_t seed_value);

  [[nodiscard]] const PublicKey& public_key() const noexcept { return pk_; }
  [[nodiscard]] Signature sign(std::span<const std::uint8_t> message) const;
  [[nodiscard]] Signature sign(std::string_view message) const;

 private:
  PublicKey pk_{};
  std::array<std::uint8_t, 64> sk_{};
};

bool verify(const PublicKey& key, std::span<const std::uint8_t> message,
            std::span<const std::uint8_t> signature);
bool verify(const PublicKey& key, std::string_view message,
            std::span<const std::uint8_t> signature);

}  // namespace guillotine::crypto
