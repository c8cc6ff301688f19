#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace convis {

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// First 8 bytes of SHA-256 as an integer. Stable across platforms.
std::uint64_t stable_hash64(std::string_view bytes);

}  // namespace convis
