#include "convis/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "convis/error.hpp"

namespace convis {

namespace {

std::array<unsigned char, 32> sha256(std::string_view bytes) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    fail(ErrorKind::invalid_argument, "sha256 failed");
  }
  return digest;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  const auto digest = sha256(bytes);
  std::string out;
  out.reserve(64);
  char buf[3];
  for (unsigned char c : digest) {
    std::snprintf(buf, sizeof buf, "%02x", c);
    out += buf;
  }
  return out;
}

std::uint64_t stable_hash64(std::string_view bytes) {
  const auto digest = sha256(bytes);
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | digest[static_cast<std::size_t>(i)];
  return h;
}

}  // namespace convis
