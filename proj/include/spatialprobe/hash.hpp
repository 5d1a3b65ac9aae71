#pragma once

#include <openssl/evp.h>

#include <array>
#include <string>
#include <string_view>

#include "spatialprobe/error.hpp"

namespace spatialprobe {

/// Lowercase hex SHA-256 of `data`.
inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

/// 16-hex-digit stable key for ids and cache directories.
inline std::string short_hash(std::string_view data) { return sha256_hex(data).substr(0, 16); }

}  // namespace spatialprobe
