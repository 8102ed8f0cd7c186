#include "surveysim/fingerprint.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "surveysim/errors.hpp"

namespace surveysim {

Sha256Digest sha256(std::string_view bytes) {
  Sha256Digest digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != digest.size()) {
    throw Error("sha256: digest computation failed");
  }
  return digest;
}

std::string to_hex(const Sha256Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (std::uint8_t byte : digest) {
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 0x0f]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) { return to_hex(sha256(bytes)); }

std::string canonical_temperature(double temperature) {
  if (!std::isfinite(temperature)) {
    throw UsageError("temperature must be finite");
  }
  // std::to_chars is locale-independent, unlike printf-family formatting.
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), temperature, std::chars_format::fixed, 6);
  if (ec != std::errc{}) {
    throw Error("temperature formatting failed");
  }
  return std::string(buf, ptr);
}

}  // namespace surveysim
