#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace surveysim {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view bytes);
std::string to_hex(const Sha256Digest& digest);
std::string sha256_hex(std::string_view bytes);

/// Fixed 6-decimal rendering used wherever a temperature participates in a
/// content hash, so 0.7 and 0.70 canonicalize identically on every platform.
std::string canonical_temperature(double temperature);

}  // namespace surveysim
