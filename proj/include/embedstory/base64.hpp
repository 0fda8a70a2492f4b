#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embedstory {

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Strict RFC 4648 decoding (padding required). Throws std::invalid_argument.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// "fnv1a64:" followed by 16 lowercase hex digits.
std::string format_fingerprint(std::uint64_t value);

}  // namespace embedstory
