#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ctxmem {

/// Shortest-free, fixed 17-significant-digit rendering; parses back to the
/// identical double.
std::string format_double(double v);

/// Compact JSON text with every floating-point number written with 17
/// significant digits; non-finite numbers become null.
std::string dump_json(const nlohmann::json& j);

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view text);

}  // namespace ctxmem
