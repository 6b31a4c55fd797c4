#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace moma {

using Digest32 = std::array<std::uint8_t, 32>;

Digest32 sha256(const void * data, std::size_t len);
Digest32 sha256(const std::string & s);

std::string hex_encode(const Digest32 & d);

} // namespace moma
