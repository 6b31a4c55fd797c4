#pragma once

#include <cstddef>
#include <cstdint>

namespace moma {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(const void * data, std::size_t len, std::uint32_t seed = 0);

} // namespace moma
