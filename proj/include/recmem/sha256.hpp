#pragma once

#include <string>
#include <string_view>

namespace recmem {

// SHA-256 of the input bytes as a lowercase hex string.
// Stable across platforms; used for cache keys and config digests.
std::string sha256_hex(std::string_view data);

}  // namespace recmem
