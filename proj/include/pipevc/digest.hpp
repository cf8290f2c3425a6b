#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pipevc {

// 32-byte SHA-256 digest. Used for schema identity, chunk ids, object
// manifests and commit ids alike.
using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);

std::string to_hex(const Digest& d);
std::optional<Digest> digest_from_hex(std::string_view hex);

// First 8 bytes of the digest as a big-endian integer. Drives the
// deterministic stub score functions.
std::uint64_t digest_prefix_u64(const Digest& d);

}  // namespace pipevc
