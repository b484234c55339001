#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnmerge/core.hpp"

namespace knnmerge {

// Graph file layout (little-endian, bit-exact):
//   magic "KNNG" | version u32 (1) | n u32 | k u32
//   per row: count u32, then count records of (id u32, dist f32, flag u8)
// Flags are persisted so a merge can be checkpointed mid-run.

std::vector<std::uint8_t> encode_graph(const KnnGraph& g);
KnnGraph decode_graph(std::span<const std::uint8_t> bytes);

void write_graph(const std::string& path, const KnnGraph& g);
KnnGraph read_graph(const std::string& path);

/// FNV-1a checksum of a file's bytes; used by checkpoint manifests.
std::uint64_t file_checksum(const std::string& path);

}  // namespace knnmerge
