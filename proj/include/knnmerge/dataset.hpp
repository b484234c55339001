#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knnmerge/core.hpp"

namespace knnmerge {

/// Dense row-major float matrix. id_base is the global id of row 0 for
/// subsets cut out of a larger set.
struct VectorSet {
    std::uint32_t n = 0;
    std::uint32_t d = 0;
    std::uint64_t id_base = 0;
    std::vector<float> data;

    const float* row(std::uint32_t i) const { return data.data() + static_cast<std::size_t>(i) * d; }
    float* row(std::uint32_t i) { return data.data() + static_cast<std::size_t>(i) * d; }
    std::span<const float> row_span(std::uint32_t i) const { return {row(i), d}; }
};

enum class VecFormat { Fvecs, Bvecs, Ivecs };

/// Picks the format from a .fvecs/.bvecs/.ivecs suffix.
VecFormat vec_format_from_path(const std::string& path);

/// TEXMEX layout: each record is a 4-byte little-endian dimension followed by
/// d values (float32 / uint8 / int32). bvecs and ivecs widen to float.
VectorSet read_vecs(const std::string& path, VecFormat fmt);

/// Reads rows [first, first + count) without touching the rest of the file.
VectorSet read_vecs_range(const std::string& path, VecFormat fmt,
                          std::uint32_t first, std::uint32_t count);

/// Writes in the same layout. For bvecs values are rounded to uint8.
void write_vecs(const std::string& path, VecFormat fmt, const VectorSet& vs);

/// Deterministic Gaussian-mixture sample: `clusters` seeded centers, unit
/// within-cluster scale, cluster picked uniformly per element.
VectorSet synth_dataset(std::uint32_t n, std::uint32_t d, std::uint32_t clusters,
                        std::uint64_t seed);

enum class PartitionStrategy { Contiguous, Shuffled };

/// Splits C into m subsets whose sizes differ by at most one. Contiguous
/// keeps block order; Shuffled draws membership from the seed. Subset rows
/// are ordered by ascending global id either way.
std::pair<std::vector<VectorSet>, SubsetMap> partition(const VectorSet& c, std::uint32_t m,
                                                       PartitionStrategy strategy,
                                                       std::uint64_t seed = 0);

/// Row-wise concatenation; inputs must share a dimension.
VectorSet concat_vectors(std::span<const VectorSet> parts);

/// Copy of rows [begin, begin + count); id_base becomes begin relative to
/// the source's own base.
VectorSet slice_rows(const VectorSet& c, std::uint32_t begin, std::uint32_t count);

/// Record count of a vector file without reading the payload.
std::uint32_t count_vecs(const std::string& path, VecFormat fmt);

/// Begin/size of subset s under the contiguous equal-split rule.
std::pair<std::uint32_t, std::uint32_t> contiguous_range(std::uint32_t n, std::uint32_t m,
                                                         std::uint32_t s);

void write_subset_map(const std::string& path, const SubsetMap& map);
SubsetMap read_subset_map(const std::string& path);

}  // namespace knnmerge
