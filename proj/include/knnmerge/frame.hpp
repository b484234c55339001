#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "knnmerge/core.hpp"

namespace knnmerge {

// Wire layout (little-endian, bit-exact):
//   magic "KMRG" | version u32 (1) | msg_type u32 | sender u32 | round u32
//   | payload_len u64 | payload bytes (GraphFile encoding)

enum class MsgType : std::uint32_t { SampleGraph = 0, ResultGraph = 1, Done = 2 };

const char* msg_type_name(MsgType t);

struct Frame {
    std::uint32_t version = 1;
    MsgType type = MsgType::Done;
    std::uint32_t sender = 0;
    std::uint32_t round = 0;
    std::vector<std::uint8_t> payload;

    friend bool operator==(const Frame&, const Frame&) = default;
};

constexpr std::size_t kFrameHeaderSize = 4 + 4 + 4 + 4 + 4 + 8;

std::vector<std::uint8_t> encode_frame(const Frame& f);

/// Rejects bad magic, unknown version or message type, and any length
/// mismatch between the header and the actual payload.
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Header-only decode used by stream receivers to learn the payload length.
/// Returns the partially filled frame; payload must be read separately.
Frame decode_frame_header(std::span<const std::uint8_t> header, std::uint64_t* payload_len);

}  // namespace knnmerge
