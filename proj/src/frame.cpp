#include "knnmerge/frame.hpp"

#include <cstring>

namespace knnmerge {

namespace {

constexpr char kMagic[4] = {'K', 'M', 'R', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::SampleGraph: return "SAMPLE_GRAPH";
        case MsgType::ResultGraph: return "RESULT_GRAPH";
        case MsgType::Done: return "DONE";
    }
    return "?";
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + f.payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, f.version);
    put_u32(out, static_cast<std::uint32_t>(f.type));
    put_u32(out, f.sender);
    put_u32(out, f.round);
    put_u64(out, f.payload.size());
    out.insert(out.end(), f.payload.begin(), f.payload.end());
    return out;
}

Frame decode_frame_header(std::span<const std::uint8_t> header, std::uint64_t* payload_len) {
    if (header.size() < kFrameHeaderSize) {
        throw ProtocolError("frame header truncated");
    }
    if (std::memcmp(header.data(), kMagic, 4) != 0) {
        throw ProtocolError("bad frame magic");
    }
    Frame f;
    f.version = get_u32(header.data() + 4);
    if (f.version != kVersion) {
        throw ProtocolError("unsupported frame version " + std::to_string(f.version));
    }
    const std::uint32_t type = get_u32(header.data() + 8);
    if (type > static_cast<std::uint32_t>(MsgType::Done)) {
        throw ProtocolError("unknown frame msg_type " + std::to_string(type));
    }
    f.type = static_cast<MsgType>(type);
    f.sender = get_u32(header.data() + 12);
    f.round = get_u32(header.data() + 16);
    *payload_len = get_u64(header.data() + 20);
    return f;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
    std::uint64_t payload_len = 0;
    Frame f = decode_frame_header(bytes, &payload_len);
    if (bytes.size() - kFrameHeaderSize != payload_len) {
        throw ProtocolError("frame payload length mismatch: header says " +
                            std::to_string(payload_len) + ", got " +
                            std::to_string(bytes.size() - kFrameHeaderSize));
    }
    f.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
    return f;
}

}  // namespace knnmerge
