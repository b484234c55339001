#include "knnmerge/graph_io.hpp"

#include <cstring>
#include <fstream>

namespace knnmerge {

namespace {

constexpr char kMagic[4] = {'K', 'N', 'N', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t off = 0;

    std::uint32_t u32(const char* what) {
        if (off + 4 > bytes.size()) throw FormatError(std::string("truncated ") + what, off);
        const std::uint32_t v = static_cast<std::uint32_t>(bytes[off]) |
                                (static_cast<std::uint32_t>(bytes[off + 1]) << 8) |
                                (static_cast<std::uint32_t>(bytes[off + 2]) << 16) |
                                (static_cast<std::uint32_t>(bytes[off + 3]) << 24);
        off += 4;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::uint8_t u8(const char* what) {
        if (off >= bytes.size()) throw FormatError(std::string("truncated ") + what, off);
        return bytes[off++];
    }
};

}  // namespace

std::vector<std::uint8_t> encode_graph(const KnnGraph& g) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, g.n());
    put_u32(out, g.k);
    for (const auto& row : g.rows) {
        put_u32(out, static_cast<std::uint32_t>(row.items.size()));
        for (const auto& nb : row.items) {
            put_u32(out, nb.id);
            std::uint32_t bits;
            std::memcpy(&bits, &nb.dist, 4);
            put_u32(out, bits);
            out.push_back(nb.flag ? 1 : 0);
        }
    }
    return out;
}

KnnGraph decode_graph(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("bad graph file magic", 0);
    }
    r.off = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError("unsupported graph file version " + std::to_string(version), 4);
    }
    const std::uint32_t n = r.u32("row count");
    const std::uint32_t k = r.u32("capacity");
    KnnGraph g(n, k);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t c = r.u32("row header");
        if (c > k) throw FormatError("row " + std::to_string(i) + " over capacity", r.off - 4);
        auto& row = g.rows[i];
        row.items.reserve(c);
        for (std::uint32_t t = 0; t < c; ++t) {
            Neighbor nb;
            nb.id = r.u32("neighbor id");
            nb.dist = r.f32("neighbor dist");
            nb.flag = r.u8("neighbor flag") != 0;
            if (!row.items.empty() && !neighbor_less(row.items.back(), nb)) {
                throw FormatError("row " + std::to_string(i) + " not sorted", r.off);
            }
            row.items.push_back(nb);
        }
    }
    if (r.off != bytes.size()) {
        throw FormatError("trailing bytes after graph payload", r.off);
    }
    return g;
}

void write_graph(const std::string& path, const KnnGraph& g) {
    const auto bytes = encode_graph(g);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("short write on " + path);
}

KnnGraph read_graph(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return decode_graph(bytes);
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace knnmerge
