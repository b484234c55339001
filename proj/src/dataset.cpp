#include "knnmerge/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

namespace knnmerge {

namespace {

std::size_t value_size(VecFormat fmt) {
    switch (fmt) {
        case VecFormat::Fvecs: return 4;
        case VecFormat::Bvecs: return 1;
        case VecFormat::Ivecs: return 4;
    }
    return 4;
}

std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 24));
}

float decode_value(const unsigned char* p, VecFormat fmt) {
    switch (fmt) {
        case VecFormat::Fvecs: {
            std::uint32_t bits = read_u32le(p);
            float f;
            std::memcpy(&f, &bits, 4);
            return f;
        }
        case VecFormat::Bvecs:
            return static_cast<float>(*p);
        case VecFormat::Ivecs: {
            std::uint32_t bits = read_u32le(p);
            std::int32_t v;
            std::memcpy(&v, &bits, 4);
            return static_cast<float>(v);
        }
    }
    return 0.f;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    is.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(is.tellg());
    is.seekg(0);
    std::vector<unsigned char> bytes(size);
    if (size > 0) is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!is) throw std::runtime_error("short read on " + path);
    return bytes;
}

}  // namespace

VecFormat vec_format_from_path(const std::string& path) {
    auto ends_with = [&](const char* suf) {
        const std::size_t l = std::strlen(suf);
        return path.size() >= l && path.compare(path.size() - l, l, suf) == 0;
    };
    if (ends_with(".fvecs")) return VecFormat::Fvecs;
    if (ends_with(".bvecs")) return VecFormat::Bvecs;
    if (ends_with(".ivecs")) return VecFormat::Ivecs;
    throw std::invalid_argument("cannot infer vector format from path: " + path);
}

VectorSet read_vecs(const std::string& path, VecFormat fmt) {
    const auto bytes = read_file(path);
    const std::size_t vsz = value_size(fmt);
    VectorSet vs;
    std::size_t off = 0;
    while (off < bytes.size()) {
        if (off + 4 > bytes.size()) {
            throw FormatError("truncated record header in " + path, off);
        }
        const std::uint32_t d = read_u32le(bytes.data() + off);
        if (d == 0) throw FormatError("zero dimension in " + path, off);
        if (vs.n == 0) {
            vs.d = d;
        } else if (d != vs.d) {
            throw FormatError("inconsistent dimension in " + path + ": expected " +
                                  std::to_string(vs.d) + ", got " + std::to_string(d),
                              off);
        }
        off += 4;
        const std::size_t need = static_cast<std::size_t>(d) * vsz;
        if (off + need > bytes.size()) {
            throw FormatError("truncated record payload in " + path, off);
        }
        for (std::uint32_t j = 0; j < d; ++j) {
            vs.data.push_back(decode_value(bytes.data() + off + j * vsz, fmt));
        }
        off += need;
        ++vs.n;
    }
    return vs;
}

VectorSet read_vecs_range(const std::string& path, VecFormat fmt, std::uint32_t first,
                          std::uint32_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    unsigned char hdr[4];
    is.read(reinterpret_cast<char*>(hdr), 4);
    if (!is) throw FormatError("truncated record header in " + path, 0);
    const std::uint32_t d = read_u32le(hdr);
    if (d == 0) throw FormatError("zero dimension in " + path, 0);
    const std::size_t rec = 4 + static_cast<std::size_t>(d) * value_size(fmt);

    VectorSet vs;
    vs.d = d;
    vs.id_base = first;
    vs.data.reserve(static_cast<std::size_t>(count) * d);
    std::vector<unsigned char> buf(rec);
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint64_t off = static_cast<std::uint64_t>(first + r) * rec;
        is.seekg(static_cast<std::streamoff>(off));
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(rec));
        if (!is) throw FormatError("truncated record payload in " + path, off);
        if (read_u32le(buf.data()) != d) {
            throw FormatError("inconsistent dimension in " + path, off);
        }
        for (std::uint32_t j = 0; j < d; ++j) {
            vs.data.push_back(decode_value(buf.data() + 4 + j * value_size(fmt), fmt));
        }
        ++vs.n;
    }
    return vs;
}

void write_vecs(const std::string& path, VecFormat fmt, const VectorSet& vs) {
    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<std::size_t>(vs.n) * (4 + vs.d * value_size(fmt)));
    for (std::uint32_t i = 0; i < vs.n; ++i) {
        append_u32le(bytes, vs.d);
        const float* row = vs.row(i);
        for (std::uint32_t j = 0; j < vs.d; ++j) {
            switch (fmt) {
                case VecFormat::Fvecs: {
                    std::uint32_t bits;
                    std::memcpy(&bits, &row[j], 4);
                    append_u32le(bytes, bits);
                    break;
                }
                case VecFormat::Bvecs: {
                    const float v = std::min(255.f, std::max(0.f, row[j]));
                    bytes.push_back(static_cast<unsigned char>(v + 0.5f));
                    break;
                }
                case VecFormat::Ivecs: {
                    const auto v = static_cast<std::int32_t>(row[j]);
                    std::uint32_t bits;
                    std::memcpy(&bits, &v, 4);
                    append_u32le(bytes, bits);
                    break;
                }
            }
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    if (!bytes.empty()) {
        os.write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
    }
    if (!os) throw std::runtime_error("short write on " + path);
}

VectorSet synth_dataset(std::uint32_t n, std::uint32_t d, std::uint32_t clusters,
                        std::uint64_t seed) {
    if (n < 1 || d < 1 || clusters < 1) {
        throw std::invalid_argument("synth_dataset: n, d, clusters must be >= 1");
    }
    // each cluster lives on its own low-dimensional subspace plus a little
    // ambient noise, so the intrinsic dimension stays well below d the way
    // it does in real descriptor corpora; points are drawn sequentially, so
    // a shorter sample is a bit-exact prefix of a longer one
    std::mt19937_64 rng(mix_seed(seed, 0x5e7a));
    std::normal_distribution<float> unit(0.f, 1.f);
    const std::uint32_t latent_dim = std::max(2u, d / 4);
    std::vector<float> centers(static_cast<std::size_t>(clusters) * d);
    for (auto& c : centers) c = 2.0f * unit(rng);
    std::vector<float> basis(static_cast<std::size_t>(clusters) * d * latent_dim);
    const float basis_scale = 1.0f / std::sqrt(static_cast<float>(latent_dim));
    for (auto& b : basis) b = basis_scale * unit(rng);

    VectorSet vs;
    vs.n = n;
    vs.d = d;
    vs.data.resize(static_cast<std::size_t>(n) * d);
    std::vector<float> latent(latent_dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t c = static_cast<std::uint32_t>(rng() % clusters);
        const float* ctr = centers.data() + static_cast<std::size_t>(c) * d;
        const float* bas = basis.data() + static_cast<std::size_t>(c) * d * latent_dim;
        for (auto& l : latent) l = unit(rng);
        float* row = vs.row(i);
        for (std::uint32_t j = 0; j < d; ++j) {
            float v = ctr[j];
            for (std::uint32_t t = 0; t < latent_dim; ++t) v += bas[j * latent_dim + t] * latent[t];
            row[j] = v + 0.15f * unit(rng);
        }
    }
    return vs;
}

std::pair<std::uint32_t, std::uint32_t> contiguous_range(std::uint32_t n, std::uint32_t m,
                                                         std::uint32_t s) {
    const std::uint32_t q = n / m;
    const std::uint32_t r = n % m;
    const std::uint32_t size = q + (s < r ? 1 : 0);
    const std::uint32_t begin = s * q + std::min(s, r);
    return {begin, size};
}

std::pair<std::vector<VectorSet>, SubsetMap> partition(const VectorSet& c, std::uint32_t m,
                                                       PartitionStrategy strategy,
                                                       std::uint64_t seed) {
    if (m < 2 || m > c.n) {
        throw std::invalid_argument("partition: m must be in [2, n]");
    }
    std::vector<std::uint32_t> assignment(c.n);
    if (strategy == PartitionStrategy::Contiguous) {
        for (std::uint32_t s = 0; s < m; ++s) {
            const auto [begin, size] = contiguous_range(c.n, m, s);
            std::fill_n(assignment.begin() + begin, size, s);
        }
    } else {
        std::vector<std::uint32_t> order(c.n);
        for (std::uint32_t i = 0; i < c.n; ++i) order[i] = i;
        std::mt19937_64 rng(mix_seed(seed, 0x9a27));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::uint32_t s = 0; s < m; ++s) {
            const auto [begin, size] = contiguous_range(c.n, m, s);
            for (std::uint32_t t = 0; t < size; ++t) assignment[order[begin + t]] = s;
        }
    }
    SubsetMap map(m, std::move(assignment));

    std::vector<VectorSet> subsets(m);
    for (std::uint32_t s = 0; s < m; ++s) {
        auto& sub = subsets[s];
        sub.n = map.subset_size(s);
        sub.d = c.d;
        // shuffled subsets have no single global base; the map carries
        // identity and the subsets stay anonymous
        sub.id_base =
            (strategy == PartitionStrategy::Contiguous && sub.n > 0) ? map.global_of(s, 0) : 0;
        sub.data.reserve(static_cast<std::size_t>(sub.n) * c.d);
        for (std::uint32_t r = 0; r < sub.n; ++r) {
            const float* row = c.row(map.global_of(s, r));
            sub.data.insert(sub.data.end(), row, row + c.d);
        }
    }
    return {std::move(subsets), std::move(map)};
}

VectorSet slice_rows(const VectorSet& c, std::uint32_t begin, std::uint32_t count) {
    if (static_cast<std::uint64_t>(begin) + count > c.n) {
        throw std::invalid_argument("slice_rows: range out of bounds");
    }
    VectorSet out;
    out.n = count;
    out.d = c.d;
    out.id_base = c.id_base + begin;
    out.data.assign(c.row(begin), c.row(begin) + static_cast<std::size_t>(count) * c.d);
    return out;
}

std::uint32_t count_vecs(const std::string& path, VecFormat fmt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    is.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(is.tellg());
    if (size == 0) return 0;
    is.seekg(0);
    unsigned char hdr[4];
    is.read(reinterpret_cast<char*>(hdr), 4);
    if (!is) throw FormatError("truncated record header in " + path, 0);
    const std::uint32_t d = read_u32le(hdr);
    if (d == 0) throw FormatError("zero dimension in " + path, 0);
    const std::uint64_t rec = 4 + static_cast<std::uint64_t>(d) * value_size(fmt);
    if (size % rec != 0) {
        throw FormatError("file size is not a whole number of records in " + path,
                          size - size % rec);
    }
    return static_cast<std::uint32_t>(size / rec);
}

VectorSet concat_vectors(std::span<const VectorSet> parts) {
    VectorSet out;
    for (const auto& p : parts) {
        if (out.n == 0) {
            out.d = p.d;
            out.id_base = p.id_base;
        } else if (p.d != out.d) {
            throw std::invalid_argument("concat_vectors: dimension mismatch");
        }
        out.data.insert(out.data.end(), p.data.begin(), p.data.end());
        out.n += p.n;
    }
    return out;
}

void write_subset_map(const std::string& path, const SubsetMap& map) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "KMAP " << map.m << ' ' << map.n() << '\n';
    for (std::uint32_t i = 0; i < map.n(); ++i) {
        os << map.assignment[i] << (i + 1 == map.n() ? '\n' : ' ');
    }
    if (!os) throw std::runtime_error("short write on " + path);
}

SubsetMap read_subset_map(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string magic;
    std::uint32_t m = 0, n = 0;
    is >> magic >> m >> n;
    if (!is || magic != "KMAP") throw FormatError("bad subset map header in " + path, 0);
    std::vector<std::uint32_t> assignment(n);
    for (auto& a : assignment) {
        if (!(is >> a)) throw FormatError("truncated subset map " + path, 0);
    }
    return SubsetMap(m, std::move(assignment));
}

}  // namespace knnmerge
