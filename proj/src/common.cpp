#include "stopcal/common.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <sstream>

namespace stopcal {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw Error("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());  // full 64-bit range
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % span + 1) % span;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x > limit);
    return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; uniform01 can return 0, shift into (0, 1].
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

namespace {

struct Sha1 {
    std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    std::uint64_t total = 0;
    std::array<unsigned char, 64> block{};
    std::size_t fill = 0;

    static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

    void process(const unsigned char* p) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i) {
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        }
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) { f = (b & c) | (~b & d); k = 0x5A827999u; }
            else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
            else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
            else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
            std::uint32_t t = rol(a, 5) + f + e + k + w[i];
            e = d; d = c; c = rol(b, 30); b = a; a = t;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d; h[4] += e;
    }

    void update(std::string_view data) {
        total += data.size();
        for (unsigned char ch : data) {
            block[fill++] = ch;
            if (fill == 64) { process(block.data()); fill = 0; }
        }
    }

    std::string finish() {
        std::uint64_t bits = total * 8;
        unsigned char pad = 0x80;
        update(std::string_view(reinterpret_cast<const char*>(&pad), 1));
        unsigned char zero = 0;
        while (fill != 56) update(std::string_view(reinterpret_cast<const char*>(&zero), 1));
        unsigned char len[8];
        for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(std::string_view(reinterpret_cast<const char*>(len), 8));
        static const char* hexd = "0123456789abcdef";
        std::string out;
        out.reserve(40);
        for (std::uint32_t v : h) {
            for (int i = 7; i >= 0; --i) out.push_back(hexd[(v >> (4 * i)) & 0xF]);
        }
        return out;
    }
};

}  // namespace

std::string sha1_hex(std::string_view data) {
    Sha1 s;
    s.update(data);
    return s.finish();
}

std::string git_blob_sha1(std::string_view content) {
    Sha1 s;
    std::string header = "blob " + std::to_string(content.size());
    header.push_back('\0');
    s.update(header);
    s.update(content);
    return s.finish();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed: " + path);
}

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(out, bits);
}

std::uint32_t get_u32_le(std::string_view in, std::size_t off) {
    if (off + 4 > in.size()) throw Error("truncated binary container");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
    return v;
}

std::uint64_t get_u64_le(std::string_view in, std::size_t off) {
    if (off + 8 > in.size()) throw Error("truncated binary container");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
    return v;
}

float get_f32_le(std::string_view in, std::size_t off) {
    std::uint32_t bits = get_u32_le(in, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace stopcal
