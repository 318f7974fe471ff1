#ifndef STOPCAL_COMMON_HPP
#define STOPCAL_COMMON_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stopcal {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major matrix of doubles. Small helper, not a linear algebra library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream ^ 0x5851f42d4c957f2dull));
}

// Deterministic RNG wrapper. std::mt19937_64 is specified by the standard, and
// all variate transforms below are implemented here so that identical seeds
// produce identical values across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

    // Inclusive range, rejection-sampled to avoid modulo bias.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Standard normal, Box-Muller.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// SHA-1 hex digest, and the git blob variant ("blob <len>\0" prefix) used to
// fingerprint artifact files.
std::string sha1_hex(std::string_view data);
std::string git_blob_sha1(std::string_view content);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Little-endian binary encoding helpers for the sidecar containers.
void put_u32_le(std::string& out, std::uint32_t v);
void put_u64_le(std::string& out, std::uint64_t v);
void put_f32_le(std::string& out, float v);
std::uint32_t get_u32_le(std::string_view in, std::size_t off);
std::uint64_t get_u64_le(std::string_view in, std::size_t off);
float get_f32_le(std::string_view in, std::size_t off);

}  // namespace stopcal

#endif
