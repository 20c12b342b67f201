#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace m4 {

// Error codes shared between the C++ core and the C API surface.
enum class errc {
    ok = 0,
    invalid_argument,
    io,
    parse,
    not_found,
    duplicate,
    dimension_mismatch,
    budget_exhausted,
    unsupported,
    internal,
};

struct error : std::runtime_error {
    errc code;
    error(errc c, const std::string& what) : std::runtime_error(what), code(c) {}
};

[[noreturn]] inline void fail(errc c, const std::string& what) { throw error(c, what); }

// Deterministic PRNG (splitmix64-seeded xoshiro256**). Weight init, synthetic
// datasets and anything test-visible must go through this so builds are
// bit-reproducible across platforms.
class rng {
public:
    explicit rng(std::uint64_t seed);

    std::uint64_t next_u64();
    // uniform in [lo, hi)
    double uniform(double lo = 0.0, double hi = 1.0);
    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n);
    double normal();  // standard normal via Box-Muller

    // Derive an independent stream, e.g. one per model component.
    rng fork(const std::string& label) const;

private:
    std::array<std::uint64_t, 4> state_{};
    bool have_spare_ = false;
    double spare_ = 0.0;
    std::uint64_t seed_;
};

// IEEE 754 binary16 conversions (round to nearest even). FP16 here is a
// storage format only; arithmetic stays in doubles.
std::uint16_t fp16_from_double(double v);
double fp16_to_double(std::uint16_t h);

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

struct sha256 {
    static std::array<std::uint8_t, 32> digest(const void* data, std::size_t len);
    static std::string hex_digest(const void* data, std::size_t len);

    void update(const void* data, std::size_t len);
    std::array<std::uint8_t, 32> finish();
    std::string finish_hex();

private:
    std::array<std::uint32_t, 8> h_{0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                                     0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    std::array<std::uint8_t, 64> block_{};
    std::size_t block_len_ = 0;
    std::uint64_t total_len_ = 0;
    void compress(const std::uint8_t* p);
};

std::string base64_encode(const void* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::string read_file(const std::string& path);
// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& contents);

// Little-endian binary cursor used by the adapter-pack codec.
class byte_writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    void bytes(const void* p, std::size_t n);
    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class byte_reader {
public:
    byte_reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    void bytes(void* out, std::size_t n);
    std::size_t remaining() const { return n_ - pos_; }
    std::size_t pos() const { return pos_; }

private:
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
    void need(std::size_t n);
};

}  // namespace m4
