#pragma once

// Shared plumbing: error types, seeded RNG, TSV parsing, little-endian
// binary IO and a chunked parallel_for.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace lsr {

// Bad or missing input data (files, records, ids). CLI maps this to exit 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure (non-finite gradients, diverged training). Exit 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller misuse of the public surface (unknown strategy, bad flag). Exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------------
// RNG. mt19937_64 plus a hand-rolled Box-Muller so streams are identical
// across standard library implementations.
// ----------------------------------------------------------------------
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) {
            return 0;
        }
        // rejection sampling keeps the distribution exact
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = gen_();
        while (x >= limit) {
            x = gen_();
        }
        return x % n;
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + spare_ * stddev;
        }
        double u = 0.0;
        do {
            u = uniform();
        } while (u <= 0.0);
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 6.283185307179586 * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + r * std::cos(theta) * stddev;
    }

    // Derive an independent child stream; used to give each training phase
    // and data shuffle its own deterministic seed.
    Rng fork(uint64_t tag) const {
        uint64_t z = seed_mix_ ^ (tag + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    uint64_t seed_mix_ = gen_();  // consumed once; decorrelates fork() from next_u64()
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ----------------------------------------------------------------------
// TSV
// ----------------------------------------------------------------------
inline std::vector<std::string> split_tsv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

// Reads a TSV file and checks the column count per record.
inline std::vector<std::vector<std::string>> read_tsv(const std::string& path, size_t n_cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path);
    }
    std::vector<std::vector<std::string>> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto fields = split_tsv_line(line);
        if (fields.size() != n_cols) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(n_cols) + " tab-separated fields, got " +
                            std::to_string(fields.size()));
        }
        records.push_back(std::move(fields));
    }
    return records;
}

// ----------------------------------------------------------------------
// Little-endian binary IO
// ----------------------------------------------------------------------
inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& out, uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>(x >> (8 * i));
    }
    write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(x >> (8 * i));
    }
    write_bytes(out, b, 8);
}

inline void write_f32(std::ostream& out, float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    write_u32(out, bits);
}

inline void write_f64(std::ostream& out, double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    write_u64(out, bits);
}

inline bool read_bytes(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<size_t>(in.gcount()) == n;
}

inline bool read_u32(std::istream& in, uint32_t& x) {
    unsigned char b[4];
    if (!read_bytes(in, b, 4)) {
        return false;
    }
    x = 0;
    for (int i = 0; i < 4; ++i) {
        x |= static_cast<uint32_t>(b[i]) << (8 * i);
    }
    return true;
}

inline bool read_u64(std::istream& in, uint64_t& x) {
    unsigned char b[8];
    if (!read_bytes(in, b, 8)) {
        return false;
    }
    x = 0;
    for (int i = 0; i < 8; ++i) {
        x |= static_cast<uint64_t>(b[i]) << (8 * i);
    }
    return true;
}

inline bool read_f32(std::istream& in, float& x) {
    uint32_t bits = 0;
    if (!read_u32(in, bits)) {
        return false;
    }
    std::memcpy(&x, &bits, 4);
    return true;
}

inline bool read_f64(std::istream& in, double& x) {
    uint64_t bits = 0;
    if (!read_u64(in, bits)) {
        return false;
    }
    std::memcpy(&x, &bits, 8);
    return true;
}

// LEB128 varint, used for delta-coded posting doc-ids.
inline void write_varint(std::ostream& out, uint64_t x) {
    while (x >= 0x80) {
        unsigned char b = static_cast<unsigned char>(x) | 0x80;
        write_bytes(out, &b, 1);
        x >>= 7;
    }
    unsigned char b = static_cast<unsigned char>(x);
    write_bytes(out, &b, 1);
}

inline bool read_varint(std::istream& in, uint64_t& x) {
    x = 0;
    int shift = 0;
    while (true) {
        unsigned char b;
        if (!read_bytes(in, &b, 1) || shift > 63) {
            return false;
        }
        x |= static_cast<uint64_t>(b & 0x7f) << shift;
        if ((b & 0x80) == 0) {
            return true;
        }
        shift += 7;
    }
}

// FNV-1a over a byte string; used to fingerprint experiment configs.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ----------------------------------------------------------------------
// Chunked parallel map. Tasks write disjoint slots, so the result does
// not depend on the thread count.
// ----------------------------------------------------------------------
inline void parallel_for(size_t total, int threads, const std::function<void(size_t, size_t)>& fn) {
    if (threads <= 1 || total <= 1) {
        fn(0, total);
        return;
    }
    size_t n_threads = std::min<size_t>(static_cast<size_t>(threads), total);
    const size_t chunk = total / n_threads;
    std::vector<std::thread> pool;
    pool.reserve(n_threads - 1);
    for (size_t t = 0; t + 1 < n_threads; ++t) {
        pool.emplace_back(fn, t * chunk, (t + 1) * chunk);
    }
    fn((n_threads - 1) * chunk, total);
    for (auto& th : pool) {
        th.join();
    }
}

}  // namespace lsr
