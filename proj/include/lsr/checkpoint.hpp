#pragma once

// Parameter checkpoint file ("SPTM"): little-endian magic + version, then
// per-tensor records of (name length u32, name bytes, rows u64, cols u64,
// f64 data). Records run to end of file.

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/numerics.hpp"

namespace lsr {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'T', 'M'};
inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensorRefs = std::vector<std::pair<std::string, const Matrix*>>;
using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

inline void save_tensors(const NamedTensorRefs& tensors, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write file: " + path);
    }
    write_bytes(out, kCheckpointMagic, 4);
    write_u32(out, kCheckpointVersion);
    for (const auto& [name, tensor] : tensors) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        write_bytes(out, name.data(), name.size());
        write_u64(out, tensor->rows);
        write_u64(out, tensor->cols);
        for (double x : tensor->data) {
            write_f64(out, x);
        }
    }
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

inline NamedTensors load_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path);
    }
    char magic[4];
    uint32_t version = 0;
    if (!read_bytes(in, magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0 ||
        !read_u32(in, version) || version != kCheckpointVersion) {
        throw DataError("bad checkpoint file: " + path);
    }
    NamedTensors tensors;
    while (true) {
        uint32_t name_len = 0;
        if (!read_u32(in, name_len)) {
            break;  // clean EOF
        }
        std::string name(name_len, '\0');
        uint64_t rows = 0;
        uint64_t cols = 0;
        if (!read_bytes(in, name.data(), name_len) || !read_u64(in, rows) || !read_u64(in, cols)) {
            throw DataError("bad checkpoint file: " + path);
        }
        Matrix m(rows, cols);
        for (size_t i = 0; i < m.data.size(); ++i) {
            if (!read_f64(in, m.data[i])) {
                throw DataError("bad checkpoint file: " + path);
            }
        }
        tensors.emplace_back(std::move(name), std::move(m));
    }
    return tensors;
}

}  // namespace lsr
