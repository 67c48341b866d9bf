#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sipa/checkpoint.hpp"
#include "sipa/common.hpp"

namespace sipa {

/// Per-sample labels plus per-head logits exported from a training
/// framework. Heads 0..H-2 are exit paths in network order; head H-1 is the
/// main path.
struct EvalSet {
    uint32_t n = 0;
    uint32_t k = 0;
    std::vector<uint32_t> labels;
    std::vector<std::vector<float>> heads;  // each n*k, row-major

    uint32_t head_count() const { return static_cast<uint32_t>(heads.size()); }
    const float* row(uint32_t head, uint32_t sample) const { return heads[head].data() + static_cast<size_t>(sample) * k; }
};

inline void validate(const EvalSet& ev) {
    if (ev.labels.size() != ev.n) throw ValidationError("evalset: label count does not match N");
    for (uint32_t l : ev.labels)
        if (l >= ev.k) throw ValidationError("evalset: label out of range");
    for (const auto& h : ev.heads)
        if (h.size() != static_cast<size_t>(ev.n) * ev.k) throw ValidationError("evalset: head matrix is not N x K");
}

// File format: magic "SIEV", version 0x01, u32 N, u32 K, u32 H, N x u32
// labels, then H blocks of N x K f32 logits row-major, all little-endian.

inline void write_evalset(std::ostream& os, const EvalSet& ev) {
    validate(ev);
    os.write("SIEV", 4);
    os.put(0x01);
    detail::put_u32(os, ev.n);
    detail::put_u32(os, ev.k);
    detail::put_u32(os, ev.head_count());
    for (uint32_t l : ev.labels) detail::put_u32(os, l);
    for (const auto& h : ev.heads)
        for (float v : h) detail::put_u32(os, std::bit_cast<uint32_t>(v));
    if (!os) throw IoError("evalset write failed");
}

inline void write_evalset(const std::string& path, const EvalSet& ev) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_evalset(os, ev);
}

inline EvalSet read_evalset(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SIEV", 4) != 0) throw IoError("not an evalset file (bad magic)");
    if (detail::get_u8(is, "version") != 0x01) throw IoError("unsupported evalset version");
    EvalSet ev;
    ev.n = detail::get_u32(is, "N");
    ev.k = detail::get_u32(is, "K");
    const uint32_t h = detail::get_u32(is, "H");
    ev.labels.resize(ev.n);
    for (auto& l : ev.labels) l = detail::get_u32(is, "labels");
    ev.heads.resize(h);
    for (auto& head : ev.heads) {
        head.resize(static_cast<size_t>(ev.n) * ev.k);
        for (auto& v : head) v = std::bit_cast<float>(detail::get_u32(is, "logits"));
    }
    validate(ev);
    return ev;
}

inline EvalSet read_evalset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return read_evalset(is);
}

/// Index of the largest logit; ties resolve to the lowest index.
inline uint32_t argmax_row(const float* row, uint32_t k) {
    uint32_t best = 0;
    for (uint32_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

inline double accuracy(const EvalSet& ev, uint32_t head) {
    if (head >= ev.head_count()) throw ValidationError("head index out of range");
    if (ev.n == 0) return 0.0;
    uint32_t correct = 0;
    for (uint32_t i = 0; i < ev.n; ++i)
        if (argmax_row(ev.row(head, i), ev.k) == ev.labels[i]) ++correct;
    return static_cast<double>(correct) / ev.n;
}

}  // namespace sipa
