#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sipa/common.hpp"
#include "sipa/cost_model.hpp"
#include "sipa/model_ir.hpp"

namespace sipa {

enum class Dtype : uint8_t { f32 = 0, f16 = 1, u8 = 2 };

inline int dtype_bits(Dtype d) { return d == Dtype::f32 ? 32 : d == Dtype::f16 ? 16 : 8; }

/// One named weight tensor. Values are held as f32 in memory; `dtype` is the
/// storage width on disk and for accounting. A non-empty mask marks kept (1)
/// and pruned (0) positions and always matches the element count.
struct TensorEntry {
    std::string name;
    Dtype dtype = Dtype::f32;
    std::vector<uint32_t> shape;
    std::vector<float> values;
    std::vector<uint8_t> mask;

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    int64_t nnz() const {
        if (mask.empty()) return size();
        int64_t n = 0;
        for (uint8_t m : mask) n += m ? 1 : 0;
        return n;
    }
};

struct Checkpoint {
    std::vector<TensorEntry> entries;

    TensorEntry* find(const std::string& name) {
        for (auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    const TensorEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// IEEE 754 binary16 conversion (round to nearest even)

inline uint16_t float_to_half(float f) {
    const uint32_t x = std::bit_cast<uint32_t>(f);
    const uint32_t sign = (x >> 16) & 0x8000u;
    const int32_t exp = static_cast<int32_t>((x >> 23) & 0xFFu) - 127 + 15;
    uint32_t mant = x & 0x7FFFFFu;

    if (exp >= 31) {
        if (((x >> 23) & 0xFFu) == 0xFFu && mant != 0) return static_cast<uint16_t>(sign | 0x7E00u);  // nan
        return static_cast<uint16_t>(sign | 0x7C00u);                                                 // inf/overflow
    }
    if (exp <= 0) {
        if (exp < -10) return static_cast<uint16_t>(sign);  // underflow to zero
        mant |= 0x800000u;
        const int shift = 14 - exp;
        uint32_t half_mant = mant >> shift;
        const uint32_t rem = mant & ((1u << shift) - 1);
        const uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
        return static_cast<uint16_t>(sign | half_mant);
    }
    uint32_t half = sign | (static_cast<uint32_t>(exp) << 10) | (mant >> 13);
    const uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // may carry into exponent; that is correct
    return static_cast<uint16_t>(half);
}

inline float half_to_float(uint16_t h) {
    const uint32_t sign = (static_cast<uint32_t>(h) & 0x8000u) << 16;
    const uint32_t exp = (h >> 10) & 0x1Fu;
    const uint32_t mant = h & 0x3FFu;
    uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign;
        } else {
            int e = -1;
            uint32_t m = mant;
            do {
                ++e;
                m <<= 1;
            } while ((m & 0x400u) == 0);
            out = sign | (static_cast<uint32_t>(127 - 15 - e) << 23) | ((m & 0x3FFu) << 13);
        }
    } else if (exp == 31) {
        out = sign | 0x7F800000u | (mant << 13);
    } else {
        out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

// ---------------------------------------------------------------------------
// File format: "SIPA" 0x01, u32 entry count, then per entry u16 name length,
// name bytes, u8 dtype (0=f32, 1=f16, 2=u8), u8 rank, rank x u32 shape, raw
// little-endian values. Masks are separate u8 entries named "<tensor>.mask",
// written directly after their base tensor.

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

inline uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw IoError(std::string("truncated file reading ") + what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError(std::string("truncated file reading ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

inline uint8_t get_u8(std::istream& is, const char* what) {
    char b;
    if (!is.read(&b, 1)) throw IoError(std::string("truncated file reading ") + what);
    return static_cast<uint8_t>(b);
}

inline int64_t shape_elements(const std::vector<uint32_t>& shape) {
    int64_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    uint32_t entry_count = 0;
    for (const auto& e : ckpt.entries) entry_count += e.mask.empty() ? 1 : 2;
    os.write("SIPA", 4);
    os.put(0x01);
    detail::put_u32(os, entry_count);

    auto write_header = [&](const std::string& name, Dtype dt, const std::vector<uint32_t>& shape) {
        if (name.size() > 0xFFFF) throw IoError("tensor name too long: " + name);
        detail::put_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(dt));
        os.put(static_cast<char>(shape.size()));
        for (uint32_t d : shape) detail::put_u32(os, d);
    };

    for (const auto& e : ckpt.entries) {
        if (detail::shape_elements(e.shape) != e.size())
            throw IoError("tensor '" + e.name + "': shape does not match value count");
        if (!e.mask.empty() && e.mask.size() != e.values.size())
            throw IoError("tensor '" + e.name + "': mask size mismatch");
        write_header(e.name, e.dtype, e.shape);
        if (e.dtype == Dtype::f16) {
            for (float v : e.values) detail::put_u16(os, float_to_half(v));
        } else if (e.dtype == Dtype::f32) {
            for (float v : e.values) detail::put_u32(os, std::bit_cast<uint32_t>(v));
        } else {
            throw IoError("tensor '" + e.name + "': weight tensors must be f32 or f16");
        }
        if (!e.mask.empty()) {
            write_header(e.name + ".mask", Dtype::u8, e.shape);
            os.write(reinterpret_cast<const char*>(e.mask.data()), static_cast<std::streamsize>(e.mask.size()));
        }
    }
    if (!os) throw IoError("checkpoint write failed");
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_checkpoint(os, ckpt);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SIPA", 4) != 0) throw IoError("not a checkpoint file (bad magic)");
    if (detail::get_u8(is, "version") != 0x01) throw IoError("unsupported checkpoint version");
    const uint32_t entry_count = detail::get_u32(is, "entry count");

    Checkpoint ckpt;
    for (uint32_t idx = 0; idx < entry_count; ++idx) {
        const uint16_t name_len = detail::get_u16(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw IoError("truncated file reading tensor name");
        const uint8_t dtype_byte = detail::get_u8(is, "dtype");
        if (dtype_byte > 2) throw IoError("tensor '" + name + "': unknown dtype");
        const Dtype dt = static_cast<Dtype>(dtype_byte);
        const uint8_t rank = detail::get_u8(is, "rank");
        std::vector<uint32_t> shape(rank);
        for (auto& d : shape) d = detail::get_u32(is, "shape");
        const int64_t n = detail::shape_elements(shape);

        if (name.size() > 5 && name.ends_with(".mask")) {
            if (dt != Dtype::u8) throw IoError("mask entry '" + name + "' must be u8");
            const std::string base = name.substr(0, name.size() - 5);
            TensorEntry* owner = ckpt.find(base);
            if (!owner) throw IoError("mask entry '" + name + "' has no base tensor");
            if (n != owner->size()) throw IoError("mask entry '" + name + "': size mismatch with base tensor");
            owner->mask.resize(static_cast<size_t>(n));
            if (!is.read(reinterpret_cast<char*>(owner->mask.data()), n))
                throw IoError("truncated file reading mask values");
            for (uint8_t m : owner->mask)
                if (m > 1) throw IoError("mask entry '" + name + "': values must be 0 or 1");
            continue;
        }

        if (dt == Dtype::u8) throw IoError("tensor '" + name + "': u8 is reserved for mask entries");
        if (ckpt.find(name)) throw IoError("duplicate tensor name '" + name + "'");
        TensorEntry e;
        e.name = std::move(name);
        e.dtype = dt;
        e.shape = std::move(shape);
        e.values.resize(static_cast<size_t>(n));
        if (dt == Dtype::f16) {
            for (auto& v : e.values) v = half_to_float(detail::get_u16(is, "values"));
        } else {
            for (auto& v : e.values) v = std::bit_cast<float>(detail::get_u32(is, "values"));
        }
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return read_checkpoint(is);
}

/// Returns a copy with every masked-out value set to exactly 0.
inline Checkpoint apply_masks(const Checkpoint& ckpt) {
    Checkpoint out = ckpt;
    for (auto& e : out.entries) {
        if (e.mask.empty()) continue;
        for (size_t i = 0; i < e.values.size(); ++i)
            if (!e.mask[i]) e.values[i] = 0.0f;
    }
    return out;
}

/// Builds a randomly initialized checkpoint skeleton for a layer graph:
/// "<layer>.weight" tensors (conv [Cout, Cin/groups, k, k]; dense [out, in])
/// plus "<layer>.bias" [Cout] where present. Values are fan-in-scaled
/// normals from a deterministic generator.
inline Checkpoint checkpoint_from_graph(const LayerGraph& graph, uint64_t seed, Dtype dtype = Dtype::f32) {
    Rng rng(seed);
    Checkpoint ckpt;
    auto fill = [&](TensorEntry& e, double fan_in) {
        const double scale = std::sqrt(2.0 / std::max(1.0, fan_in));
        e.values.resize(static_cast<size_t>(detail::shape_elements(e.shape)));
        for (auto& v : e.values) v = static_cast<float>(rng.normal() * scale);
    };
    for (const auto& l : graph.layers) {
        if (l.kind == LayerKind::conv2d) {
            TensorEntry w;
            w.name = l.name + ".weight";
            w.dtype = dtype;
            w.shape = {static_cast<uint32_t>(l.out.c), static_cast<uint32_t>(l.in.c / l.groups),
                       static_cast<uint32_t>(l.kernel), static_cast<uint32_t>(l.kernel)};
            fill(w, static_cast<double>(l.kernel) * l.kernel * (l.in.c / l.groups));
            ckpt.entries.push_back(std::move(w));
        } else if (l.kind == LayerKind::dense) {
            TensorEntry w;
            w.name = l.name + ".weight";
            w.dtype = dtype;
            w.shape = {static_cast<uint32_t>(l.out.c), static_cast<uint32_t>(l.in.elements())};
            fill(w, static_cast<double>(l.in.elements()));
            ckpt.entries.push_back(std::move(w));
        } else {
            continue;
        }
        if (l.bias) {
            TensorEntry b;
            b.name = l.name + ".bias";
            b.dtype = dtype;
            b.shape = {static_cast<uint32_t>(l.out.c)};
            b.values.assign(static_cast<size_t>(l.out.c), 0.0f);
            ckpt.entries.push_back(std::move(b));
        }
    }
    return ckpt;
}

/// Maps checkpoint masks and storage widths into cost-model overrides. A
/// tensor's bit width is the narrower of its dtype and the first matching
/// quantization pattern.
inline Overrides overrides_from_checkpoint(const Checkpoint& ckpt, const std::vector<QuantRule>& quant = {}) {
    Overrides ov;
    for (const auto& e : ckpt.entries) {
        int bits = dtype_bits(e.dtype);
        for (const auto& q : quant) {
            if (glob_match(q.pattern, e.name)) {
                bits = std::min(bits, q.bits);
                break;
            }
        }
        TensorOverride t;
        t.mask = e.mask;
        t.bits = bits;
        ov.emplace(e.name, std::move(t));
    }
    return ov;
}

}  // namespace sipa
