#pragma once

// Checkpoint container: magic "SPHL", format-version u32, a manifest of
// (name, shape) entries, then raw little-endian f64 arrays in manifest order.
// Round-trips bit-exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphlat/optim.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

struct NamedArray {
    std::string name;
    Shape shape;
    Vec data;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'H', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        detail::write_u32(os, static_cast<std::uint32_t>(a.name.size()));
        os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
        for (auto e : a.shape) detail::write_u64(os, e);
    }
    for (const auto& a : arrays) {
        if (a.data.size() != numel(a.shape))
            throw std::runtime_error("checkpoint: data/shape mismatch for '" + a.name + "'");
        os.write(reinterpret_cast<const char*>(a.data.data()),
                 static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::vector<NamedArray> load_arrays(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is);
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        const std::uint32_t name_len = detail::read_u32(is);
        a.name.resize(name_len);
        is.read(a.name.data(), name_len);
        const std::uint32_t ndim = detail::read_u32(is);
        a.shape.resize(ndim);
        for (auto& e : a.shape) e = detail::read_u64(is);
    }
    for (auto& a : arrays) {
        a.data.resize(numel(a.shape));
        is.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
    return arrays;
}

// Parameters plus (optionally) optimizer state, so training resumes with the
// step counter intact.
inline void save_checkpoint(const std::string& path, const ParamRefs& params,
                            AdamW* opt = nullptr) {
    std::vector<NamedArray> arrays;
    for (const Parameter* p : params) arrays.push_back({p->name, p->shape, p->value});
    if (opt != nullptr) {
        arrays.push_back({"opt/step", {1}, {static_cast<double>(opt->step_count())}});
        const auto& ps = opt->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            arrays.push_back({"opt/m/" + ps[i]->name, ps[i]->shape, opt->first_moments()[i]});
            arrays.push_back({"opt/v/" + ps[i]->name, ps[i]->shape, opt->second_moments()[i]});
        }
    }
    save_arrays(path, arrays);
}

inline void load_checkpoint(const std::string& path, const ParamRefs& params,
                            AdamW* opt = nullptr) {
    const auto arrays = load_arrays(path);
    auto find = [&](const std::string& name) -> const NamedArray* {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    };
    for (Parameter* p : params) {
        const NamedArray* a = find(p->name);
        if (a == nullptr) throw std::runtime_error("checkpoint: missing parameter '" + p->name + "'");
        if (a->shape != p->shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " +
                                     shape_str(a->shape) + " vs model " + shape_str(p->shape));
        p->value = a->data;
    }
    if (opt != nullptr) {
        const NamedArray* s = find("opt/step");
        if (s == nullptr) throw std::runtime_error("checkpoint: missing optimizer state");
        opt->set_step_count(static_cast<std::uint64_t>(s->data[0]));
        const auto& ps = opt->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const NamedArray* m = find("opt/m/" + ps[i]->name);
            const NamedArray* v = find("opt/v/" + ps[i]->name);
            if (m == nullptr || v == nullptr)
                throw std::runtime_error("checkpoint: missing moments for '" + ps[i]->name + "'");
            opt->first_moments()[i] = m->data;
            opt->second_moments()[i] = v->data;
        }
    }
}

}  // namespace sphlat
