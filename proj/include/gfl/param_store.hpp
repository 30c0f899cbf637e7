#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfl/rng.hpp"
#include "gfl/tape.hpp"
#include "gfl/tensor.hpp"

namespace gfl {

// Named, ordered collection of trainable tensors with gradient slots.
// Iteration order is construction order, which makes parameter enumeration,
// optimizer state alignment, and serialization deterministic.
template <typename Real>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

    std::uint64_t rng_seed() const { return rng_seed_; }

    // Returns the shared node by value: entries_ may reallocate on later adds.
    Var<Real> add(const std::string& name, Tensor<Real> value) {
        if (index_.count(name)) throw Error("parameter '" + name + "' already exists");
        index_[name] = entries_.size();
        entries_.emplace_back(name, leaf(std::move(value), true));
        return entries_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Var<Real> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("missing parameter '" + name + "'");
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }

    std::uint64_t total_count() const {
        std::uint64_t n = 0;
        for (const auto& [name, var] : entries_) n += var->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, var] : entries_) {
            var->ensure_grad();
            std::fill(var->grad.data.begin(), var->grad.data.end(), Real(0));
        }
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    // Flat binary format: magic "GFL1", then per entry
    //   u32 LE name length, name bytes, u32 LE rank, u32 LE dims, payload as
    //   little-endian floating-point values at the store's element width.
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f.write(kMagic, 4);
        for (const auto& [name, var] : entries_) {
            write_u32(f, static_cast<std::uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            const Shape& s = var->value.shape;
            write_u32(f, static_cast<std::uint32_t>(s.size()));
            for (std::size_t d : s) write_u32(f, static_cast<std::uint32_t>(d));
            for (Real v : var->value.data) write_real(f, v);
        }
        if (!f) throw IoError("write to '" + path + "' failed");
    }

    static ParamStore load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open '" + path + "'");
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, kMagic, 4) != 0) {
            throw IoError("'" + path + "' is not a parameter file (bad magic)");
        }
        ParamStore ps;
        while (true) {
            std::uint32_t name_len;
            if (!read_u32(f, name_len)) break;  // clean EOF between entries
            std::string name(name_len, '\0');
            f.read(name.data(), name_len);
            std::uint32_t rank;
            if (!read_u32(f, rank)) throw IoError("'" + path + "' truncated in entry header");
            Shape shape(rank);
            for (std::uint32_t i = 0; i < rank; ++i) {
                std::uint32_t d;
                if (!read_u32(f, d)) throw IoError("'" + path + "' truncated in dims");
                shape[i] = d;
            }
            std::vector<Real> data(shape_numel(shape));
            for (Real& v : data) {
                if (!read_real(f, v)) throw IoError("'" + path + "' truncated in payload of '" + name + "'");
            }
            if (!f) throw IoError("'" + path + "' truncated");
            ps.add(name, Tensor<Real>(std::move(shape), std::move(data)));
        }
        return ps;
    }

private:
    static constexpr const char* kMagic = "GFL1";

    static void write_u32(std::ofstream& f, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        f.write(reinterpret_cast<const char*>(b), 4);
    }

    static bool read_u32(std::ifstream& f, std::uint32_t& v) {
        unsigned char b[4];
        f.read(reinterpret_cast<char*>(b), 4);
        if (f.gcount() != 4) return false;
        v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        return true;
    }

    static void write_real(std::ofstream& f, Real v) {
        if constexpr (sizeof(Real) == 4) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            write_u32(f, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            write_u32(f, static_cast<std::uint32_t>(bits));
            write_u32(f, static_cast<std::uint32_t>(bits >> 32));
        }
    }

    static bool read_real(std::ifstream& f, Real& v) {
        if constexpr (sizeof(Real) == 4) {
            std::uint32_t bits;
            if (!read_u32(f, bits)) return false;
            std::memcpy(&v, &bits, 4);
        } else {
            std::uint32_t lo, hi;
            if (!read_u32(f, lo) || !read_u32(f, hi)) return false;
            std::uint64_t bits = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
            std::memcpy(&v, &bits, 8);
        }
        return true;
    }

    std::vector<std::pair<std::string, Var<Real>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t rng_seed_;
};

// Fan-based uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// Applied to each matrix independently, so the two factors of a low-rank pair
// each get their own scale.
template <typename Real>
Tensor<Real> init_uniform_fan(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<Real> t(std::move(shape));
    for (Real& v : t.data) v = static_cast<Real>(rng.uniform(-a, a));
    return t;
}

// Convenience for spec-style access: the gradient slot of a named parameter.
template <typename Real>
void backward(const Tape<Real>& tape, const Var<Real>& loss, ParamStore<Real>& params) {
    for (auto& [name, var] : params) var->ensure_grad();
    backward(tape, loss);
}

}  // namespace gfl
