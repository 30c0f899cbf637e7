#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gfl/errors.hpp"

namespace gfl {

// Shared transformer hyperparameters. d_k = d_v = d_model / n_heads.
struct ModelConfig {
    std::size_t d_model = 768;
    std::size_t n_heads = 12;
    std::size_t d_ff = 3072;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 0;

    std::size_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_ff == 0) throw ConfigError("model dims must be positive");
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
        }
    }
};

struct LowRankConfig {
    std::size_t r = 64;

    void validate() const {
        if (r == 0) throw ConfigError("low-rank factor r must be >= 1");
    }

    // An m x n factorization compresses iff r < m*n / (m+n).
    static bool compresses(std::size_t r, std::size_t m, std::size_t n) { return r * (m + n) < m * n; }
};

struct LinformerConfig {
    std::size_t k = 64;      // projected key/value sequence length
    std::size_t n_max = 512;  // the fixed n the projection matrices are sized for

    void validate() const {
        if (k == 0 || n_max == 0 || k > n_max) {
            throw ConfigError("linformer requires 1 <= k <= n_max, got k=" + std::to_string(k) +
                              ", n_max=" + std::to_string(n_max));
        }
    }
};

enum class Variant { transformer, lrt, linformer };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::transformer: return "transformer";
        case Variant::lrt: return "lrt";
        case Variant::linformer: return "linformer";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "transformer") return Variant::transformer;
    if (s == "lrt") return Variant::lrt;
    if (s == "linformer") return Variant::linformer;
    throw ConfigError("unknown variant '" + s + "' (expected transformer, lrt or linformer)");
}

// Selects one of the three compared models together with its knobs. Exactly
// the fields the variant demands must be present.
struct VariantSpec {
    Variant variant = Variant::transformer;
    ModelConfig model;
    std::optional<LowRankConfig> lowrank;
    std::optional<LinformerConfig> linformer;

    void validate() const {
        model.validate();
        switch (variant) {
            case Variant::transformer:
                if (lowrank || linformer) throw ConfigError("transformer spec must not carry lowrank/linformer");
                break;
            case Variant::lrt:
                if (!lowrank || linformer) throw ConfigError("lrt spec requires lowrank and nothing else");
                lowrank->validate();
                break;
            case Variant::linformer:
                if (!linformer || lowrank) throw ConfigError("linformer spec requires linformer and nothing else");
                linformer->validate();
                break;
        }
    }

    // The variant's own efficiency knob: r for lrt, k for linformer.
    std::size_t rank() const {
        if (variant == Variant::lrt) return lowrank->r;
        if (variant == Variant::linformer) return linformer->k;
        return 0;
    }

    static VariantSpec make_transformer(ModelConfig m) { return {Variant::transformer, m, {}, {}}; }
    static VariantSpec make_lrt(ModelConfig m, std::size_t r) { return {Variant::lrt, m, LowRankConfig{r}, {}}; }
    static VariantSpec make_linformer(ModelConfig m, std::size_t k, std::size_t n_max) {
        return {Variant::linformer, m, {}, LinformerConfig{k, n_max}};
    }
};

struct AttentionMask {
    enum class Kind { none, causal, padding };
    Kind kind = Kind::none;
    std::vector<std::size_t> valid_len;  // per batch row, padding only

    static AttentionMask none() { return {}; }
    static AttentionMask causal() { return {Kind::causal, {}}; }
    static AttentionMask padding(std::vector<std::size_t> lens) { return {Kind::padding, std::move(lens)}; }
};

}  // namespace gfl
