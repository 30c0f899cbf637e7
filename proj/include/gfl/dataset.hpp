#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gfl/errors.hpp"
#include "gfl/rng.hpp"

namespace gfl {

struct Dataset {
    std::size_t seq_len = 0;
    std::size_t n_classes = 0;
    std::size_t vocab_size = 0;
    std::vector<std::vector<std::size_t>> train_x, test_x;
    std::vector<std::size_t> train_y, test_y;
};

// ---------------------------------------------------------------------------
// Synthetic majority-token task: sequences over a 16-symbol alphabet, label =
// the most frequent symbol among the first n_classes symbols, ties broken by
// the smaller symbol id. Generated sets are class-balanced within +-1 and
// exactly reproducible from the seed.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n_classes = 4;
    std::size_t seq_len = 32;
    std::size_t n_train = 4000;
    std::size_t n_test = 1000;
    std::uint64_t seed = 1;

    static constexpr std::size_t kAlphabet = 16;
};

inline std::size_t majority_label(const std::vector<std::size_t>& seq, std::size_t n_classes) {
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t s : seq) {
        if (s < n_classes) ++counts[s];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
        if (counts[c] > counts[best]) best = c;  // strict: ties keep the smaller id
    }
    return best;
}

namespace datadetail {

// Fills x/y with `count` samples balanced within +-1 per class (remainder
// assigned to the smallest class ids) by rejection sampling.
inline void fill_balanced(std::vector<std::vector<std::size_t>>& x, std::vector<std::size_t>& y,
                          std::size_t count, const SyntheticSpec& spec, Rng& rng) {
    std::vector<std::size_t> quota(spec.n_classes, count / spec.n_classes);
    for (std::size_t c = 0; c < count % spec.n_classes; ++c) ++quota[c];
    std::size_t remaining = count;
    while (remaining > 0) {
        std::vector<std::size_t> seq(spec.seq_len);
        for (auto& s : seq) s = static_cast<std::size_t>(rng.below(SyntheticSpec::kAlphabet));
        const std::size_t label = majority_label(seq, spec.n_classes);
        if (quota[label] == 0) continue;
        --quota[label];
        --remaining;
        x.push_back(std::move(seq));
        y.push_back(label);
    }
}

}  // namespace datadetail

inline Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes > SyntheticSpec::kAlphabet) {
        throw ConfigError("synthetic task: n_classes " + std::to_string(spec.n_classes) +
                          " exceeds the alphabet size " + std::to_string(SyntheticSpec::kAlphabet));
    }
    if (spec.n_classes == 0 || spec.seq_len == 0) throw ConfigError("synthetic task: empty spec");
    Dataset d;
    d.seq_len = spec.seq_len;
    d.n_classes = spec.n_classes;
    d.vocab_size = SyntheticSpec::kAlphabet;
    Rng rng(spec.seed);
    datadetail::fill_balanced(d.train_x, d.train_y, spec.n_train, spec, rng);
    datadetail::fill_balanced(d.test_x, d.test_y, spec.n_test, spec, rng);
    return d;
}

// ---------------------------------------------------------------------------
// MNIST IDX loader. Big-endian headers, magic 0x00000803 for images and
// 0x00000801 for labels. Images can be average-pooled by an integer factor
// (28x28 -> 14x14 at factor 2) before flattening row-major; pixel buckets
// stay 0..255 (pooled values truncate, so constant patches are exact).
// ---------------------------------------------------------------------------

namespace datadetail {

inline std::uint32_t read_u32_be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw IoError("'" + path + "' truncated in header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

struct IdxImages {
    std::size_t count, rows, cols;
    std::vector<unsigned char> pixels;
};

inline IdxImages read_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    const std::uint32_t magic = read_u32_be(f, path);
    if (magic != 0x00000803u) throw IoError("'" + path + "' has bad image magic");
    IdxImages img;
    img.count = read_u32_be(f, path);
    img.rows = read_u32_be(f, path);
    img.cols = read_u32_be(f, path);
    img.pixels.resize(img.count * img.rows * img.cols);
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(f.gcount()) != img.pixels.size()) {
        throw IoError("'" + path + "' truncated: expected " + std::to_string(img.pixels.size()) + " pixels");
    }
    return img;
}

inline std::vector<unsigned char> read_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    const std::uint32_t magic = read_u32_be(f, path);
    if (magic != 0x00000801u) throw IoError("'" + path + "' has bad label magic");
    const std::uint32_t count = read_u32_be(f, path);
    std::vector<unsigned char> labels(count);
    f.read(reinterpret_cast<char*>(labels.data()), count);
    if (static_cast<std::size_t>(f.gcount()) != labels.size()) throw IoError("'" + path + "' truncated");
    return labels;
}

inline void append_split(const std::string& image_path, const std::string& label_path, std::size_t factor,
                         std::vector<std::vector<std::size_t>>& xs, std::vector<std::size_t>& ys,
                         std::size_t& seq_len) {
    IdxImages img = read_idx_images(image_path);
    std::vector<unsigned char> labels = read_idx_labels(label_path);
    if (img.count != labels.size()) {
        throw IoError("image/label count mismatch: " + std::to_string(img.count) + " images vs " +
                      std::to_string(labels.size()) + " labels");
    }
    if (factor == 0 || img.rows % factor != 0 || img.cols % factor != 0) {
        throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide " +
                          std::to_string(img.rows) + "x" + std::to_string(img.cols));
    }
    const std::size_t pr = img.rows / factor, pc = img.cols / factor;
    seq_len = pr * pc;
    xs.reserve(xs.size() + img.count);
    for (std::size_t i = 0; i < img.count; ++i) {
        const unsigned char* src = img.pixels.data() + i * img.rows * img.cols;
        std::vector<std::size_t> seq(seq_len);
        for (std::size_t r = 0; r < pr; ++r) {
            for (std::size_t c = 0; c < pc; ++c) {
                std::size_t sum = 0;
                for (std::size_t dr = 0; dr < factor; ++dr) {
                    for (std::size_t dc = 0; dc < factor; ++dc) {
                        sum += src[(r * factor + dr) * img.cols + (c * factor + dc)];
                    }
                }
                seq[r * pc + c] = sum / (factor * factor);
            }
        }
        xs.push_back(std::move(seq));
        ys.push_back(labels[i]);
    }
}

}  // namespace datadetail

inline Dataset load_mnist_idx(const std::string& dir, std::size_t downsample_factor = 1) {
    Dataset d;
    d.n_classes = 10;
    d.vocab_size = 256;
    datadetail::append_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                             downsample_factor, d.train_x, d.train_y, d.seq_len);
    std::size_t test_len = 0;
    datadetail::append_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", downsample_factor,
                             d.test_x, d.test_y, test_len);
    if (test_len != d.seq_len) throw IoError("train/test image sizes disagree");
    return d;
}

}  // namespace gfl
