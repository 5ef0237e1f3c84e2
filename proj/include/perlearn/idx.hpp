#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/dataset.hpp"

namespace perlearn {

// IDX (big-endian) image/label files. Magic 0x00000803 for images,
// 0x00000801 for labels. Each malformed-file class raises its own type.

class IdxMagicError : public Error {
public:
    explicit IdxMagicError(const std::string& msg) : Error(ErrorCategory::schema, msg) {}
};

class IdxTruncatedError : public Error {
public:
    explicit IdxTruncatedError(const std::string& msg)
        : Error(ErrorCategory::schema, msg) {}
};

class IdxCountMismatchError : public Error {
public:
    explicit IdxCountMismatchError(const std::string& msg)
        : Error(ErrorCategory::schema, msg) {}
};

namespace detail {

inline uint32_t read_be32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw IdxTruncatedError("truncated idx header in " + path);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
           uint32_t(b[3]);
}

inline void write_be32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

struct IdxImages {
    uint32_t count = 0, rows = 0, cols = 0;
    std::vector<uint8_t> pixels;  // count * rows * cols bytes
};

struct IdxLabels {
    uint32_t count = 0;
    std::vector<uint8_t> values;
};

inline IdxImages load_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorCategory::io, "cannot open idx file: " + path);
    uint32_t magic = detail::read_be32(f, path);
    if (magic != 0x00000803u)
        throw IdxMagicError("bad image magic in " + path + " (expected 0x00000803)");
    IdxImages out;
    out.count = detail::read_be32(f, path);
    out.rows = detail::read_be32(f, path);
    out.cols = detail::read_be32(f, path);
    size_t total = size_t(out.count) * out.rows * out.cols;
    out.pixels.resize(total);
    f.read(reinterpret_cast<char*>(out.pixels.data()),
           static_cast<std::streamsize>(total));
    if (static_cast<size_t>(f.gcount()) != total)
        throw IdxTruncatedError("truncated image payload in " + path);
    return out;
}

inline IdxLabels load_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorCategory::io, "cannot open idx file: " + path);
    uint32_t magic = detail::read_be32(f, path);
    if (magic != 0x00000801u)
        throw IdxMagicError("bad label magic in " + path + " (expected 0x00000801)");
    IdxLabels out;
    out.count = detail::read_be32(f, path);
    out.values.resize(out.count);
    f.read(reinterpret_cast<char*>(out.values.data()),
           static_cast<std::streamsize>(out.count));
    if (static_cast<size_t>(f.gcount()) != out.count)
        throw IdxTruncatedError("truncated label payload in " + path);
    return out;
}

inline void write_idx_images(const std::string& path, const IdxImages& img) {
    require(img.pixels.size() == size_t(img.count) * img.rows * img.cols,
            ErrorCategory::dimension, "write_idx_images: payload size mismatch");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorCategory::io, "cannot open for writing: " + path);
    detail::write_be32(f, 0x00000803u);
    detail::write_be32(f, img.count);
    detail::write_be32(f, img.rows);
    detail::write_be32(f, img.cols);
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    require(f.good(), ErrorCategory::io, "write failed: " + path);
}

inline void write_idx_labels(const std::string& path, const IdxLabels& lab) {
    require(lab.values.size() == lab.count, ErrorCategory::dimension,
            "write_idx_labels: payload size mismatch");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorCategory::io, "cannot open for writing: " + path);
    detail::write_be32(f, 0x00000801u);
    detail::write_be32(f, lab.count);
    f.write(reinterpret_cast<const char*>(lab.values.data()),
            static_cast<std::streamsize>(lab.values.size()));
    require(f.good(), ErrorCategory::io, "write failed: " + path);
}

// Pixels scaled to [0, 1] by /255; labels 0..9 style (zero-based).
inline Dataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path) {
    IdxImages img = load_idx_images(images_path);
    IdxLabels lab = load_idx_labels(labels_path);
    if (img.count != lab.count)
        throw IdxCountMismatchError("image/label count mismatch: " +
                                    std::to_string(img.count) + " vs " +
                                    std::to_string(lab.count));
    Dataset d;
    size_t dim = size_t(img.rows) * img.cols;
    d.x = Matrix(img.count, dim);
    for (size_t i = 0; i < img.count; ++i) {
        double* row = d.x.row(i);
        const uint8_t* src = img.pixels.data() + i * dim;
        for (size_t j = 0; j < dim; ++j) row[j] = src[j] / 255.0;
    }
    d.labels.assign(lab.values.begin(), lab.values.end());
    int maxlab = 0;
    for (int y : d.labels) maxlab = std::max(maxlab, y);
    d.num_classes = maxlab + 1 < 2 ? 2 : maxlab + 1;
    d.label_space = LabelSpace::zero_based;
    // pixel box is the format's full range, not the observed one
    d.feature_min.assign(dim, 0.0);
    d.feature_max.assign(dim, 1.0);
    d.provenance = "idx:" + images_path;
    validate(d);
    return d;
}

}  // namespace perlearn
