// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srigl/error.hpp"
#include "srigl/matrix.hpp"
#include "srigl/rng.hpp"

namespace srigl {

/// Samples in rows: features is N x D.
struct Dataset {
    Matrix<double> features;
    std::vector<int> labels;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }

    /// Gathers the given samples into a D x B batch.
    Matrix<double> batch(std::span<const std::size_t> idx) const {
        Matrix<double> x(dim(), idx.size());
        for (std::size_t b = 0; b < idx.size(); ++b)
            for (std::size_t f = 0; f < dim(); ++f) x(f, b) = features(idx[b], f);
        return x;
    }
    std::vector<int> batch_labels(std::span<const std::size_t> idx) const {
        std::vector<int> y(idx.size());
        for (std::size_t b = 0; b < idx.size(); ++b) y[b] = labels[idx[b]];
        return y;
    }
};

struct DataSplit {
    Dataset train;
    Dataset test;
};

/// Gaussian mixture classification task: each class owns several clusters
/// whose centres are drawn N(0, center_scale^2) per coordinate; samples add
/// N(0, cluster_std^2) noise around a uniformly chosen cluster of their class.
struct BlobSpec {
    std::size_t classes = 3;
    std::size_t dim = 16;
    std::size_t clusters_per_class = 4;
    double center_scale = 1.0;
    double cluster_std = 0.6;
    std::size_t train_size = 6000;
    std::size_t test_size = 2000;
};

inline DataSplit make_blobs(const BlobSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2 || spec.dim < 1 || spec.clusters_per_class < 1)
        fail(Errc::DomainError, "blob task needs >= 2 classes, dim >= 1 and >= 1 cluster per class");
    Rng rng = make_rng(seed, 0xb10b);
    std::normal_distribution<double> normal;
    const std::size_t n_clusters = spec.classes * spec.clusters_per_class;
    Matrix<double> centers(n_clusters, spec.dim);
    for (auto& c : centers.data) c = spec.center_scale * normal(rng);

    auto draw = [&](std::size_t count) {
        Dataset ds;
        ds.classes = spec.classes;
        ds.features = Matrix<double>(count, spec.dim);
        ds.labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t cluster = uniform_below(rng, n_clusters);
            ds.labels[i] = static_cast<int>(cluster % spec.classes);
            for (std::size_t f = 0; f < spec.dim; ++f)
                ds.features(i, f) = centers(cluster, f) + spec.cluster_std * normal(rng);
        }
        return ds;
    };
    DataSplit split;
    split.train = draw(spec.train_size);
    split.test = draw(spec.test_size);
    return split;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail(Errc::FormatError, path + ": truncated IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image file (u8, 3 dims) and its label file (u8, 1 dim).
/// Pixels are scaled to [0, 1] and flattened per image.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) fail(Errc::IoError, "cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) fail(Errc::IoError, "cannot open " + labels_path);

    if (detail::read_be32(img, images_path) != kIdxImagesMagic)
        fail(Errc::FormatError, images_path + ": expected IDX magic 0x00000803");
    if (detail::read_be32(lab, labels_path) != kIdxLabelsMagic)
        fail(Errc::FormatError, labels_path + ": expected IDX magic 0x00000801");
    const std::size_t count = detail::read_be32(img, images_path);
    const std::size_t rows = detail::read_be32(img, images_path);
    const std::size_t cols = detail::read_be32(img, images_path);
    const std::size_t label_count = detail::read_be32(lab, labels_path);
    if (label_count != count) fail(Errc::FormatError, "image and label counts differ");

    Dataset ds;
    ds.features = Matrix<double>(count, rows * cols);
    std::vector<unsigned char> buf(rows * cols);
    for (std::size_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            fail(Errc::FormatError, images_path + ": truncated pixel data");
        for (std::size_t p = 0; p < buf.size(); ++p) ds.features(i, p) = buf[p] / 255.0;
    }
    std::vector<unsigned char> lbl(count);
    if (!lab.read(reinterpret_cast<char*>(lbl.data()), static_cast<std::streamsize>(count)))
        fail(Errc::FormatError, labels_path + ": truncated label data");
    int max_label = 0;
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lbl[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = count ? static_cast<std::size_t>(max_label) + 1 : 0;
    return ds;
}

}  // namespace srigl
