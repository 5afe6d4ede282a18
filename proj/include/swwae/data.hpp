#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swwae/rng.hpp"
#include "swwae/tensor.hpp"

namespace swwae {

struct Dataset {
  Tensor images;            // N x C x H x W
  std::vector<int> labels;  // empty when unlabeled
  std::string name;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  bool has_labels() const { return !labels.empty(); }
};

/// Reads IDX image (and optionally label) files, gzip-compressed or plain.
/// Pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path = "");

/// Writes IDX files (uncompressed); pixels must already be bytes / 255.
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

double pixel_mean(const Dataset& ds);
/// Subtracts `mean` from every pixel.
void center(Dataset& ds, double mean);

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);
/// The first `n` samples (all of them when n is 0 or exceeds the size).
Dataset head(const Dataset& ds, std::size_t n);
/// Gathers rows of an N x ... tensor.
Tensor gather(const Tensor& images, const std::vector<std::size_t>& indices);

/// Zero-pads H and W symmetrically up to the next multiple of `factor`.
Dataset pad_to_multiple(const Dataset& ds, std::size_t factor);

struct LabeledSubset {
  std::vector<std::size_t> indices;  // ascending
  std::vector<std::size_t> per_class;
};

/// Exactly n / classes samples per class, drawn without replacement.
LabeledSubset sample_labeled_subset(const Dataset& ds, std::size_t n, std::uint64_t seed,
                                    std::size_t classes = 10);

/// out(c, y, x) = in(c, y - dy, x - dx), zero outside.
Tensor translate(const Tensor& images, int dx, int dy);
Tensor random_translate(const Tensor& images, int max_shift, Rng& rng);

/// Min-max scaled P5 grid with 1-pixel separators, `cols` images per row.
void to_pgm(const Tensor& images, const std::string& path, std::size_t cols);

/// Class-dependent strokes plus noise, in [0, 1]. For tests and smoke runs.
Dataset synthetic_digits(std::size_t n, std::size_t size, std::size_t classes, std::uint64_t seed);

}  // namespace swwae
