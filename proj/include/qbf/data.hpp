#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "qbf/tensor.hpp"

namespace qbf {

// Images [N x C x H x W] in [0, 1] with one class index per sample.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return size() == 0 ? 0 : images.numel() / size(); }
  // Checks the invariants: N > 0, labels in range, pixels in [0, 1].
  void validate() const;
  // Samples at the given indices, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Split {
  Dataset train;
  Dataset validation;
};

// Deterministic tail split: the last `fraction` of samples (original order)
// become the validation set.
Split split_tail(const Dataset& data, double fraction = 0.1);

// MNIST IDX (uncompressed): images magic 0x00000803, labels 0x00000801.
Dataset parse_idx(std::span<const std::uint8_t> images_bytes, std::span<const std::uint8_t> labels_bytes);
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// CIFAR-10 binary batch: 3073-byte records of label + R, G, B 32x32 planes.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);
Dataset load_cifar10(std::span<const std::filesystem::path> batches);
// Inverse of parse_cifar10 for datasets whose pixels are multiples of 1/255.
std::vector<std::uint8_t> serialize_cifar10(const Dataset& data);
// Inverse of parse_idx; returns {images, labels} byte buffers.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> serialize_idx(const Dataset& data);

// Gaussian clusters around seeded centres in the unit hypercube, clamped to
// [0, 1]. Samples are interleaved by class; shape N x 1 x dim x 1.
Dataset synthetic_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                        std::uint64_t seed);

// Fisher-Yates permutation keyed by (seed, epoch), cut into batches; the last
// batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace qbf
