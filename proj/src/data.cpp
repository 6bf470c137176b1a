#include "qbf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "qbf/checkpoint.hpp"
#include "qbf/error.hpp"

namespace qbf {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw FormatError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("dataset images " + shape_str(images.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw FormatError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel value " + std::to_string(v) + " outside [0, 1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t per = sample_size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<double> px(indices.size() * per);
  std::vector<int> lab(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw IndexError("sample index " + std::to_string(src) + " out of range");
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(src * per), per, px.begin() + static_cast<std::ptrdiff_t>(i * per));
    lab[i] = labels[src];
  }
  return {Tensor::from(std::move(shape), std::move(px)), std::move(lab), num_classes};
}

Split split_tail(const Dataset& data, double fraction) {
  if (fraction <= 0.0 || fraction >= 1.0) throw ConfigError("validation fraction must be in (0, 1)");
  const std::size_t n = data.size();
  std::size_t val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  val = std::clamp<std::size_t>(val, 1, n - 1);
  std::vector<std::size_t> head(n - val), tail(val);
  for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
  for (std::size_t i = 0; i < val; ++i) tail[i] = n - val + i;
  return {data.subset(head), data.subset(tail)};
}

Dataset parse_idx(std::span<const std::uint8_t> img, std::span<const std::uint8_t> lab) {
  if (img.size() < 16) throw LengthError("IDX images: header needs 16 bytes, got " + std::to_string(img.size()));
  if (lab.size() < 8) throw LengthError("IDX labels: header needs 8 bytes, got " + std::to_string(lab.size()));
  const std::uint32_t img_magic = read_be32(img, 0);
  if (img_magic != 0x00000803) throw FormatError("IDX images: bad magic " + hex32(img_magic) + ", expected 0x00000803");
  const std::uint32_t lab_magic = read_be32(lab, 0);
  if (lab_magic != 0x00000801) throw FormatError("IDX labels: bad magic " + hex32(lab_magic) + ", expected 0x00000801");
  const std::uint64_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::uint64_t n_labels = read_be32(lab, 4);
  if (n == 0) throw FormatError("IDX images: zero samples");
  if (rows == 0 || cols == 0) throw FormatError("IDX images: zero-sized image " + std::to_string(rows) + "x" + std::to_string(cols));
  if (n_labels != n) {
    throw LengthError("IDX: " + std::to_string(n_labels) + " labels for " + std::to_string(n) + " images");
  }
  const std::uint64_t per = rows * cols;
  if ((img.size() - 16) / per < n || (img.size() - 16) != n * per) {
    throw LengthError("IDX images: payload is " + std::to_string(img.size() - 16) + " bytes, expected " +
                      std::to_string(n * per));
  }
  if (lab.size() - 8 != n) {
    throw LengthError("IDX labels: payload is " + std::to_string(lab.size() - 8) + " bytes, expected " + std::to_string(n));
  }
  std::vector<double> px(n * per);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = img[16 + i] / 255.0;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = lab[8 + i];
    if (labels[i] > 9) throw FormatError("IDX labels: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " outside 0-9");
  }
  return {Tensor::from({n, 1, rows, cols}, std::move(px)), std::move(labels), 10};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(read_file_bytes(images), read_file_bytes(labels));
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> serialize_idx(const Dataset& data) {
  std::vector<std::uint8_t> img, lab;
  const auto& s = data.images.shape();
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : data.images.data()) img.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  return {std::move(img), std::move(lab)};
}

constexpr std::size_t kCifarRecord = 3073;

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10: length " + std::to_string(bytes.size()) + " is not a positive multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  std::vector<double> px(n * 3072);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10: record " + std::to_string(i) + " has label " + std::to_string(rec[0]) + " outside 0-9");
    }
    labels[i] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j) px[i * 3072 + j] = rec[1 + j] / 255.0;
  }
  return {Tensor::from({n, 3, 32, 32}, std::move(px)), std::move(labels), 10};
}

Dataset load_cifar10(std::span<const std::filesystem::path> paths) {
  std::vector<std::uint8_t> all;
  for (const auto& p : paths) {
    auto b = read_file_bytes(p);
    if (b.size() % kCifarRecord != 0) {
      throw FormatError("CIFAR-10: '" + p.string() + "' length " + std::to_string(b.size()) + " is not a multiple of 3073");
    }
    all.insert(all.end(), b.begin(), b.end());
  }
  return parse_cifar10(all);
}

std::vector<std::uint8_t> serialize_cifar10(const Dataset& data) {
  if (data.images.rank() != 4 || data.images.dim(1) != 3 || data.images.dim(2) != 32 || data.images.dim(3) != 32) {
    throw DimensionError("serialize_cifar10: images must be Nx3x32x32, got " + shape_str(data.images.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(data.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(data.labels[i]));
    for (std::size_t j = 0; j < 3072; ++j) {
      out.push_back(static_cast<std::uint8_t>(std::lround(data.images[i * 3072 + j] * 255.0)));
    }
  }
  return out;
}

Dataset synthetic_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                        std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic_blobs needs num_classes >= 2");
  if (dim == 0 || per_class == 0) throw ConfigError("synthetic_blobs needs dim >= 1 and per_class >= 1");
  if (spread < 0.0) throw ConfigError("synthetic_blobs spread must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> centres(num_classes * dim);
  for (auto& c : centres) c = unit(rng);

  const std::size_t n = num_classes * per_class;
  std::vector<double> px(n * dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % num_classes;
    labels[i] = static_cast<int>(cls);
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = centres[cls * dim + d] + spread * noise(rng);
      px[i * dim + d] = std::clamp(v, 0.0, 1.0);
    }
  }
  return {Tensor::from({n, 1, dim, 1}, std::move(px)), std::move(labels), num_classes};
}

std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = dataset_size; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < dataset_size; at += batch_size) {
    const std::size_t end = std::min(dataset_size, at + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset sub = data.subset(indices);
  return {std::move(sub.images), std::move(sub.labels)};
}

}  // namespace qbf
