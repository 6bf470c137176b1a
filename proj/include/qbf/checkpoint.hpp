#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "qbf/models.hpp"

namespace qbf {

// QBF1 checkpoint layout, all integers and floats little-endian:
//
//   "QBF1"
//   u32 arch_len, arch JSON text
//   u32 record_count
//   record_count x { u32 name_len, name, u32 rank, u64 dims[rank], f64 values[] }
//   u8  has_quantizer
//   if has_quantizer: u8 kind, u32 bits, u32 n_learnables,
//                     n_learnables x { u32 name_len, name, f64 initial }
//
// Records follow list_parameters(view); learnable quantizer values appear as
// records named "quant.<name>" in the quantized view.
struct Checkpoint {
  ModelArch arch;
  ParameterStore store;
};

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store, const ModelArch& arch,
                                            ParameterView view = ParameterView::Quantized);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const ModelArch& arch,
                     ParameterView view = ParameterView::Quantized);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace qbf
