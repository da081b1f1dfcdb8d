#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forms/admm.hpp"
#include "forms/model.hpp"

namespace forms {

// One entry of the weight container. Payload is always little-endian float32.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline constexpr std::uint32_t container_version = 1;

// "FRMS" | u32 version | u32 count | per tensor:
//   u32 name_len | name | u32 dtype (0 = f32) | u32 rank | u32 dims[rank] | f32 payload
std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors);
// Throws Error(corrupt_artifact) on any structural problem.
std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

// "<layer>.weight", ".bias", ".scale", ".row_mask", ".col_mask" per weighted layer.
std::vector<NamedTensor> model_tensors(const CompressedModel& model);
// Fills `architecture` (whose shapes must match) from the container entries.
// Layouts are rebuilt from the masks; signs come from the sidecar.
CompressedModel model_from_tensors(const std::vector<NamedTensor>& tensors, const ModelGraph& architecture,
                                   const CompressionConfig& config, bool polarized, bool quantized);

// "<layer>.Z", "<layer>.U", "<layer>.rho".
std::vector<NamedTensor> state_tensors(const AdmmState& state, const ModelGraph& model);
AdmmState state_from_tensors(const std::vector<NamedTensor>& tensors, const ModelGraph& model);

// "FSGN" | u32 version | u32 layers | per layer: u32 name_len | name |
//   u32 fragment_count | ceil(count / 8) bytes of pack_signs()
std::vector<std::uint8_t> encode_signs(const CompressedModel& model);
void decode_signs(const std::vector<std::uint8_t>& bytes, CompressedModel& model);

}  // namespace forms
