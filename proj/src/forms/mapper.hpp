#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "forms/admm.hpp"
#include "forms/layout.hpp"
#include "forms/tensor.hpp"

namespace forms {

struct CrossbarSpec {
  std::size_t rows = 128;
  std::size_t cols = 128;
  unsigned cell_bits = 2;
  std::size_t subarray_rows = 8;  // m, the fragment size
  std::size_t subarray_cols = 32;  // n
  std::size_t adcs_per_crossbar = 4;
  unsigned adc_bits = 0;  // 0 = smallest non-saturating resolution for m
  double adc_freq_ghz = 2.1;
  std::size_t crossbars_per_mcu = 8;
  std::size_t mcus_per_tile = 12;
  std::size_t tiles = 168;
  unsigned input_bits = 16;

  std::size_t q() const { return rows / subarray_rows; }
  std::size_t p() const { return cols / subarray_cols; }
  unsigned resolved_adc_bits() const;
  std::size_t total_crossbars() const { return crossbars_per_mcu * mcus_per_tile * tiles; }
  // Throws ConfigError when the sub-array grid does not tile the crossbar.
  void validate() const;
  friend bool operator==(const CrossbarSpec&, const CrossbarSpec&) = default;
};

// Strict: unknown keys raise ConfigError.
void to_json(nlohmann::json& j, const CrossbarSpec& s);
void from_json(const nlohmann::json& j, CrossbarSpec& s);

// ceil(log2(m * (2^cell_bits - 1) + 1)).
unsigned non_saturating_adc_bits(std::size_t fragment_size, unsigned cell_bits);

struct ReorderedWeights {
  std::vector<std::size_t> permutation;  // slot -> canonical filter-shape row
  std::vector<double> weights;           // filter-major, slot order within a filter
};

ReorderedWeights reorder_fragments(const WeightTensor& w, PolarizationOrder order);
// out[s] = x[permutation[s]].
template <typename T>
std::vector<T> permute(std::span<const T> x, std::span<const std::size_t> permutation);

// Base-2^cell_bits digits of `magnitude`, least significant first.
std::vector<std::uint8_t> bit_slice(std::uint32_t magnitude, unsigned quant_bits = 8, unsigned cell_bits = 2);

struct CrossbarImage {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> cells;  // row-major
  std::uint8_t at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
  friend bool operator==(const CrossbarImage&, const CrossbarImage&) = default;
};

struct FragmentPlacement {
  std::size_t filter = 0;    // original output channel
  std::size_t fragment = 0;  // index within the filter column
  std::size_t crossbar = 0;
  std::size_t subarray_row = 0;  // sub-array row band inside the crossbar
  std::size_t subarray_col = 0;  // sub-array column group of the first slice
  std::size_t column = 0;        // first of `slices` adjacent cell columns
  friend bool operator==(const FragmentPlacement&, const FragmentPlacement&) = default;
};

struct MappedLayer {
  std::string name;
  std::size_t fragment_size = 8;
  unsigned quant_bits = 8;
  unsigned cell_bits = 2;
  std::size_t slices = 4;
  std::size_t input_size = 0;             // rows of the unpruned Weight2D
  std::size_t output_channels = 0;        // unpruned filter count
  std::vector<std::size_t> input_rows;    // slot -> canonical input row
  std::vector<std::size_t> filters;       // kept filters, in packing order
  std::size_t fragments_per_filter = 0;
  std::size_t row_tiles = 0;
  std::size_t filters_per_crossbar = 0;
  double scale = 0.0;
  std::vector<CrossbarImage> crossbars;
  std::vector<Sign> signs;                // [kept filter * fragments_per_filter + fragment]
  std::vector<FragmentPlacement> placement;  // same indexing as signs

  std::size_t crossbar_count() const { return crossbars.size(); }
  const FragmentPlacement& place(std::size_t kept, std::size_t frag) const {
    return placement[kept * fragments_per_filter + frag];
  }
  Sign sign(std::size_t kept, std::size_t frag) const { return signs[kept * fragments_per_filter + frag]; }
  // Magnitude level reassembled from the stored cell digits.
  std::uint32_t magnitude(std::size_t kept, std::size_t slot) const;
  std::size_t fragment_begin(std::size_t f) const { return f * fragment_size; }
  std::size_t fragment_end(std::size_t f) const {
    return std::min(input_rows.size(), (f + 1) * fragment_size);
  }
};

// Maps one pruned, polarized and quantized layer. `h` is the full Weight2D,
// `layout` covers the retained rows, `mask.cols` selects the kept filters.
MappedLayer map_layer(const std::string& name, const Weight2D& h, const FragmentLayout& layout,
                      const StructureMask& mask, double scale, unsigned quant_bits,
                      const CrossbarSpec& spec);
MappedLayer map_layer(const CompressedModel& model, std::size_t weighted_index, const CrossbarSpec& spec);
std::vector<MappedLayer> map_model(const CompressedModel& model, const CrossbarSpec& spec);

// Signed integer weight levels (sign * magnitude) of a mapped layer as a
// (kept filters x slots) row-major matrix.
std::vector<std::int64_t> signed_levels(const MappedLayer& layer);

// Two-crossbar signed baseline: 2 * ceil(R / rows) * ceil(F * bits / cell_bits / cols).
std::size_t count_split_crossbars(std::size_t rows, std::size_t filters, unsigned weight_bits,
                                  const CrossbarSpec& spec);
std::size_t count_split_crossbars(const ModelGraph& baseline, unsigned weight_bits, const CrossbarSpec& spec);

struct ReductionResult {
  std::size_t baseline_crossbars = 0;
  std::size_t compressed_crossbars = 0;
  double prune_ratio = 1.0;  // total weights / retained weights
  double ratio = 1.0;
};

ReductionResult crossbar_reduction(const std::vector<MappedLayer>& compressed, const ModelGraph& baseline,
                                   const CrossbarSpec& spec, unsigned baseline_bits = 32);

// manifest.json, <layer>.cells (u8, crossbars back to back, row-major) and
// <layer>.signs (pack_signs layout over kept filters).
void write_mapped(const std::filesystem::path& dir, const std::vector<MappedLayer>& layers,
                  const CrossbarSpec& spec);
std::vector<MappedLayer> read_mapped(const std::filesystem::path& dir, CrossbarSpec* spec = nullptr);

}  // namespace forms
