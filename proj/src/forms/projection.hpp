#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "forms/layout.hpp"
#include "forms/tensor.hpp"

namespace forms {

// ceil(fraction * total), tolerant of representation error in the fraction so
// that e.g. 32.0 / 96 * 96 keeps exactly 32.
std::size_t retained_count(std::size_t total, double fraction);

struct StructureOptions {
  // Round the retained row count up to a multiple of fragment_size so pruned
  // rows translate into whole fragments.
  bool crossbar_aware = false;
  std::size_t fragment_size = 1;
};

struct StructureMask {
  std::vector<std::uint8_t> rows;  // 1 = filter-shape retained
  std::vector<std::uint8_t> cols;  // 1 = filter retained
  std::size_t kept_rows() const;
  std::size_t kept_cols() const;
  friend bool operator==(const StructureMask&, const StructureMask&) = default;
};

// Target row count for a given beta, including the crossbar-aware rounding.
std::size_t target_rows(std::size_t total_rows, double beta, const StructureOptions& opts);

// Keeps the ceil(alpha * F) largest-L2 columns, then the target number of
// largest-L2 rows measured over the kept columns. Ties keep the lower index.
StructureMask select_structure(const Weight2D& h, double alpha, double beta,
                               const StructureOptions& opts = {});
Weight2D apply_structure(const Weight2D& h, const StructureMask& mask);
Weight2D project_structured(const Weight2D& h, double alpha, double beta,
                            const StructureOptions& opts = {});

// Zeroes every entry whose sign opposes its fragment's stored sign. Rows not
// covered by the layout are left unchanged.
Weight2D project_polarize(const Weight2D& h, const FragmentLayout& layout);

// Rounds each magnitude to the nearest k * scale, k in [0, 2^quant_bits - 1].
Weight2D project_quantize(const Weight2D& h, unsigned quant_bits, double scale);
// max|h| / (2^quant_bits - 1); 0 for an all-zero matrix.
double quantization_scale(const Weight2D& h, unsigned quant_bits);
std::uint32_t max_level(unsigned quant_bits);

}  // namespace forms
