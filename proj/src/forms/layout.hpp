#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "forms/tensor.hpp"

namespace forms {

// Traversal used to fill fragments with consecutive filter weights.
enum class PolarizationOrder { w_major, h_major, c_major };

PolarizationOrder parse_polarization_order(std::string_view s);
const char* to_string(PolarizationOrder order);

// slot -> canonical filter-shape row (c * H + h) * W + w.
//   W-major: c, h outer; w innermost (consecutive weights along a filter row)
//   H-major: c, w outer; h innermost
//   C-major: h, w outer; c innermost (same position across all channels)
std::vector<std::size_t> traversal_order(std::size_t channels, std::size_t height,
                                         std::size_t width, PolarizationOrder order);

enum class Sign : std::int8_t { positive = 1, negative = -1 };

// + iff the fragment sum is >= 0.
Sign fragment_sign(std::span<const double> weights);

// Partition of every Weight2D column into fragments of `fragment_size`
// consecutive slots. `rows` lists the retained filter-shape rows in traversal
// order; the last fragment of a column may be short (its tail is zero padding).
struct FragmentLayout {
  std::size_t fragment_size = 8;
  std::size_t cols = 0;
  std::size_t total_rows = 0;       // rows of the full Weight2D
  std::vector<std::size_t> rows;    // slot -> canonical row
  std::vector<Sign> signs;          // [col * fragments_per_col() + fragment]

  std::size_t fragments_per_col() const {
    return fragment_size == 0 ? 0 : (rows.size() + fragment_size - 1) / fragment_size;
  }
  std::size_t fragment_count() const { return cols * fragments_per_col(); }
  std::size_t fragment_begin(std::size_t f) const { return f * fragment_size; }
  std::size_t fragment_end(std::size_t f) const {
    return std::min(rows.size(), (f + 1) * fragment_size);
  }
  Sign sign(std::size_t col, std::size_t frag) const { return signs[col * fragments_per_col() + frag]; }

  // Weights of one fragment in slot order.
  std::vector<double> fragment_weights(const Weight2D& h, std::size_t col, std::size_t frag) const;
  // Throws ShapeError when the layout does not describe h.
  void check(const Weight2D& h) const;

  friend bool operator==(const FragmentLayout&, const FragmentLayout&) = default;
};

// Layout over the rows with row_mask[k] != 0 (all rows if row_mask is empty).
// `shape` is the weight tensor shape; dense layers use the identity order.
FragmentLayout make_layout(const std::vector<std::size_t>& shape, PolarizationOrder order,
                           std::size_t fragment_size, std::span<const std::uint8_t> row_mask = {});

// Recomputes every fragment sign from the current weights. Returns the number
// of fragments whose sign changed.
std::size_t update_signs(FragmentLayout& layout, const Weight2D& h);

// Sidecar bitmap: one bit per fragment, columns in order, fragments within a
// column in order, LSB-first within each byte. A set bit means negative.
std::vector<std::uint8_t> pack_signs(const FragmentLayout& layout);
void unpack_signs(FragmentLayout& layout, std::span<const std::uint8_t> bits);

}  // namespace forms
