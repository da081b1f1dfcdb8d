#include "forms/layout.hpp"

#include <string>

#include "forms/errors.hpp"

namespace forms {

PolarizationOrder parse_polarization_order(std::string_view s) {
  if (s == "W-major" || s == "w-major" || s == "W" || s == "w") return PolarizationOrder::w_major;
  if (s == "H-major" || s == "h-major" || s == "H" || s == "h") return PolarizationOrder::h_major;
  if (s == "C-major" || s == "c-major" || s == "C" || s == "c") return PolarizationOrder::c_major;
  throw ConfigError("unknown polarization order '" + std::string(s) +
                    "' (expected W-major, H-major or C-major)");
}

const char* to_string(PolarizationOrder order) {
  switch (order) {
    case PolarizationOrder::w_major: return "W-major";
    case PolarizationOrder::h_major: return "H-major";
    case PolarizationOrder::c_major: return "C-major";
  }
  return "?";
}

std::vector<std::size_t> traversal_order(std::size_t channels, std::size_t height,
                                         std::size_t width, PolarizationOrder order) {
  std::vector<std::size_t> out;
  out.reserve(channels * height * width);
  auto row = [&](std::size_t c, std::size_t h, std::size_t w) { return (c * height + h) * width + w; };
  switch (order) {
    case PolarizationOrder::w_major:
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t h = 0; h < height; ++h)
          for (std::size_t w = 0; w < width; ++w) out.push_back(row(c, h, w));
      break;
    case PolarizationOrder::h_major:
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t h = 0; h < height; ++h) out.push_back(row(c, h, w));
      break;
    case PolarizationOrder::c_major:
      for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t c = 0; c < channels; ++c) out.push_back(row(c, h, w));
      break;
  }
  return out;
}

Sign fragment_sign(std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  return sum >= 0.0 ? Sign::positive : Sign::negative;
}

std::vector<double> FragmentLayout::fragment_weights(const Weight2D& h, std::size_t col,
                                                     std::size_t frag) const {
  std::vector<double> out;
  for (std::size_t s = fragment_begin(frag); s < fragment_end(frag); ++s) out.push_back(h(rows[s], col));
  return out;
}

void FragmentLayout::check(const Weight2D& h) const {
  if (h.cols() != cols || h.rows() != total_rows)
    throw ShapeError("fragment layout is " + std::to_string(total_rows) + "x" + std::to_string(cols) +
                     ", matrix is " + std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
  if (signs.size() != fragment_count()) throw ShapeError("fragment layout: sign count mismatch");
  for (auto r : rows)
    if (r >= total_rows) throw ShapeError("fragment layout: row index out of range");
}

FragmentLayout make_layout(const std::vector<std::size_t>& shape, PolarizationOrder order,
                           std::size_t fragment_size, std::span<const std::uint8_t> row_mask) {
  if (fragment_size == 0) throw ShapeError("fragment size must be >= 1");
  if (shape.size() != 2 && shape.size() != 4) throw ShapeError("make_layout: rank must be 2 or 4");
  const std::size_t c = shape[1];
  const std::size_t h = shape.size() == 4 ? shape[2] : 1;
  const std::size_t w = shape.size() == 4 ? shape[3] : 1;
  FragmentLayout l;
  l.fragment_size = fragment_size;
  l.cols = shape[0];
  l.total_rows = c * h * w;
  if (!row_mask.empty() && row_mask.size() != l.total_rows)
    throw ShapeError("make_layout: row mask length mismatch");
  for (std::size_t r : traversal_order(c, h, w, order))
    if (row_mask.empty() || row_mask[r]) l.rows.push_back(r);
  l.signs.assign(l.fragment_count(), Sign::positive);
  return l;
}

std::size_t update_signs(FragmentLayout& layout, const Weight2D& h) {
  layout.check(h);
  std::size_t changed = 0;
  const std::size_t fpc = layout.fragments_per_col();
  for (std::size_t c = 0; c < layout.cols; ++c)
    for (std::size_t f = 0; f < fpc; ++f) {
      const Sign s = fragment_sign(layout.fragment_weights(h, c, f));
      Sign& slot = layout.signs[c * fpc + f];
      if (slot != s) ++changed;
      slot = s;
    }
  return changed;
}

std::vector<std::uint8_t> pack_signs(const FragmentLayout& layout) {
  std::vector<std::uint8_t> bits((layout.signs.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < layout.signs.size(); ++i)
    if (layout.signs[i] == Sign::negative) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return bits;
}

void unpack_signs(FragmentLayout& layout, std::span<const std::uint8_t> bits) {
  const std::size_t n = layout.fragment_count();
  if (bits.size() != (n + 7) / 8) throw ShapeError("sign bitmap length mismatch");
  layout.signs.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    layout.signs[i] = (bits[i / 8] >> (i % 8)) & 1u ? Sign::negative : Sign::positive;
}

}  // namespace forms
