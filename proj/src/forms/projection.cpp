#include "forms/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "forms/errors.hpp"

namespace forms {

std::size_t retained_count(std::size_t total, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ShapeError("retention fraction must be in (0, 1], got " + std::to_string(fraction));
  const double exact = fraction * static_cast<double>(total);
  const auto n = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(n, total == 0 ? 0 : 1, total);
}

std::size_t StructureMask::kept_rows() const {
  return static_cast<std::size_t>(std::count(rows.begin(), rows.end(), std::uint8_t{1}));
}

std::size_t StructureMask::kept_cols() const {
  return static_cast<std::size_t>(std::count(cols.begin(), cols.end(), std::uint8_t{1}));
}

std::size_t target_rows(std::size_t total_rows, double beta, const StructureOptions& opts) {
  std::size_t n = retained_count(total_rows, beta);
  if (opts.crossbar_aware && opts.fragment_size > 1) {
    const std::size_t m = opts.fragment_size;
    n = std::min(total_rows, (n + m - 1) / m * m);
  }
  return n;
}

namespace {

std::vector<std::uint8_t> top_k(const std::vector<double>& norms, std::size_t k) {
  std::vector<std::size_t> idx(norms.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  std::vector<std::uint8_t> keep(norms.size(), 0);
  for (std::size_t i = 0; i < k && i < idx.size(); ++i) keep[idx[i]] = 1;
  return keep;
}

}  // namespace

StructureMask select_structure(const Weight2D& h, double alpha, double beta,
                               const StructureOptions& opts) {
  StructureMask m;
  std::vector<double> col_norm(h.cols());
  for (std::size_t c = 0; c < h.cols(); ++c) col_norm[c] = h.column_norm(c);
  m.cols = top_k(col_norm, retained_count(h.cols(), alpha));

  std::vector<double> row_norm(h.rows(), 0.0);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < h.cols(); ++c)
      if (m.cols[c]) s += h(r, c) * h(r, c);
    row_norm[r] = s;
  }
  m.rows = top_k(row_norm, target_rows(h.rows(), beta, opts));
  return m;
}

Weight2D apply_structure(const Weight2D& h, const StructureMask& mask) {
  if (mask.rows.size() != h.rows() || mask.cols.size() != h.cols())
    throw ShapeError("apply_structure: mask shape mismatch");
  Weight2D out = h;
  for (std::size_t r = 0; r < h.rows(); ++r)
    for (std::size_t c = 0; c < h.cols(); ++c)
      if (!mask.rows[r] || !mask.cols[c]) out(r, c) = 0.0;
  return out;
}

Weight2D project_structured(const Weight2D& h, double alpha, double beta,
                            const StructureOptions& opts) {
  return apply_structure(h, select_structure(h, alpha, beta, opts));
}

Weight2D project_polarize(const Weight2D& h, const FragmentLayout& layout) {
  layout.check(h);
  Weight2D out = h;
  const std::size_t fpc = layout.fragments_per_col();
  for (std::size_t c = 0; c < layout.cols; ++c)
    for (std::size_t f = 0; f < fpc; ++f) {
      const bool positive = layout.sign(c, f) == Sign::positive;
      for (std::size_t s = layout.fragment_begin(f); s < layout.fragment_end(f); ++s) {
        double& v = out(layout.rows[s], c);
        if ((positive && v < 0.0) || (!positive && v > 0.0)) v = 0.0;
      }
    }
  return out;
}

std::uint32_t max_level(unsigned quant_bits) {
  if (quant_bits == 0 || quant_bits > 30) throw ShapeError("quant_bits must be in [1, 30]");
  return (std::uint32_t{1} << quant_bits) - 1;
}

Weight2D project_quantize(const Weight2D& h, unsigned quant_bits, double scale) {
  if (!(scale > 0.0)) throw ShapeError("quantization scale must be positive");
  const double top = static_cast<double>(max_level(quant_bits));
  Weight2D out = h;
  for (auto& v : out.data()) {
    const double k = std::min(std::round(std::abs(v) / scale), top);
    v = std::copysign(k * scale, v);
    if (k == 0.0) v = 0.0;
  }
  return out;
}

double quantization_scale(const Weight2D& h, unsigned quant_bits) {
  double mx = 0.0;
  for (double v : h.data()) mx = std::max(mx, std::abs(v));
  return mx / static_cast<double>(max_level(quant_bits));
}

}  // namespace forms
