#pragma once

// Shared fixtures for the unit and acceptance tests. Everything here is built
// from first principles so the oracles do not reuse library code paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "forms/layout.hpp"
#include "forms/mapper.hpp"
#include "forms/projection.hpp"

namespace forms::test {

struct Layer2D {
  Weight2D h;  // level * scale, signed
  std::vector<std::int64_t> levels;  // same values as signed integers, row-major like h
  FragmentLayout layout;
  StructureMask mask;
  double scale = 1.0 / 64;
  unsigned quant_bits = 8;
};

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Random pruned, polarized and quantized layer of the given shape. About a
// quarter of rows and filters are pruned (at least one of each survives).
inline Layer2D random_layer(std::mt19937_64& rng, std::size_t rows, std::size_t filters, std::size_t m,
                            unsigned quant_bits = 8, bool prune = true) {
  Layer2D L;
  L.quant_bits = quant_bits;
  L.mask.rows.assign(rows, 1);
  L.mask.cols.assign(filters, 1);
  if (prune) {
    for (auto& r : L.mask.rows) r = uniform(rng, 0, 3) != 0;
    for (auto& c : L.mask.cols) c = uniform(rng, 0, 3) != 0;
    L.mask.rows[uniform(rng, 0, rows - 1)] = 1;
    L.mask.cols[uniform(rng, 0, filters - 1)] = 1;
  }
  L.layout = make_layout({filters, rows}, PolarizationOrder::c_major, m, L.mask.rows);
  for (auto& s : L.layout.signs) s = uniform(rng, 0, 1) ? Sign::positive : Sign::negative;
  L.h = Weight2D(rows, filters);
  L.levels.assign(rows * filters, 0);
  const std::size_t top = (std::size_t{1} << quant_bits) - 1;
  const std::size_t fpc = L.layout.fragments_per_col();
  for (std::size_t c = 0; c < filters; ++c) {
    if (!L.mask.cols[c]) continue;
    for (std::size_t f = 0; f < fpc; ++f) {
      const std::int64_t sg = L.layout.signs[c * fpc + f] == Sign::positive ? 1 : -1;
      for (std::size_t s = f * m; s < std::min(L.layout.rows.size(), (f + 1) * m); ++s) {
        const std::size_t r = L.layout.rows[s];
        const auto lvl = static_cast<std::int64_t>(uniform(rng, 0, 4) == 0 ? 0 : uniform(rng, 0, top));
        L.levels[r * filters + c] = sg * lvl;
        L.h(r, c) = static_cast<double>(sg * lvl) * L.scale;
      }
    }
  }
  return L;
}

inline std::vector<std::uint16_t> random_inputs(std::mt19937_64& rng, std::size_t n, unsigned input_bits = 16) {
  std::vector<std::uint16_t> x(n);
  for (auto& v : x) {
    const std::size_t bits = uniform(rng, 0, input_bits);
    v = bits == 0 ? 0 : static_cast<std::uint16_t>(uniform(rng, 0, (std::size_t{1} << bits) - 1));
  }
  return x;
}

// out[j * vectors + v] for the j-th kept filter, straight integer arithmetic.
inline std::vector<std::int64_t> integer_mvm(const Layer2D& L, const std::vector<std::uint16_t>& x,
                                             std::size_t vectors) {
  const std::size_t rows = L.h.rows(), filters = L.h.cols();
  std::vector<std::int64_t> out;
  for (std::size_t c = 0; c < filters; ++c) {
    if (!L.mask.cols[c]) continue;
    for (std::size_t v = 0; v < vectors; ++v) {
      std::int64_t acc = 0;
      for (std::size_t r = 0; r < rows; ++r) acc += L.levels[r * filters + c] * x[r * vectors + v];
      out.push_back(acc);
    }
  }
  return out;
}

inline unsigned bit_length(std::uint32_t x) {
  unsigned n = 0;
  while (x) {
    ++n;
    x >>= 1;
  }
  return n;
}

}  // namespace forms::test
