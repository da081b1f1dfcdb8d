#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "forms/layout.hpp"
#include "forms/mapper.hpp"
#include "forms/projection.hpp"

namespace forms {

// A random pruned, polarized, quantized layer plus a batch of input codes.
struct RandomLayerCase {
  Weight2D h;  // rows = filter shapes, cols = filters, values = level * scale
  FragmentLayout layout;
  StructureMask mask;
  double scale = 0.0;
  CrossbarSpec spec;
  MappedLayer mapped;
  std::vector<std::uint16_t> inputs;  // (h.rows() x vectors)
  std::size_t vectors = 1;
};

RandomLayerCase random_layer_case(std::mt19937_64& rng, std::size_t max_dim, std::size_t fragment_size,
                                  unsigned quant_bits = 8, std::size_t vectors = 1);

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestReport {
  std::vector<SelfCheck> checks;
  bool ok() const;
};

// Invariant suites on random inputs: oracle equivalence of the crossbar
// simulator, zero-skip exactness, projection idempotence and optimality,
// bit-slice round trip, cycle-time arithmetic and config round trip.
SelftestReport run_selftest(std::uint64_t seed = 1);

}  // namespace forms
