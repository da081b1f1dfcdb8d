#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace forms {

// Highest set bit position + 1; 0 for x = 0.
unsigned effective_bits(std::uint32_t x);

// Max effective bits over the fragment's inputs.
unsigned fragment_eic(std::span<const std::uint16_t> inputs);

// LSB-first bit planes, one per cycle, stopping once every remaining bit is 0.
std::vector<std::vector<std::uint8_t>> skip_schedule(std::span<const std::uint16_t> inputs);

struct EicStats {
  unsigned input_bits = 16;
  std::size_t fragment_size = 0;
  std::vector<std::size_t> histogram;  // histogram[e] = fragments with EIC e, e in [0, input_bits]
  std::size_t fragments = 0;
  std::size_t slots = 0;         // inputs covered, padding excluded
  std::size_t eic_sum = 0;       // sum of fragment EICs
  std::size_t slot_eic_sum = 0;  // sum over inputs of their covering fragment's EIC

  // Mean EIC per fragment.
  double average() const { return fragments ? static_cast<double>(eic_sum) / fragments : 0.0; }
  // Mean EIC seen by an input slot; equals average() when every fragment is full.
  double slot_average() const { return slots ? static_cast<double>(slot_eic_sum) / slots : 0.0; }
  double savings() const { return 1.0 - average() / input_bits; }
  // sum over fragments of (input_bits - EIC).
  std::size_t cycles_saved() const { return fragments * input_bits - eic_sum; }
  void merge(const EicStats& other);
};

// EIC statistics of fragment-partitioned input vectors. `inputs` is a
// (rows x vectors) row-major matrix of activation codes (e.g. im2col output);
// `slot_rows` lists the rows in fragment order and fragments are consecutive
// runs of `fragment_size` slots within each vector.
EicStats eic_stats(std::span<const std::uint16_t> inputs, std::size_t rows, std::size_t vectors,
                   std::span<const std::size_t> slot_rows, std::size_t fragment_size, unsigned input_bits = 16);

}  // namespace forms
