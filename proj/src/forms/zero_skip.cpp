#include "forms/zero_skip.hpp"

#include <algorithm>
#include <bit>

#include "forms/errors.hpp"

namespace forms {

unsigned effective_bits(std::uint32_t x) { return static_cast<unsigned>(std::bit_width(x)); }

unsigned fragment_eic(std::span<const std::uint16_t> inputs) {
  unsigned e = 0;
  for (auto x : inputs) e = std::max(e, effective_bits(x));
  return e;
}

std::vector<std::vector<std::uint8_t>> skip_schedule(std::span<const std::uint16_t> inputs) {
  std::vector<std::uint32_t> reg(inputs.begin(), inputs.end());
  std::vector<std::vector<std::uint8_t>> planes;
  auto any = [&] { return std::any_of(reg.begin(), reg.end(), [](std::uint32_t r) { return r != 0; }); };
  while (any()) {
    std::vector<std::uint8_t> plane(reg.size());
    for (std::size_t i = 0; i < reg.size(); ++i) {
      plane[i] = static_cast<std::uint8_t>(reg[i] & 1u);
      reg[i] >>= 1;
    }
    planes.push_back(std::move(plane));
  }
  return planes;
}

void EicStats::merge(const EicStats& o) {
  if (histogram.empty()) {
    *this = o;
    return;
  }
  if (o.histogram.size() != histogram.size()) throw ShapeError("EicStats::merge: input_bits mismatch");
  for (std::size_t e = 0; e < histogram.size(); ++e) histogram[e] += o.histogram[e];
  fragments += o.fragments;
  slots += o.slots;
  eic_sum += o.eic_sum;
  slot_eic_sum += o.slot_eic_sum;
}

EicStats eic_stats(std::span<const std::uint16_t> inputs, std::size_t rows, std::size_t vectors,
                   std::span<const std::size_t> slot_rows, std::size_t fragment_size, unsigned input_bits) {
  if (fragment_size == 0) throw ShapeError("eic_stats: fragment size must be >= 1");
  if (inputs.size() != rows * vectors) throw ShapeError("eic_stats: input matrix size mismatch");
  for (auto r : slot_rows)
    if (r >= rows) throw ShapeError("eic_stats: slot row out of range");
  EicStats st;
  st.input_bits = input_bits;
  st.fragment_size = fragment_size;
  st.histogram.assign(input_bits + 1, 0);
  const std::uint32_t limit = input_bits >= 32 ? 0xffffffffu : (1u << input_bits) - 1;
  for (std::size_t v = 0; v < vectors; ++v)
    for (std::size_t b = 0; b < slot_rows.size(); b += fragment_size) {
      const std::size_t e_end = std::min(slot_rows.size(), b + fragment_size);
      unsigned e = 0;
      for (std::size_t s = b; s < e_end; ++s) {
        const std::uint16_t x = inputs[slot_rows[s] * vectors + v];
        if (x > limit) throw ShapeError("eic_stats: input exceeds input_bits");
        e = std::max(e, effective_bits(x));
      }
      ++st.histogram[e];
      ++st.fragments;
      st.eic_sum += e;
      st.slots += e_end - b;
      st.slot_eic_sum += e * (e_end - b);
    }
  return st;
}

}  // namespace forms
