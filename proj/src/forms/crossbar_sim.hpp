#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "forms/admm.hpp"
#include "forms/mapper.hpp"
#include "forms/model.hpp"
#include "forms/zero_skip.hpp"

namespace forms {

struct VariationModel {
  double sigma = 0.0;  // std-dev of the underlying normal
  double mu = 0.0;
  std::uint64_t seed = 1;
  friend bool operator==(const VariationModel&, const VariationModel&) = default;
};

// c -> c * exp(eps), eps ~ N(mu, sigma^2), one draw per cell from the stream
// derive_seed(vm.seed, stream).
std::vector<double> inject_variation(std::span<const std::uint8_t> cells, const VariationModel& vm,
                                     std::uint64_t stream = 0);

// Sum over rows of cell * bit.
double fragment_dot(std::span<const double> cells, std::span<const std::uint8_t> bits);

// Round to nearest and saturate at 2^adc_bits - 1.
std::uint32_t adc_sample(double analog, unsigned adc_bits);

// codes[b * slices + k] is the ADC code of input bit-plane b on slice k.
std::int64_t shift_add_accumulate(std::span<const std::uint32_t> codes, std::size_t planes, std::size_t slices,
                                  unsigned cell_bits = 2);

// sum_f sign_f * magnitude_f.
std::int64_t signed_accumulate(std::span<const std::int64_t> magnitudes, std::span<const Sign> signs);

// out[o * vectors + v] = sum_i weights[o * n + i] * inputs[i * vectors + v].
std::vector<std::int64_t> reference_mvm(std::span<const std::int64_t> weights, std::size_t outputs,
                                        std::span<const std::uint16_t> inputs, std::size_t n,
                                        std::size_t vectors = 1);

struct TraceRow {
  std::string layer;
  std::size_t vector = 0;
  std::size_t filter = 0;
  std::size_t fragment = 0;
  std::size_t crossbar = 0;
  std::size_t column = 0;
  unsigned eic = 0;
  std::size_t saturations = 0;
  std::int64_t result = 0;  // signed fragment contribution
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);

struct SimOptions {
  bool zero_skip = true;
  unsigned adc_bits = 0;  // 0 = take the crossbar spec's resolution
  VariationModel variation;
  std::vector<TraceRow>* trace = nullptr;
};

struct SimStats {
  std::size_t fragment_waves = 0;  // input fragments fed (per input vector)
  std::size_t cycles = 0;          // bit-serial cycles spent on those fragments
  std::size_t cycles_no_skip = 0;  // input_bits per fragment wave
  std::size_t adc_conversions = 0;
  std::size_t saturation_events = 0;
  void merge(const SimStats& o);
};

// A mapped layer "programmed" onto devices, with per-crossbar variation.
struct DeviceLayer {
  const MappedLayer* layer = nullptr;
  std::vector<std::vector<double>> conductance;  // per crossbar, row-major
};

DeviceLayer program_layer(const MappedLayer& layer, const VariationModel& vm, std::uint64_t layer_key = 0);

struct LayerSimResult {
  std::vector<std::int64_t> acc;  // (kept filters x vectors), integer units of scale * 2^-exponent
  std::vector<unsigned> fragment_cycles;  // [vector * fragments_per_filter + fragment]
  SimStats stats;
};

// `inputs` is (input_size x vectors) row-major, values below 2^input_bits.
LayerSimResult simulate_layer(const DeviceLayer& device, std::span<const std::uint16_t> inputs,
                              std::size_t vectors, const CrossbarSpec& spec, const SimOptions& opts);

// code = min(floor(x * 2^exponent), 2^input_bits - 1), negatives clamp to 0.
std::vector<std::uint16_t> quantize_activations(std::span<const double> x, int exponent, unsigned input_bits = 16);

// Picks each weighted layer's exponent so the largest calibration activation
// just fits in input_bits.
void calibrate_activations(ModelGraph& model, const Dataset& calibration, std::size_t max_samples = 256,
                           unsigned input_bits = 16);

struct LayerInputCodes {
  std::string name;
  std::vector<std::uint16_t> codes;  // (rows x vectors), im2col'd for conv layers
  std::size_t rows = 0;
  std::size_t vectors = 0;
};

// Activation codes entering every weighted layer, from the float model and
// its calibrated exponents.
std::vector<LayerInputCodes> layer_input_codes(const ModelGraph& model, std::span<const double> image,
                                               unsigned input_bits = 16);

enum class Engine { crossbar, reference };

struct NetworkRun {
  std::vector<double> logits;
  std::vector<SimStats> layer_stats;  // per weighted layer
  std::vector<EicStats> layer_eic;    // per weighted layer
};

// Whole-network hardware inference: weighted layers on (simulated) crossbars
// with 16-bit fixed-point inputs, everything else digital.
class Accelerator {
 public:
  Accelerator(CompressedModel model, std::vector<MappedLayer> mapped, CrossbarSpec spec, SimOptions opts = {});
  Accelerator(const Accelerator&) = delete;
  Accelerator& operator=(const Accelerator&) = delete;

  NetworkRun run(std::span<const double> image, Engine engine = Engine::crossbar) const;
  int predict(std::span<const double> image, Engine engine = Engine::crossbar) const;
  double accuracy(const Dataset& data, Engine engine = Engine::crossbar, std::size_t limit = 0) const;

  const CompressedModel& model() const { return model_; }
  const std::vector<MappedLayer>& mapped() const { return mapped_; }
  const CrossbarSpec& spec() const { return spec_; }
  const SimOptions& options() const { return opts_; }

 private:
  CompressedModel model_;
  std::vector<MappedLayer> mapped_;
  CrossbarSpec spec_;
  SimOptions opts_;
  std::vector<DeviceLayer> devices_;
};

}  // namespace forms
