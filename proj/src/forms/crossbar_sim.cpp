#include "forms/crossbar_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "forms/rng.hpp"

namespace forms {

std::vector<double> inject_variation(std::span<const std::uint8_t> cells, const VariationModel& vm,
                                     std::uint64_t stream) {
  if (vm.sigma < 0.0) throw ShapeError("variation sigma must be >= 0");
  std::vector<double> g(cells.begin(), cells.end());
  if (vm.sigma == 0.0 && vm.mu == 0.0) return g;
  std::mt19937_64 rng(derive_seed(vm.seed, stream));
  std::normal_distribution<double> eps(vm.mu, vm.sigma);
  for (double& c : g) c *= std::exp(eps(rng));
  return g;
}

double fragment_dot(std::span<const double> cells, std::span<const std::uint8_t> bits) {
  if (cells.size() != bits.size()) throw ShapeError("fragment_dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (bits[i]) s += cells[i];
  return s;
}

std::uint32_t adc_sample(double analog, unsigned adc_bits) {
  const double top = static_cast<double>((std::uint64_t{1} << adc_bits) - 1);
  if (!(analog > 0.0)) return 0;
  return static_cast<std::uint32_t>(std::min(std::round(analog), top));
}

std::int64_t shift_add_accumulate(std::span<const std::uint32_t> codes, std::size_t planes, std::size_t slices,
                                  unsigned cell_bits) {
  if (codes.size() != planes * slices) throw ShapeError("shift_add_accumulate: code count mismatch");
  std::int64_t acc = 0;
  for (std::size_t b = 0; b < planes; ++b)
    for (std::size_t k = 0; k < slices; ++k)
      acc += static_cast<std::int64_t>(codes[b * slices + k]) << (b + k * cell_bits);
  return acc;
}

std::int64_t signed_accumulate(std::span<const std::int64_t> magnitudes, std::span<const Sign> signs) {
  if (magnitudes.size() != signs.size()) throw ShapeError("signed_accumulate: one sign bit per fragment required");
  std::int64_t acc = 0;
  for (std::size_t f = 0; f < magnitudes.size(); ++f)
    acc += signs[f] == Sign::negative ? -magnitudes[f] : magnitudes[f];
  return acc;
}

std::vector<std::int64_t> reference_mvm(std::span<const std::int64_t> weights, std::size_t outputs,
                                        std::span<const std::uint16_t> inputs, std::size_t n, std::size_t vectors) {
  if (weights.size() != outputs * n || inputs.size() != n * vectors)
    throw ShapeError("reference_mvm: shape mismatch");
  std::vector<std::int64_t> out(outputs * vectors, 0);
  for (std::size_t o = 0; o < outputs; ++o)
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t w = weights[o * n + i];
      if (w == 0) continue;
      for (std::size_t v = 0; v < vectors; ++v) out[o * vectors + v] += w * inputs[i * vectors + v];
    }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "layer,vector,filter,fragment,crossbar,column,eic,saturations,result\n";
  for (const auto& r : rows)
    out << r.layer << ',' << r.vector << ',' << r.filter << ',' << r.fragment << ',' << r.crossbar << ','
        << r.column << ',' << r.eic << ',' << r.saturations << ',' << r.result << '\n';
}

void SimStats::merge(const SimStats& o) {
  fragment_waves += o.fragment_waves;
  cycles += o.cycles;
  cycles_no_skip += o.cycles_no_skip;
  adc_conversions += o.adc_conversions;
  saturation_events += o.saturation_events;
}

DeviceLayer program_layer(const MappedLayer& layer, const VariationModel& vm, std::uint64_t layer_key) {
  DeviceLayer d;
  d.layer = &layer;
  for (std::size_t x = 0; x < layer.crossbars.size(); ++x)
    d.conductance.push_back(inject_variation(layer.crossbars[x].cells, vm, derive_seed(layer_key, x)));
  return d;
}

LayerSimResult simulate_layer(const DeviceLayer& device, std::span<const std::uint16_t> inputs,
                              std::size_t vectors, const CrossbarSpec& spec, const SimOptions& opts) {
  if (!device.layer) throw ShapeError("simulate_layer: device is not programmed");
  const MappedLayer& ml = *device.layer;
  if (ml.fragment_size != spec.subarray_rows || ml.cell_bits != spec.cell_bits)
    throw ShapeError(ml.name + ": mapping does not match the crossbar spec");
  if (inputs.size() != ml.input_size * vectors)
    throw ShapeError(ml.name + ": expected " + std::to_string(ml.input_size) + " x " + std::to_string(vectors) +
                     " inputs, got " + std::to_string(inputs.size()));
  if (device.conductance.size() != ml.crossbars.size()) throw ShapeError(ml.name + ": device/crossbar mismatch");

  const unsigned adc_bits = opts.adc_bits ? opts.adc_bits : spec.resolved_adc_bits();
  const unsigned in_bits = spec.input_bits;
  const std::uint32_t in_limit = (1u << in_bits) - 1;
  const double adc_top = static_cast<double>((std::uint64_t{1} << adc_bits) - 1);
  const std::size_t m = ml.fragment_size;
  const std::size_t fpf = ml.fragments_per_filter;
  const std::size_t kept = ml.filters.size();

  LayerSimResult res;
  res.acc.assign(kept * vectors, 0);
  res.fragment_cycles.assign(vectors * fpf, 0);
  if (ml.crossbars.empty()) return res;

  std::vector<std::uint16_t> x(m);
  std::vector<std::uint32_t> codes;
  for (std::size_t v = 0; v < vectors; ++v)
    for (std::size_t f = 0; f < fpf; ++f) {
      const std::size_t b0 = ml.fragment_begin(f), len = ml.fragment_end(f) - b0;
      for (std::size_t s = 0; s < len; ++s) {
        x[s] = inputs[ml.input_rows[b0 + s] * vectors + v];
        if (x[s] > in_limit) throw ShapeError(ml.name + ": input exceeds input_bits");
      }
      const unsigned eic = fragment_eic(std::span<const std::uint16_t>(x.data(), len));
      const unsigned planes = opts.zero_skip ? eic : in_bits;
      res.fragment_cycles[v * fpf + f] = planes;
      res.stats.fragment_waves += 1;
      res.stats.cycles += planes;
      res.stats.cycles_no_skip += in_bits;

      for (std::size_t j = 0; j < kept; ++j) {
        const FragmentPlacement& pl = ml.place(j, f);
        const std::vector<double>& g = device.conductance[pl.crossbar];
        const std::size_t cols = ml.crossbars[pl.crossbar].cols;
        const std::size_t row0 = pl.subarray_row * m;
        codes.assign(static_cast<std::size_t>(planes) * ml.slices, 0);
        std::size_t sat = 0;
        for (unsigned b = 0; b < planes; ++b)
          for (std::size_t k = 0; k < ml.slices; ++k) {
            double analog = 0.0;
            for (std::size_t s = 0; s < len; ++s)
              if ((x[s] >> b) & 1u) analog += g[(row0 + s) * cols + pl.column + k];
            if (std::round(analog) > adc_top) ++sat;
            codes[b * ml.slices + k] = adc_sample(analog, adc_bits);
          }
        const std::int64_t mag = shift_add_accumulate(codes, planes, ml.slices, ml.cell_bits);
        const std::int64_t contrib = ml.sign(j, f) == Sign::negative ? -mag : mag;
        res.acc[j * vectors + v] += contrib;
        res.stats.adc_conversions += codes.size();
        res.stats.saturation_events += sat;
        if (opts.trace)
          opts.trace->push_back({ml.name, v, pl.filter, f, pl.crossbar, pl.column, eic, sat, contrib});
      }
    }
  return res;
}

std::vector<std::uint16_t> quantize_activations(std::span<const double> x, int exponent, unsigned input_bits) {
  const double top = static_cast<double>((1u << input_bits) - 1);
  const double scale = std::ldexp(1.0, exponent);
  std::vector<std::uint16_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::floor(x[i] * scale);
    out[i] = static_cast<std::uint16_t>(c <= 0.0 ? 0.0 : std::min(c, top));
  }
  return out;
}

void calibrate_activations(ModelGraph& model, const Dataset& calibration, std::size_t max_samples,
                           unsigned input_bits) {
  const auto wl = model.weighted_layers();
  std::vector<double> peak(wl.size(), 0.0);
  const std::size_t n = max_samples ? std::min(max_samples, calibration.size()) : calibration.size();
  for (std::size_t i = 0; i < n; ++i) {
    const ForwardResult fr = forward(model, calibration.image(i));
    for (std::size_t k = 0; k < wl.size(); ++k)
      for (double a : fr.activations[wl[k]]) peak[k] = std::max(peak[k], a);
  }
  const double top = static_cast<double>((1u << input_bits) - 1);
  for (std::size_t k = 0; k < wl.size(); ++k) {
    int e = 0;
    if (peak[k] > 0.0) e = static_cast<int>(std::floor(std::log2(top / peak[k])));
    model.layers[wl[k]].act_exponent = std::clamp(e, -30, 30);
  }
}

std::vector<LayerInputCodes> layer_input_codes(const ModelGraph& model, std::span<const double> image,
                                               unsigned input_bits) {
  const ForwardResult fr = forward(model, image);
  std::vector<LayerInputCodes> out;
  for (std::size_t li : model.weighted_layers()) {
    const Layer& l = model.layers[li];
    const Shape3 s = model.shape_at(li);
    LayerInputCodes c;
    c.name = l.name;
    const auto codes = quantize_activations(fr.activations[li], l.act_exponent, input_bits);
    if (l.kind == LayerKind::conv) {
      c.codes = im2col<std::uint16_t>(codes, s, l.weight.shape[2], l.weight.shape[3]);
      const Shape3 next = model.shape_at(li + 1);
      c.vectors = next.h * next.w;
    } else {
      c.codes = codes;
      c.vectors = 1;
    }
    c.rows = l.weight.filter_size();
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::vector<double> relu(std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (double& v : y) v = v > 0.0 ? v : 0.0;
  return y;
}

std::vector<double> maxpool(std::span<const double> x, Shape3 s, std::size_t pool) {
  const Shape3 o{s.c, s.h / pool, s.w / pool};
  std::vector<double> y(o.size());
  for (std::size_t c = 0; c < o.c; ++c)
    for (std::size_t oy = 0; oy < o.h; ++oy)
      for (std::size_t ox = 0; ox < o.w; ++ox) {
        double best = x[(c * s.h + oy * pool) * s.w + ox * pool];
        for (std::size_t i = 0; i < pool; ++i)
          for (std::size_t j = 0; j < pool; ++j) best = std::max(best, x[(c * s.h + oy * pool + i) * s.w + ox * pool + j]);
        y[(c * o.h + oy) * o.w + ox] = best;
      }
  return y;
}

// Exact signed levels of the retained weights, (kept filters x slots).
std::vector<std::int64_t> model_levels(const CompressedModel& cm, std::size_t i, const MappedLayer& ml) {
  const Weight2D h = cm.weight2d(i);
  const double scale = cm.layers[i].quant_scale;
  const std::size_t slots = ml.input_rows.size();
  std::vector<std::int64_t> out(ml.filters.size() * slots, 0);
  for (std::size_t j = 0; j < ml.filters.size(); ++j)
    for (std::size_t s = 0; s < slots; ++s) {
      const double w = h(ml.input_rows[s], ml.filters[j]);
      if (w == 0.0) continue;
      if (!(scale > 0.0)) throw ShapeError(ml.name + ": layer is not quantized");
      const auto k = static_cast<std::int64_t>(std::llround(std::abs(w) / scale));
      out[j * slots + s] = w < 0.0 ? -k : k;
    }
  return out;
}

}  // namespace

Accelerator::Accelerator(CompressedModel model, std::vector<MappedLayer> mapped, CrossbarSpec spec, SimOptions opts)
    : model_(std::move(model)), mapped_(std::move(mapped)), spec_(spec), opts_(opts) {
  spec_.validate();
  if (mapped_.size() != model_.layers.size()) throw ShapeError("accelerator: one mapped layer per weighted layer");
  for (std::size_t i = 0; i < mapped_.size(); ++i)
    devices_.push_back(program_layer(mapped_[i], opts_.variation, i));
}

NetworkRun Accelerator::run(std::span<const double> image, Engine engine) const {
  const ModelGraph& g = model_.graph;
  if (image.size() != g.input.size()) throw ShapeError("accelerator: input size mismatch");
  NetworkRun out;
  std::vector<double> x(image.begin(), image.end());
  Shape3 s = g.input;
  std::size_t wi = 0;
  for (std::size_t li = 0; li < g.layers.size(); ++li) {
    const Layer& l = g.layers[li];
    const Shape3 next = g.shape_at(li + 1);
    if (!l.has_weights()) {
      x = l.kind == LayerKind::relu ? relu(x) : maxpool(x, s, l.pool);
      s = next;
      continue;
    }
    const MappedLayer& ml = mapped_[wi];
    const auto codes = quantize_activations(x, l.act_exponent, spec_.input_bits);
    std::vector<std::uint16_t> cols;
    std::size_t vectors = 1;
    if (l.kind == LayerKind::conv) {
      cols = im2col<std::uint16_t>(codes, s, l.weight.shape[2], l.weight.shape[3]);
      vectors = next.h * next.w;
    } else {
      cols = codes;
    }
    std::vector<std::int64_t> acc;
    SimStats st;
    if (engine == Engine::crossbar) {
      LayerSimResult r = simulate_layer(devices_[wi], cols, vectors, spec_, opts_);
      acc = std::move(r.acc);
      st = r.stats;
    } else {
      const auto levels = model_levels(model_, wi, ml);
      std::vector<std::uint16_t> permuted;
      permuted.reserve(ml.input_rows.size() * vectors);
      for (std::size_t r : ml.input_rows)
        permuted.insert(permuted.end(), cols.begin() + static_cast<std::ptrdiff_t>(r * vectors),
                        cols.begin() + static_cast<std::ptrdiff_t>((r + 1) * vectors));
      acc = reference_mvm(levels, ml.filters.size(), permuted, ml.input_rows.size(), vectors);
    }
    out.layer_stats.push_back(st);
    out.layer_eic.push_back(
        eic_stats(cols, ml.input_size, vectors, ml.input_rows, ml.fragment_size, spec_.input_bits));

    const double unit = model_.layers[wi].quant_scale * std::ldexp(1.0, -l.act_exponent);
    std::vector<double> y(next.size(), 0.0);
    const std::size_t filters = l.weight.filters();
    for (std::size_t f = 0; f < filters; ++f)
      for (std::size_t v = 0; v < vectors; ++v) y[f * vectors + v] = l.bias[f];
    for (std::size_t j = 0; j < ml.filters.size(); ++j)
      for (std::size_t v = 0; v < vectors; ++v)
        y[ml.filters[j] * vectors + v] += static_cast<double>(acc[j * vectors + v]) * unit;
    x = std::move(y);
    s = next;
    ++wi;
  }
  out.logits = std::move(x);
  return out;
}

int Accelerator::predict(std::span<const double> image, Engine engine) const {
  const NetworkRun r = run(image, engine);
  return static_cast<int>(std::max_element(r.logits.begin(), r.logits.end()) - r.logits.begin());
}

double Accelerator::accuracy(const Dataset& data, Engine engine, std::size_t limit) const {
  const std::size_t n = limit ? std::min(limit, data.size()) : data.size();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (predict(data.image(i), engine) == data.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace forms
