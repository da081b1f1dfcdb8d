#include "forms/perf_model.hpp"

#include <cmath>
#include <limits>

#include "forms/errors.hpp"

namespace forms {

const char* to_string(ArchKind k) { return k == ArchKind::forms ? "forms" : "isaac"; }

double HardwareSpec::mcu_component_power_mw() const {
  double p = 0.0;
  for (const auto& c : mcu_components) p += c.power_mw;
  return p;
}

double HardwareSpec::mcu_component_area_mm2() const {
  double a = 0.0;
  for (const auto& c : mcu_components) a += c.area_mm2;
  return a;
}

double cycle_time(double cols_per_adc, double adc_freq_ghz) {
  if (!(cols_per_adc > 0.0) || !(adc_freq_ghz > 0.0)) throw ShapeError("cycle_time: arguments must be positive");
  return cols_per_adc / adc_freq_ghz;
}

double HardwareSpec::cycle_time_ns() const {
  return cycle_time(static_cast<double>(crossbar.cols) / static_cast<double>(crossbar.adcs_per_crossbar),
                    crossbar.adc_freq_ghz);
}

std::size_t HardwareSpec::rows_per_conversion() const {
  return arch == ArchKind::forms ? crossbar.subarray_rows : crossbar.rows;
}

void HardwareSpec::validate() const {
  crossbar.validate();
  auto nonneg = [&](const Block& b, const char* what) {
    if (!(b.power_mw >= 0.0) || !(b.area_mm2 >= 0.0)) throw ConfigError(name + ": negative " + what);
  };
  for (const auto& c : mcu_components)
    if (!(c.power_mw >= 0.0) || !(c.area_mm2 >= 0.0)) throw ConfigError(name + ": negative component " + c.name);
  nonneg(digital_unit, "digital unit");
  nonneg(mcus_per_tile, "MCU block");
  nonneg(tiles_total, "tile total");
  nonneg(links, "links");
  if (!(static_fraction >= 0.0 && static_fraction <= 1.0)) throw ConfigError(name + ": static_fraction must be in [0, 1]");
}

HardwareSpec forms_hardware(std::size_t m) {
  HardwareSpec h;
  h.arch = ArchKind::forms;
  h.name = "FORMS-" + std::to_string(m);
  unsigned adc_bits = 0;
  switch (m) {
    case 4: adc_bits = 3; break;
    case 8: adc_bits = 4; break;
    case 16: adc_bits = 5; break;
    default: throw ConfigError("FORMS hardware is defined for fragment sizes 4, 8 and 16");
  }
  h.crossbar.subarray_rows = m;
  h.crossbar.adc_bits = adc_bits;
  h.crossbar.adcs_per_crossbar = 4;
  h.crossbar.adc_freq_ghz = 2.1;
  h.mcu_components = {
      {"ADC", std::to_string(adc_bits) + "-bit / 2.1GHz / 32", 15.2, 0.0091},
      {"DAC", "1-bit / 8x128", 4.0, 0.00017},
      {"S&H", "8x128", 0.0055, 0.000023},
      {"crossbar array", "8 x 128x128, 2 bit/cell", 2.44, 0.00024},
      {"S+A", "4", 0.2, 0.000024},
      {"skipping logic", "", 0.01, 0.0000001},
      {"sign indicator", "", 0.012, 0.0000031},
  };
  h.digital_unit = {53.05, 0.25};
  h.mcus_per_tile = {280.05, 0.152};
  h.tiles_total = {55960.8, 66.27};
  h.links = {10400.0, 22.88};
  h.edram_kb_per_tile = 128;
  return h;
}

HardwareSpec isaac_hardware() {
  HardwareSpec h;
  h.arch = ArchKind::isaac;
  h.name = "ISAAC";
  h.crossbar.subarray_rows = 128;
  h.crossbar.subarray_cols = 128;
  h.crossbar.adc_bits = 8;
  h.crossbar.adcs_per_crossbar = 1;
  h.crossbar.adc_freq_ghz = 1.2;
  h.mcu_components = {
      {"ADC", "8-bit / 1.2GHz / 8", 16.0, 0.0096},
      {"DAC", "1-bit / 8x128", 4.0, 0.00017},
      {"S&H", "8x128", 0.01, 0.00004},
      {"crossbar array", "8 x 128x128, 2 bit/cell", 2.43, 0.00023},
      {"S+A", "4", 0.2, 0.000024},
  };
  h.digital_unit = {40.85, 0.213};
  h.mcus_per_tile = {288.96, 0.1580};
  h.tiles_total = {55408.08, 62.21};
  h.links = {10400.0, 22.88};
  h.edram_kb_per_tile = 64;
  return h;
}

HardwareSpec hardware_by_name(const std::string& name) {
  if (name == "isaac" || name == "ISAAC") return isaac_hardware();
  if (name == "forms4") return forms_hardware(4);
  if (name == "forms8" || name == "forms") return forms_hardware(8);
  if (name == "forms16") return forms_hardware(16);
  throw ConfigError("unknown hardware '" + name + "' (expected isaac, forms4, forms8 or forms16)");
}

namespace {

nlohmann::json block_json(const Block& b) { return {{"power_mw", b.power_mw}, {"area_mm2", b.area_mm2}}; }

Block block_from(const nlohmann::json& j, const std::string& where) {
  Block b;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "power_mw") b.power_mw = it.value().get<double>();
    else if (it.key() == "area_mm2") b.area_mm2 = it.value().get<double>();
    else throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
  return b;
}

}  // namespace

void to_json(nlohmann::json& j, const HardwareSpec& s) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : s.mcu_components)
    comps.push_back({{"name", c.name}, {"spec", c.spec}, {"power_mw", c.power_mw}, {"area_mm2", c.area_mm2}});
  j = {{"name", s.name},
       {"arch", to_string(s.arch)},
       {"crossbar", s.crossbar},
       {"mcu_components", comps},
       {"digital_unit", block_json(s.digital_unit)},
       {"mcus_per_tile", block_json(s.mcus_per_tile)},
       {"tiles_total", block_json(s.tiles_total)},
       {"links", block_json(s.links)},
       {"edram_kb_per_tile", s.edram_kb_per_tile},
       {"static_fraction", s.static_fraction},
       {"pipeline_stages", s.pipeline_stages},
       {"pooling_stages", s.pooling_stages}};
}

void from_json(const nlohmann::json& j, HardwareSpec& s) {
  if (!j.is_object()) throw ConfigError("hardware spec must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "name") s.name = v.get<std::string>();
    else if (k == "arch") {
      const auto a = v.get<std::string>();
      if (a == "forms") s.arch = ArchKind::forms;
      else if (a == "isaac") s.arch = ArchKind::isaac;
      else throw ConfigError("hardware.arch must be 'forms' or 'isaac'");
    } else if (k == "crossbar") {
      from_json(v, s.crossbar);
    } else if (k == "mcu_components") {
      s.mcu_components.clear();
      for (const auto& c : v) {
        Component comp;
        for (auto ci = c.begin(); ci != c.end(); ++ci) {
          if (ci.key() == "name") comp.name = ci.value().get<std::string>();
          else if (ci.key() == "spec") comp.spec = ci.value().get<std::string>();
          else if (ci.key() == "power_mw") comp.power_mw = ci.value().get<double>();
          else if (ci.key() == "area_mm2") comp.area_mm2 = ci.value().get<double>();
          else throw ConfigError("unknown key '" + ci.key() + "' in hardware.mcu_components");
        }
        s.mcu_components.push_back(comp);
      }
    } else if (k == "digital_unit") s.digital_unit = block_from(v, "hardware.digital_unit");
    else if (k == "mcus_per_tile") s.mcus_per_tile = block_from(v, "hardware.mcus_per_tile");
    else if (k == "tiles_total") s.tiles_total = block_from(v, "hardware.tiles_total");
    else if (k == "links") s.links = block_from(v, "hardware.links");
    else if (k == "edram_kb_per_tile") s.edram_kb_per_tile = v.get<std::size_t>();
    else if (k == "static_fraction") s.static_fraction = v.get<double>();
    else if (k == "pipeline_stages") s.pipeline_stages = v.get<std::size_t>();
    else if (k == "pooling_stages") s.pooling_stages = v.get<std::size_t>();
    else throw ConfigError("unknown hardware key '" + k + "'");
  }
}

LayerLatency layer_latency(const std::vector<std::size_t>& wave_cycles, bool pooled, const HardwareSpec& hw) {
  LayerLatency l;
  for (auto c : wave_cycles) l.compute_cycles += c;
  l.pipeline_stages = hw.pipeline_stages + (pooled ? hw.pooling_stages : 0);
  const double t = hw.cycle_time_ns();
  l.compute_ns = static_cast<double>(l.compute_cycles) * t;
  l.fill_ns = static_cast<double>(l.pipeline_stages) * t;
  return l;
}

LayerLatency layer_latency(const EicStats& stats, bool zero_skip, bool pooled, const HardwareSpec& hw) {
  std::vector<std::size_t> waves;
  waves.reserve(stats.histogram.size());
  if (zero_skip)
    for (std::size_t e = 0; e < stats.histogram.size(); ++e) waves.push_back(e * stats.histogram[e]);
  else
    waves.push_back(stats.fragments * stats.input_bits);
  return layer_latency(waves, pooled, hw);
}

EnergyBreakdown energy_estimate(const std::vector<ComponentActivity>& activity, double wall_seconds,
                                double static_fraction) {
  if (!(static_fraction >= 0.0 && static_fraction <= 1.0)) throw ShapeError("static_fraction must be in [0, 1]");
  EnergyBreakdown e;
  for (const auto& a : activity) {
    const double p = a.power_mw * 1e-3;
    e.static_j += static_fraction * p * a.instances * wall_seconds;
    e.dynamic_j += (1.0 - static_fraction) * p * a.active_seconds;
  }
  return e;
}

Throughput throughput_metrics(double ops, double seconds, double area_mm2, double power_w) {
  if (!(ops > 0.0)) throw ShapeError("throughput_metrics: op count must be positive");
  if (!(seconds > 0.0)) throw ShapeError("throughput_metrics: time must be positive");
  if (!(area_mm2 > 0.0)) throw ShapeError("throughput_metrics: area must be positive");
  if (!(power_w > 0.0)) throw ShapeError("throughput_metrics: power must be positive");
  Throughput t;
  t.gops = ops / seconds * 1e-9;
  t.gops_per_mm2 = t.gops / area_mm2;
  t.gops_per_w = t.gops / power_w;
  return t;
}

void to_json(nlohmann::json& j, const SimReport& r) {
  j = {{"config", r.config},
       {"total_cycles", r.total_cycles},
       {"crossbar_seconds", r.crossbar_seconds},
       {"frame_time_s", r.frame_time_s},
       {"fill_latency_s", r.fill_latency_s},
       {"wall_time_s", r.wall_time_s},
       {"frames", r.frames},
       {"energy_j", r.energy_j},
       {"power_w", r.power_w},
       {"area_mm2", r.area_mm2},
       {"ops_per_frame", r.ops_per_frame},
       {"gops", r.gops},
       {"gops_per_mm2", r.gops_per_mm2},
       {"gops_per_w", r.gops_per_w},
       {"fps", r.fps},
       {"speedup", r.speedup},
       {"baseline", r.baseline},
       {"crossbars_mapped", r.crossbars_mapped},
       {"constant_driven", r.constant_driven}};
}

double Workload::ops_per_frame() const {
  double macs = 0.0;
  for (const auto& l : layers) macs += l.macs();
  return 2.0 * macs;
}

ArchConfig isaac_baseline() { return {"ISAAC (32-bit, unpruned)", isaac_hardware(), false, 32, false, false}; }

ArchConfig forms_full(std::size_t m) {
  return {"FORMS-" + std::to_string(m) + " (full optimization)", forms_hardware(m), true, 8, true, true};
}

SimReport evaluate(const ArchConfig& c, const Workload& w, double frames) {
  c.hw.validate();
  if (c.zero_skip && c.hw.arch == ArchKind::isaac) throw ConfigError(c.name + ": ISAAC has no zero-skipping logic");
  if (c.weight_bits == 0) throw ConfigError(c.name + ": weight_bits must be >= 1");
  const CrossbarSpec& xb = c.hw.crossbar;
  const double slices = std::ceil(static_cast<double>(c.weight_bits) / xb.cell_bits);
  const double mult = c.polarized ? 1.0 : 2.0;
  const double m_arch = static_cast<double>(c.hw.rows_per_conversion());
  const double t_ns = c.hw.cycle_time_ns();

  SimReport r;
  r.config = c.name;
  r.frames = frames;
  r.ops_per_frame = w.ops_per_frame();
  double fill_ns = 0.0;
  for (const auto& l : w.layers) {
    const double rows = static_cast<double>(c.pruned ? l.kept_rows : l.rows);
    const double filters = static_cast<double>(c.pruned ? l.kept_filters : l.filters);
    double bit_rows = static_cast<double>(xb.input_bits) * rows * static_cast<double>(l.waves);
    if (c.zero_skip) {
      if (l.fragment_size != xb.subarray_rows)
        throw ConfigError(c.name + ": workload EIC was measured with fragment size " + std::to_string(l.fragment_size));
      bit_rows = c.pruned ? l.slot_eic_kept : l.slot_eic_dense;
    }
    const double col_equiv = filters * slices * mult / static_cast<double>(xb.cols);
    const double cycles = col_equiv * bit_rows / m_arch;
    r.total_cycles += cycles;
    r.crossbar_seconds += cycles * t_ns * 1e-9;
    fill_ns += static_cast<double>(c.hw.pipeline_stages + (l.pooled ? c.hw.pooling_stages : 0)) * t_ns;
    const double rows_i = rows, filt_i = filters;
    const double rt = std::ceil(rows_i / xb.rows);
    const double ct = std::ceil(filt_i * slices * mult / xb.cols);
    r.crossbars_mapped += static_cast<std::size_t>(rt * ct);
  }
  const double n_xbar = static_cast<double>(xb.total_crossbars());
  r.fill_latency_s = fill_ns * 1e-9;
  if (r.crossbar_seconds > 0.0) {
    r.frame_time_s = r.crossbar_seconds / n_xbar;
    r.fps = 1.0 / r.frame_time_s;
  }
  r.wall_time_s = r.frame_time_s * frames;
  const Block chip = c.hw.chip();
  r.area_mm2 = chip.area_mm2;

  const double mcus = static_cast<double>(xb.tiles * xb.mcus_per_tile);
  const double busy_mcu_seconds = r.crossbar_seconds * frames / static_cast<double>(xb.crossbars_per_mcu);
  const std::vector<ComponentActivity> act = {
      {"mcu", c.hw.mcus_per_tile.power_mw / static_cast<double>(xb.mcus_per_tile), mcus, busy_mcu_seconds},
      {"digital", c.hw.digital_unit.power_mw, static_cast<double>(xb.tiles), static_cast<double>(xb.tiles) * r.wall_time_s},
      {"links", c.hw.links.power_mw, 1.0, r.wall_time_s},
  };
  r.energy_j = energy_estimate(act, r.wall_time_s, c.hw.static_fraction).total_j();
  if (r.wall_time_s > 0.0) {
    r.power_w = r.energy_j / r.wall_time_s;
    const Throughput t = throughput_metrics(r.ops_per_frame * frames, r.wall_time_s, r.area_mm2, r.power_w);
    r.gops = t.gops;
    r.gops_per_mm2 = t.gops_per_mm2;
    r.gops_per_w = t.gops_per_w;
  }
  return r;
}

SpeedupBreakdown speedup_compare(const ArchConfig& a, const ArchConfig& b, const Workload& w) {
  SpeedupBreakdown s;
  s.a = evaluate(a, w);
  s.b = evaluate(b, w);
  auto ratio = [&](const ArchConfig& x, const SimReport& base) { return evaluate(x, w).fps / base.fps; };
  s.total = s.a.fps / s.b.fps;
  s.a.speedup = s.total;
  s.a.baseline = b.name;
  s.b.baseline = b.name;

  ArchConfig t = b;
  t.pruned = a.pruned;
  s.pruning = ratio(t, s.b);

  t = b;
  t.weight_bits = a.weight_bits;
  s.quantization = ratio(t, s.b);

  t = b;
  t.hw = a.hw;
  t.polarized = a.polarized;
  s.polarization = ratio(t, s.b);

  t = a;
  t.zero_skip = b.zero_skip;
  s.zero_skip = s.a.fps / evaluate(t, w).fps;
  return s;
}

std::vector<ThroughputRow> throughput_comparison() {
  const HardwareSpec isaac = isaac_hardware();
  const HardwareSpec forms = forms_hardware(8);
  // Peak rate of the unoptimised ISAAC chip: every crossbar busy, 16-bit
  // weights in 2-bit cells with two columns per weight, 16 input bit-planes.
  const CrossbarSpec& xb = isaac.crossbar;
  const double weights_per_xbar = static_cast<double>(xb.rows) * xb.cols / (16.0 / xb.cell_bits * 2.0);
  const double isaac_ops_per_s = static_cast<double>(xb.total_crossbars()) * weights_per_xbar * 2.0 /
                                 (xb.input_bits * isaac.cycle_time_ns() * 1e-9);

  auto metrics = [&](const HardwareSpec& hw, double throughput_factor, double power_factor) {
    const Block chip = hw.chip();
    return throughput_metrics(isaac_ops_per_s * throughput_factor, 1.0, chip.area_mm2,
                              chip.power_mw * 1e-3 * power_factor);
  };
  const Throughput ref = metrics(isaac, 1.0, 1.0);

  struct Profile {
    const char* name;
    const HardwareSpec* hw;
    double throughput_factor, power_factor;
    double published_area, published_power;
  };
  // Effective-throughput and power-draw factors relative to the ISAAC peak.
  const Profile modelled[] = {
      {"ISAAC", &isaac, 1.0, 1.0, 1.0, 1.0},
      {"FORMS (polarization only, 8)", &forms, 0.56577, 0.91976, 0.54, 0.61},
      {"FORMS (polarization only, 16)", &forms, 0.80674, 0.95241, 0.77, 0.84},
      {"Pruned/Quantized-ISAAC", &isaac, 26.400, 0.99211, 26.4, 26.61},
      {"FORMS (full optimization, 8)", &forms, 37.739, 1.3496, 36.02, 27.73},
      {"FORMS (full optimization, 16)", &forms, 41.364, 0.80022, 39.48, 51.26},
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  struct Published {
    const char* name;
    double area, power;
  };
  const Published published[] = {
      {"DaDianNao", 0.13, 0.45}, {"PUMA", 0.70, 0.79},  {"TPU", 0.08, 0.48},
      {"WAX", 0.33, 2.3},        {"SIMBA", 0.34, nan},  {"Pruned/Quantized-PUMA", 18.67, 21.07},
  };

  std::vector<ThroughputRow> rows;
  auto add_modelled = [&](const Profile& p) {
    const Throughput t = metrics(*p.hw, p.throughput_factor, p.power_factor);
    rows.push_back({p.name, t.gops_per_mm2 / ref.gops_per_mm2, t.gops_per_w / ref.gops_per_w, p.published_area,
                    p.published_power, true, p.throughput_factor, p.power_factor});
  };
  add_modelled(modelled[0]);
  for (const auto& p : published) rows.push_back({p.name, p.area, p.power, p.area, p.power, false, nan, nan});
  for (std::size_t i = 1; i < std::size(modelled); ++i) add_modelled(modelled[i]);
  return rows;
}

}  // namespace forms
