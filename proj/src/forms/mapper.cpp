#include "forms/mapper.hpp"

#include <cctype>
#include <cmath>

#include "forms/container.hpp"
#include "forms/rng.hpp"

namespace forms {

unsigned non_saturating_adc_bits(std::size_t fragment_size, unsigned cell_bits) {
  const std::uint64_t top = static_cast<std::uint64_t>(fragment_size) * ((1u << cell_bits) - 1);
  unsigned b = 0;
  while ((std::uint64_t{1} << b) < top + 1) ++b;
  return b;
}

unsigned CrossbarSpec::resolved_adc_bits() const {
  return adc_bits == 0 ? non_saturating_adc_bits(subarray_rows, cell_bits) : adc_bits;
}

void CrossbarSpec::validate() const {
  if (rows == 0 || cols == 0) throw ConfigError("crossbar rows and cols must be >= 1");
  if (subarray_rows == 0 || rows % subarray_rows != 0)
    throw ConfigError("crossbar rows (" + std::to_string(rows) + ") must be a multiple of the fragment size (" +
                      std::to_string(subarray_rows) + ")");
  if (subarray_cols == 0 || cols % subarray_cols != 0)
    throw ConfigError("crossbar cols must be a multiple of the sub-array width");
  if (cell_bits == 0 || cell_bits > 8) throw ConfigError("cell_bits must be in [1, 8]");
  if (adc_bits > 24) throw ConfigError("adc_bits must be in [0, 24]");
  if (input_bits == 0 || input_bits > 16) throw ConfigError("input_bits must be in [1, 16]");
  if (adcs_per_crossbar == 0 || !(adc_freq_ghz > 0.0)) throw ConfigError("ADC count and frequency must be positive");
  if (crossbars_per_mcu == 0 || mcus_per_tile == 0 || tiles == 0) throw ConfigError("hierarchy counts must be >= 1");
}

void to_json(nlohmann::json& j, const CrossbarSpec& s) {
  j = nlohmann::json{{"rows", s.rows},
                     {"cols", s.cols},
                     {"cell_bits", s.cell_bits},
                     {"subarray_rows", s.subarray_rows},
                     {"subarray_cols", s.subarray_cols},
                     {"adcs_per_crossbar", s.adcs_per_crossbar},
                     {"adc_bits", s.adc_bits},
                     {"adc_freq_ghz", s.adc_freq_ghz},
                     {"crossbars_per_mcu", s.crossbars_per_mcu},
                     {"mcus_per_tile", s.mcus_per_tile},
                     {"tiles", s.tiles},
                     {"input_bits", s.input_bits}};
}

void from_json(const nlohmann::json& j, CrossbarSpec& s) {
  if (!j.is_object()) throw ConfigError("crossbar spec must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "rows") s.rows = v.get<std::size_t>();
    else if (k == "cols") s.cols = v.get<std::size_t>();
    else if (k == "cell_bits") s.cell_bits = v.get<unsigned>();
    else if (k == "subarray_rows") s.subarray_rows = v.get<std::size_t>();
    else if (k == "subarray_cols") s.subarray_cols = v.get<std::size_t>();
    else if (k == "adcs_per_crossbar") s.adcs_per_crossbar = v.get<std::size_t>();
    else if (k == "adc_bits") s.adc_bits = v.get<unsigned>();
    else if (k == "adc_freq_ghz") s.adc_freq_ghz = v.get<double>();
    else if (k == "crossbars_per_mcu") s.crossbars_per_mcu = v.get<std::size_t>();
    else if (k == "mcus_per_tile") s.mcus_per_tile = v.get<std::size_t>();
    else if (k == "tiles") s.tiles = v.get<std::size_t>();
    else if (k == "input_bits") s.input_bits = v.get<unsigned>();
    else throw ConfigError("unknown crossbar key '" + k + "'");
  }
}

ReorderedWeights reorder_fragments(const WeightTensor& w, PolarizationOrder order) {
  ReorderedWeights out;
  if (w.shape.size() == 4)
    out.permutation = traversal_order(w.channels(), w.height(), w.width(), order);
  else
    out.permutation = traversal_order(w.channels(), 1, 1, order);
  const std::size_t k = w.filter_size();
  out.weights.reserve(w.values.size());
  for (std::size_t f = 0; f < w.filters(); ++f)
    for (std::size_t s = 0; s < k; ++s) out.weights.push_back(w.values[f * k + out.permutation[s]]);
  return out;
}

template <typename T>
std::vector<T> permute(std::span<const T> x, std::span<const std::size_t> permutation) {
  std::vector<T> out;
  out.reserve(permutation.size());
  for (std::size_t r : permutation) {
    if (r >= x.size()) throw ShapeError("permute: index out of range");
    out.push_back(x[r]);
  }
  return out;
}

template std::vector<double> permute(std::span<const double>, std::span<const std::size_t>);
template std::vector<std::uint16_t> permute(std::span<const std::uint16_t>, std::span<const std::size_t>);
template std::vector<std::int64_t> permute(std::span<const std::int64_t>, std::span<const std::size_t>);

std::vector<std::uint8_t> bit_slice(std::uint32_t magnitude, unsigned quant_bits, unsigned cell_bits) {
  if (cell_bits == 0 || quant_bits % cell_bits != 0)
    throw ShapeError("quant_bits must be a multiple of cell_bits");
  if (quant_bits < 32 && magnitude >= (std::uint32_t{1} << quant_bits))
    throw ShapeError("magnitude " + std::to_string(magnitude) + " does not fit in " + std::to_string(quant_bits) +
                     " bits");
  const std::uint32_t mask = (1u << cell_bits) - 1;
  std::vector<std::uint8_t> d(quant_bits / cell_bits);
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<std::uint8_t>((magnitude >> (k * cell_bits)) & mask);
  return d;
}

std::uint32_t MappedLayer::magnitude(std::size_t kept, std::size_t slot) const {
  const std::size_t f = slot / fragment_size;
  const FragmentPlacement& pl = place(kept, f);
  const CrossbarImage& xb = crossbars[pl.crossbar];
  const std::size_t row = pl.subarray_row * fragment_size + (slot - f * fragment_size);
  std::uint32_t m = 0;
  for (std::size_t k = 0; k < slices; ++k)
    m |= static_cast<std::uint32_t>(xb.at(row, pl.column + k)) << (k * cell_bits);
  return m;
}

MappedLayer map_layer(const std::string& name, const Weight2D& h, const FragmentLayout& layout,
                      const StructureMask& mask, double scale, unsigned quant_bits, const CrossbarSpec& spec) {
  spec.validate();
  layout.check(h);
  if (layout.fragment_size != spec.subarray_rows)
    throw ShapeError(name + ": fragment size " + std::to_string(layout.fragment_size) +
                     " does not match the sub-array height " + std::to_string(spec.subarray_rows));
  if (quant_bits % spec.cell_bits != 0) throw ShapeError(name + ": quant_bits must be a multiple of cell_bits");
  if (mask.cols.size() != h.cols()) throw ShapeError(name + ": column mask length mismatch");

  MappedLayer ml;
  ml.name = name;
  ml.fragment_size = layout.fragment_size;
  ml.quant_bits = quant_bits;
  ml.cell_bits = spec.cell_bits;
  ml.slices = quant_bits / spec.cell_bits;
  if (ml.slices > spec.cols) throw ShapeError(name + ": a weight needs more columns than a crossbar has");
  ml.input_size = h.rows();
  ml.output_channels = h.cols();
  ml.input_rows = layout.rows;
  ml.scale = scale;
  for (std::size_t c = 0; c < h.cols(); ++c)
    if (mask.cols[c]) ml.filters.push_back(c);
  ml.fragments_per_filter = layout.fragments_per_col();
  if (ml.filters.empty() || ml.input_rows.empty()) return ml;

  const std::size_t q = spec.q();
  const std::size_t m = ml.fragment_size;
  const std::uint32_t top = max_level(quant_bits);
  ml.row_tiles = (ml.fragments_per_filter + q - 1) / q;
  ml.filters_per_crossbar = spec.cols / ml.slices;
  const std::size_t col_tiles = (ml.filters.size() + ml.filters_per_crossbar - 1) / ml.filters_per_crossbar;
  ml.crossbars.assign(col_tiles * ml.row_tiles,
                      CrossbarImage{spec.rows, spec.cols, std::vector<std::uint8_t>(spec.rows * spec.cols, 0)});

  for (std::size_t j = 0; j < ml.filters.size(); ++j) {
    const std::size_t filter = ml.filters[j];
    const std::size_t ct = j / ml.filters_per_crossbar;
    const std::size_t col0 = (j % ml.filters_per_crossbar) * ml.slices;
    for (std::size_t f = 0; f < ml.fragments_per_filter; ++f) {
      const Sign sg = layout.sign(filter, f);
      FragmentPlacement pl{filter, f, ct * ml.row_tiles + f / q, f % q, col0 / spec.subarray_cols, col0};
      CrossbarImage& xb = ml.crossbars[pl.crossbar];
      for (std::size_t s = layout.fragment_begin(f); s < layout.fragment_end(f); ++s) {
        const double w = h(layout.rows[s], filter);
        if (w == 0.0) continue;
        if ((sg == Sign::positive) != (w > 0.0))
          throw Error(Status::constraint_violation, name + ": filter " + std::to_string(filter) + " fragment " +
                                                        std::to_string(f) + " is not polarized");
        const double lvl = scale > 0.0 ? std::abs(w) / scale : -1.0;
        const double k = std::round(lvl);
        if (!(lvl >= 0.0) || std::abs(lvl - k) > 1e-4 || k > top)
          throw Error(Status::constraint_violation, name + ": weight " + std::to_string(w) +
                                                        " is not on the quantization grid");
        const auto digits = bit_slice(static_cast<std::uint32_t>(k), quant_bits, spec.cell_bits);
        const std::size_t row = pl.subarray_row * m + (s - layout.fragment_begin(f));
        for (std::size_t d = 0; d < digits.size(); ++d) xb.at(row, col0 + d) = digits[d];
      }
      ml.signs.push_back(sg);
      ml.placement.push_back(pl);
    }
  }
  return ml;
}

MappedLayer map_layer(const CompressedModel& model, std::size_t i, const CrossbarSpec& spec) {
  const LayerCompression& lc = model.layers.at(i);
  return map_layer(lc.name, model.weight2d(i), lc.layout, lc.mask, lc.quant_scale, model.quant_bits, spec);
}

std::vector<MappedLayer> map_model(const CompressedModel& model, const CrossbarSpec& spec) {
  if (model.cell_bits != spec.cell_bits) throw ConfigError("model and crossbar disagree on cell_bits");
  std::vector<MappedLayer> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) out.push_back(map_layer(model, i, spec));
  return out;
}

std::vector<std::int64_t> signed_levels(const MappedLayer& layer) {
  const std::size_t slots = layer.input_rows.size();
  std::vector<std::int64_t> out(layer.filters.size() * slots, 0);
  if (layer.crossbars.empty()) return out;
  for (std::size_t j = 0; j < layer.filters.size(); ++j)
    for (std::size_t s = 0; s < slots; ++s) {
      const auto mag = static_cast<std::int64_t>(layer.magnitude(j, s));
      out[j * slots + s] = layer.sign(j, s / layer.fragment_size) == Sign::negative ? -mag : mag;
    }
  return out;
}

std::size_t count_split_crossbars(std::size_t rows, std::size_t filters, unsigned weight_bits,
                                  const CrossbarSpec& spec) {
  if (rows == 0 || filters == 0) return 0;
  const std::size_t cells = (weight_bits + spec.cell_bits - 1) / spec.cell_bits;
  const std::size_t rt = (rows + spec.rows - 1) / spec.rows;
  const std::size_t ct = (filters * cells + spec.cols - 1) / spec.cols;
  return 2 * rt * ct;
}

std::size_t count_split_crossbars(const ModelGraph& baseline, unsigned weight_bits, const CrossbarSpec& spec) {
  std::size_t n = 0;
  for (std::size_t li : baseline.weighted_layers()) {
    const auto& w = baseline.layers[li].weight;
    n += count_split_crossbars(w.filter_size(), w.filters(), weight_bits, spec);
  }
  return n;
}

ReductionResult crossbar_reduction(const std::vector<MappedLayer>& compressed, const ModelGraph& baseline,
                                   const CrossbarSpec& spec, unsigned baseline_bits) {
  ReductionResult r;
  r.baseline_crossbars = count_split_crossbars(baseline, baseline_bits, spec);
  std::size_t total = 0, kept = 0;
  for (std::size_t li : baseline.weighted_layers()) total += baseline.layers[li].weight.values.size();
  for (const auto& l : compressed) {
    r.compressed_crossbars += l.crossbar_count();
    kept += l.filters.size() * l.input_rows.size();
  }
  r.prune_ratio = kept ? static_cast<double>(total) / static_cast<double>(kept) : 0.0;
  r.ratio = r.compressed_crossbars
                ? static_cast<double>(r.baseline_crossbars) / static_cast<double>(r.compressed_crossbars)
                : 0.0;
  return r;
}

namespace {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

std::string safe_name(const std::string& n) {
  std::string s = n;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

}  // namespace

void write_mapped(const std::filesystem::path& dir, const std::vector<MappedLayer>& layers,
                  const CrossbarSpec& spec) {
  nlohmann::json man;
  man["format"] = "forms-mapped";
  man["version"] = 1;
  man["crossbar"] = spec;
  man["layers"] = nlohmann::json::array();
  for (const auto& l : layers) {
    std::vector<std::uint8_t> cells;
    for (const auto& xb : l.crossbars) cells.insert(cells.end(), xb.cells.begin(), xb.cells.end());
    FragmentLayout tmp;
    tmp.signs = l.signs;
    const auto bits = pack_signs(tmp);
    const std::string base = safe_name(l.name);
    write_file(dir / (base + ".cells"), cells);
    write_file(dir / (base + ".signs"), bits);

    nlohmann::json pl = nlohmann::json::array();
    for (const auto& p : l.placement)
      pl.push_back({p.filter, p.fragment, p.crossbar, p.subarray_row, p.subarray_col, p.column});
    nlohmann::json slice_map = nlohmann::json::array();
    for (std::size_t k = 0; k < l.slices; ++k) slice_map.push_back({{"column_offset", k}, {"bit", k * l.cell_bits}});
    man["layers"].push_back({{"name", l.name},
                             {"fragment_size", l.fragment_size},
                             {"quant_bits", l.quant_bits},
                             {"cell_bits", l.cell_bits},
                             {"slices", l.slices},
                             {"slice_map", slice_map},
                             {"input_size", l.input_size},
                             {"output_channels", l.output_channels},
                             {"input_permutation", l.input_rows},
                             {"filters", l.filters},
                             {"fragments_per_filter", l.fragments_per_filter},
                             {"row_tiles", l.row_tiles},
                             {"filters_per_crossbar", l.filters_per_crossbar},
                             {"scale", l.scale},
                             {"crossbars", l.crossbars.size()},
                             {"placement", pl},
                             {"cells_file", base + ".cells"},
                             {"cells_fnv1a", hex64(fnv1a(cells.data(), cells.size()))},
                             {"signs_file", base + ".signs"},
                             {"signs_fnv1a", hex64(fnv1a(bits.data(), bits.size()))}});
  }
  const std::string text = man.dump(2) + "\n";
  write_file(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<MappedLayer> read_mapped(const std::filesystem::path& dir, CrossbarSpec* spec_out) {
  const auto raw = read_file(dir / "manifest.json");
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Status::corrupt_artifact, "mapped manifest: " + std::string(e.what()));
  }
  std::vector<MappedLayer> out;
  try {
    if (man.at("format") != "forms-mapped" || man.at("version") != 1)
      throw Error(Status::corrupt_artifact, "mapped manifest: unsupported format");
    const CrossbarSpec spec = man.at("crossbar").get<CrossbarSpec>();
    if (spec_out) *spec_out = spec;
    for (const auto& j : man.at("layers")) {
      MappedLayer l;
      l.name = j.at("name");
      l.fragment_size = j.at("fragment_size");
      l.quant_bits = j.at("quant_bits");
      l.cell_bits = j.at("cell_bits");
      l.slices = j.at("slices");
      l.input_size = j.at("input_size");
      l.output_channels = j.at("output_channels");
      l.input_rows = j.at("input_permutation").get<std::vector<std::size_t>>();
      l.filters = j.at("filters").get<std::vector<std::size_t>>();
      l.fragments_per_filter = j.at("fragments_per_filter");
      l.row_tiles = j.at("row_tiles");
      l.filters_per_crossbar = j.at("filters_per_crossbar");
      l.scale = j.at("scale");
      for (const auto& p : j.at("placement"))
        l.placement.push_back({p.at(0), p.at(1), p.at(2), p.at(3), p.at(4), p.at(5)});

      const auto cells = read_file(dir / j.at("cells_file").get<std::string>());
      const auto bits = read_file(dir / j.at("signs_file").get<std::string>());
      if (hex64(fnv1a(cells.data(), cells.size())) != j.at("cells_fnv1a") ||
          hex64(fnv1a(bits.data(), bits.size())) != j.at("signs_fnv1a"))
        throw Error(Status::corrupt_artifact, "mapped layer " + l.name + ": checksum mismatch");
      const std::size_t n_xb = j.at("crossbars");
      const std::size_t per = spec.rows * spec.cols;
      if (cells.size() != n_xb * per) throw Error(Status::corrupt_artifact, "mapped layer " + l.name + ": bad cell file");
      for (std::size_t x = 0; x < n_xb; ++x)
        l.crossbars.push_back(CrossbarImage{spec.rows, spec.cols,
                                            std::vector<std::uint8_t>(cells.begin() + static_cast<std::ptrdiff_t>(x * per),
                                                                      cells.begin() + static_cast<std::ptrdiff_t>((x + 1) * per))});
      FragmentLayout tmp;
      tmp.fragment_size = 1;
      tmp.cols = 1;
      tmp.rows.resize(l.placement.size());
      unpack_signs(tmp, bits);
      l.signs = tmp.signs;
      for (const auto& p : l.placement)
        if (p.crossbar >= n_xb) throw Error(Status::corrupt_artifact, "mapped layer " + l.name + ": bad placement");
      out.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Status::corrupt_artifact, "mapped manifest: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw Error(Status::corrupt_artifact, std::string("mapped layer: ") + e.what());
  }
  return out;
}

}  // namespace forms
