#include "forms/selftest.hpp"

#include <cmath>
#include <limits>

#include "forms/config.hpp"
#include "forms/crossbar_sim.hpp"
#include "forms/perf_model.hpp"

namespace forms {

bool SelftestReport::ok() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

RandomLayerCase random_layer_case(std::mt19937_64& rng, std::size_t max_dim, std::size_t m, unsigned quant_bits,
                                  std::size_t vectors) {
  auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  RandomLayerCase c;
  const std::size_t rows = uni(1, max_dim), filters = uni(1, max_dim);
  c.vectors = vectors;
  c.mask.rows.assign(rows, 1);
  c.mask.cols.assign(filters, 1);
  // Prune a random share of rows and filters, keeping at least one of each.
  for (auto& r : c.mask.rows) r = uni(0, 3) != 0;
  for (auto& f : c.mask.cols) f = uni(0, 3) != 0;
  c.mask.rows[uni(0, rows - 1)] = 1;
  c.mask.cols[uni(0, filters - 1)] = 1;

  c.layout = make_layout({filters, rows}, PolarizationOrder::c_major, m, c.mask.rows);
  for (auto& s : c.layout.signs) s = uni(0, 1) ? Sign::positive : Sign::negative;
  c.scale = std::ldexp(1.0, -static_cast<int>(uni(4, 10)));
  c.h = Weight2D(rows, filters);
  const std::size_t top = max_level(quant_bits);
  const std::size_t frags = c.layout.fragments_per_col();
  for (std::size_t f = 0; f < filters; ++f) {
    if (!c.mask.cols[f]) continue;
    for (std::size_t j = 0; j < frags; ++j)
      for (std::size_t s = c.layout.fragment_begin(j); s < c.layout.fragment_end(j); ++s) {
        const std::size_t level = uni(0, 4) == 0 ? 0 : uni(0, top);
        const double sign = c.layout.sign(f, j) == Sign::positive ? 1.0 : -1.0;
        c.h(c.layout.rows[s], f) = sign * static_cast<double>(level) * c.scale;
      }
  }
  c.spec.subarray_rows = m;
  c.mapped = map_layer("random", c.h, c.layout, c.mask, c.scale, quant_bits, c.spec);

  c.inputs.resize(rows * vectors);
  for (auto& x : c.inputs) {
    const unsigned bits = static_cast<unsigned>(uni(0, c.spec.input_bits));
    x = bits == 0 ? 0 : static_cast<std::uint16_t>(uni(0, (std::size_t{1} << bits) - 1));
  }
  return c;
}

namespace {

// Integer MVM over the kept filters, straight from the Weight2D.
std::vector<std::int64_t> oracle(const RandomLayerCase& c) {
  std::vector<std::int64_t> out(c.mapped.filters.size() * c.vectors, 0);
  for (std::size_t j = 0; j < c.mapped.filters.size(); ++j)
    for (std::size_t r = 0; r < c.h.rows(); ++r) {
      const auto level = static_cast<std::int64_t>(std::llround(c.h(r, c.mapped.filters[j]) / c.scale));
      for (std::size_t v = 0; v < c.vectors; ++v)
        out[j * c.vectors + v] += level * static_cast<std::int64_t>(c.inputs[r * c.vectors + v]);
    }
  return out;
}

SelfCheck check_oracle(std::mt19937_64& rng, std::size_t cases) {
  SelfCheck ck{"crossbar simulator equals integer MVM", true, ""};
  const std::size_t sizes[] = {4, 8, 16};
  for (std::size_t i = 0; i < cases && ck.passed; ++i) {
    const std::size_t m = sizes[i % 3];
    const RandomLayerCase c = random_layer_case(rng, 32, m, 8, 1 + i % 3);
    const DeviceLayer dev = program_layer(c.mapped, {});
    for (bool skip : {true, false}) {
      SimOptions o;
      o.zero_skip = skip;
      const LayerSimResult r = simulate_layer(dev, c.inputs, c.vectors, c.spec, o);
      if (r.acc != oracle(c) || r.stats.saturation_events != 0) {
        ck.passed = false;
        ck.detail = "case " + std::to_string(i) + " (m=" + std::to_string(m) + ", skip=" + (skip ? "on" : "off") +
                    ") differs";
        break;
      }
    }
  }
  if (ck.passed) ck.detail = std::to_string(cases) + " random layers, skip on and off";
  return ck;
}

SelfCheck check_skip_cycles(std::mt19937_64& rng, std::size_t cases) {
  SelfCheck ck{"zero-skip saves sum(16 - EIC) cycles", true, ""};
  for (std::size_t i = 0; i < cases; ++i) {
    const RandomLayerCase c = random_layer_case(rng, 32, 8, 8, 2);
    const DeviceLayer dev = program_layer(c.mapped, {});
    const LayerSimResult r = simulate_layer(dev, c.inputs, c.vectors, c.spec, {});
    std::size_t expect = 0;
    for (std::size_t v = 0; v < c.vectors; ++v)
      for (std::size_t j = 0; j < c.mapped.fragments_per_filter; ++j) {
        unsigned e = 0;
        for (std::size_t s = c.mapped.fragment_begin(j); s < c.mapped.fragment_end(j); ++s)
          e = std::max(e, effective_bits(c.inputs[c.mapped.input_rows[s] * c.vectors + v]));
        expect += c.spec.input_bits - e;
      }
    if (r.stats.cycles_no_skip - r.stats.cycles != expect) {
      ck.passed = false;
      ck.detail = "case " + std::to_string(i) + ": saved " + std::to_string(r.stats.cycles_no_skip - r.stats.cycles) +
                  ", expected " + std::to_string(expect);
      return ck;
    }
  }
  ck.detail = std::to_string(cases) + " random layers";
  return ck;
}

Weight2D random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Weight2D h(rows, cols);
  for (auto& v : h.data()) v = n(rng);
  return h;
}

SelfCheck check_idempotence(std::mt19937_64& rng, std::size_t cases) {
  SelfCheck ck{"projections are idempotent", true, ""};
  auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t rows = uni(1, 24), cols = uni(1, 12), m = std::size_t{1} << uni(1, 3);
    const Weight2D h = random_matrix(rng, rows, cols);
    const StructureOptions so{uni(0, 1) == 1, m};
    const double a = static_cast<double>(uni(1, 4)) / 4.0, b = static_cast<double>(uni(1, 4)) / 4.0;
    const Weight2D p = project_structured(h, a, b, so);
    FragmentLayout lay = make_layout({cols, rows}, PolarizationOrder::c_major, m);
    update_signs(lay, h);
    const Weight2D q = project_polarize(h, lay);
    const double scale = quantization_scale(h, 8);
    const Weight2D z = project_quantize(h, 8, scale);
    if (project_structured(p, a, b, so) != p || project_polarize(q, lay) != q || project_quantize(z, 8, scale) != z) {
      ck.passed = false;
      ck.detail = "matrix " + std::to_string(i);
      return ck;
    }
  }
  ck.detail = std::to_string(cases) + " random matrices";
  return ck;
}

SelfCheck check_polarize_brute_force(std::mt19937_64& rng, std::size_t cases) {
  SelfCheck ck{"polarization is the nearest same-sign point", true, ""};
  for (std::size_t i = 0; i < cases; ++i) {
    const std::size_t m = 1 + i % 4;
    Weight2D h = random_matrix(rng, m, 1);
    FragmentLayout lay = make_layout({1, m}, PolarizationOrder::c_major, m);
    lay.signs[0] = i % 2 ? Sign::positive : Sign::negative;
    const double s = lay.signs[0] == Sign::positive ? 1.0 : -1.0;
    const double d_proj = frobenius_distance(project_polarize(h, lay), h);
    double best = std::numeric_limits<double>::infinity();
    // Every candidate keeps a subset of the entries; only same-sign subsets are feasible.
    for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
      Weight2D cand(m, 1);
      bool feasible = true;
      for (std::size_t r = 0; r < m; ++r)
        if (mask >> r & 1) {
          if (h(r, 0) * s < 0.0) feasible = false;
          cand(r, 0) = h(r, 0);
        }
      if (feasible) best = std::min(best, frobenius_distance(cand, h));
    }
    if (d_proj > best) {
      ck.passed = false;
      ck.detail = "fragment " + std::to_string(i);
      return ck;
    }
  }
  ck.detail = std::to_string(cases) + " fragments of size 1..4";
  return ck;
}

SelfCheck check_bit_slice(std::mt19937_64& rng) {
  SelfCheck ck{"bit slices recombine to the level", true, "all 8-bit levels"};
  (void)rng;
  for (std::uint32_t v = 0; v < 256; ++v) {
    const auto d = bit_slice(v, 8, 2);
    std::uint32_t back = 0;
    for (std::size_t k = 0; k < d.size(); ++k) back |= static_cast<std::uint32_t>(d[k]) << (2 * k);
    if (back != v || d.size() != 4) {
      ck.passed = false;
      ck.detail = "level " + std::to_string(v);
      break;
    }
  }
  return ck;
}

SelfCheck check_cycle_time() {
  SelfCheck ck{"cycle times 15.24 ns and 106.67 ns", true, ""};
  const double f = cycle_time(32, 2.1), i = cycle_time(128, 1.2);
  ck.passed = std::abs(f - 15.24) < 0.1 && std::abs(i - 106.67) < 0.1;
  ck.detail = std::to_string(f) + " ns, " + std::to_string(i) + " ns";
  return ck;
}

SelfCheck check_config_round_trip() {
  SelfCheck ck{"config parse/serialize round trip", true, ""};
  ExperimentConfig c;
  c.seed = 7;
  c.compression.layers["conv2"] = {0.25, 0.75, 0.5};
  c.simulate.sigma = 0.1;
  c.sync();
  const ExperimentConfig back = parse_config(serialize_config(c));
  ck.passed = back == c && config_hash(back) == config_hash(c);
  return ck;
}

}  // namespace

SelftestReport run_selftest(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SelftestReport r;
  r.checks.push_back(check_oracle(rng, 200));
  r.checks.push_back(check_skip_cycles(rng, 50));
  r.checks.push_back(check_idempotence(rng, 500));
  r.checks.push_back(check_polarize_brute_force(rng, 400));
  r.checks.push_back(check_bit_slice(rng));
  r.checks.push_back(check_cycle_time());
  r.checks.push_back(check_config_round_trip());
  return r;
}

}  // namespace forms
