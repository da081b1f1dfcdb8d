#include "forms/admm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "forms/rng.hpp"

namespace forms {

LayerKnobs CompressionConfig::knobs(const std::string& layer) const {
  auto it = layers.find(layer);
  return it == layers.end() ? defaults : it->second;
}

void CompressionConfig::validate() const {
  auto check_knobs = [](const std::string& where, const LayerKnobs& k) {
    if (!(k.alpha > 0.0 && k.alpha <= 1.0)) throw ConfigError(where + ".alpha must be in (0, 1]");
    if (!(k.beta > 0.0 && k.beta <= 1.0)) throw ConfigError(where + ".beta must be in (0, 1]");
    if (!(k.rho > 0.0) || !std::isfinite(k.rho)) throw ConfigError(where + ".rho must be positive");
  };
  check_knobs("defaults", defaults);
  for (const auto& [name, k] : layers) check_knobs("layers." + name, k);
  if (fragment_size == 0) throw ConfigError("fragment_size must be >= 1");
  if (cell_bits == 0 || cell_bits > 8) throw ConfigError("cell_bits must be in [1, 8]");
  if (quant_bits == 0 || quant_bits > 16) throw ConfigError("quant_bits must be in [1, 16]");
  if (quant_bits % cell_bits != 0) throw ConfigError("quant_bits must be a multiple of cell_bits");
  if (sign_update_interval == 0) throw ConfigError("sign_update_interval must be >= 1");
  if (epochs > 0 && sign_update_interval > epochs)
    throw ConfigError("sign_update_interval must not exceed epochs");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

CompressedModel CompressedModel::identity(const ModelGraph& graph, const CompressionConfig& config) {
  CompressedModel cm;
  cm.graph = graph;
  cm.fragment_size = config.fragment_size;
  cm.order = config.polarization_order;
  cm.quant_bits = config.quant_bits;
  cm.cell_bits = config.cell_bits;
  for (std::size_t li : graph.weighted_layers()) {
    const Layer& l = graph.layers[li];
    LayerCompression lc;
    lc.name = l.name;
    lc.mask.rows.assign(l.weight.filter_size(), 1);
    lc.mask.cols.assign(l.weight.filters(), 1);
    lc.layout = make_layout(l.weight.shape, cm.order, cm.fragment_size);
    cm.layers.push_back(std::move(lc));
  }
  return cm;
}

Weight2D CompressedModel::weight2d(std::size_t i) const {
  return reshape_conv_to_2d(graph.layers[graph.weighted_layers().at(i)].weight);
}

void CompressedModel::set_weight2d(std::size_t i, const Weight2D& h) {
  WeightTensor& w = graph.layers[graph.weighted_layers().at(i)].weight;
  w = reshape_2d_to_conv(h, w.layer_id, w.shape);
}

void dual_update(std::span<double> u, std::span<const double> w, std::span<const double> z) {
  if (u.size() != w.size() || u.size() != z.size()) throw ShapeError("dual_update: shape mismatch");
  for (std::size_t k = 0; k < u.size(); ++k) u[k] += w[k] - z[k];
}

AdmmState dual_update(const AdmmState& state, const ModelGraph& model) {
  state.check_shapes(model);
  AdmmState out = state;
  const auto wl = model.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i)
    dual_update(out.u[i], model.layers[wl[i]].weight.values, out.z[i]);
  return out;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

enum class Phase { prune, polarize, quantize };

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::prune: return "prune";
    case Phase::polarize: return "polarize";
    case Phase::quantize: return "quantize";
  }
  return "?";
}

class Trainer {
 public:
  Trainer(const ModelGraph& pretrained, const Dataset& train, const CompressionConfig& config,
          const EpochObserver& observer)
      : cfg_(config), data_(train), observer_(observer) {
    result_.model = CompressedModel::identity(pretrained, config);
    wl_ = pretrained.weighted_layers();
  }

  AdmmResult run() {
    bool any_prune = false;
    for (const auto& lc : result_.model.layers) {
      const LayerKnobs k = cfg_.knobs(lc.name);
      any_prune = any_prune || k.alpha < 1.0 || k.beta < 1.0;
    }
    if (any_prune) phase(Phase::prune);
    if (cfg_.polarize) phase(Phase::polarize);
    if (cfg_.quantize) phase(Phase::quantize);
    if (!any_prune && !cfg_.polarize && !cfg_.quantize)
      train_sgd(graph(), data_, cfg_.epochs, cfg_.lr, std::min(cfg_.batch_size, std::max<std::size_t>(data_.size(), 1)),
                cfg_.seed, observer_);
    if (result_.state.z.empty()) result_.state = AdmmState::init(graph(), rhos());
    return std::move(result_);
  }

 private:
  ModelGraph& graph() { return result_.model.graph; }

  std::vector<double> rhos() const {
    std::vector<double> r;
    for (const auto& lc : result_.model.layers) r.push_back(cfg_.knobs(lc.name).rho);
    return r;
  }

  Weight2D project(Phase p, std::size_t i, const Weight2D& x) const {
    const LayerCompression& lc = result_.model.layers[i];
    switch (p) {
      case Phase::prune: {
        const LayerKnobs k = cfg_.knobs(lc.name);
        return project_structured(x, k.alpha, k.beta, cfg_.structure_options());
      }
      case Phase::polarize: return project_polarize(x, lc.layout);
      case Phase::quantize: {
        const double scale = quantization_scale(x, cfg_.quant_bits);
        return scale > 0.0 ? project_quantize(x, cfg_.quant_bits, scale) : x;
      }
    }
    return x;
  }

  // Constraints fixed by completed phases, applied to W after every step.
  void enforce() {
    for (std::size_t i = 0; i < wl_.size(); ++i) {
      Layer& l = graph().layers[wl_[i]];
      const LayerCompression& lc = result_.model.layers[i];
      const std::size_t k_rows = l.weight.filter_size();
      auto& v = l.weight.values;
      if (structured_) {
        for (std::size_t f = 0; f < l.weight.filters(); ++f) {
          if (!lc.mask.cols[f]) {
            std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(f * k_rows), k_rows, 0.0);
            l.bias[f] = 0.0;
            continue;
          }
          for (std::size_t r = 0; r < k_rows; ++r)
            if (!lc.mask.rows[r]) v[f * k_rows + r] = 0.0;
        }
      }
      if (polarized_) {
        const FragmentLayout& lay = lc.layout;
        const std::size_t fpc = lay.fragments_per_col();
        for (std::size_t f = 0; f < lay.cols; ++f)
          for (std::size_t fr = 0; fr < fpc; ++fr) {
            const bool pos = lay.sign(f, fr) == Sign::positive;
            for (std::size_t s = lay.fragment_begin(fr); s < lay.fragment_end(fr); ++s) {
              double& x = v[f * k_rows + lay.rows[s]];
              if ((pos && x < 0.0) || (!pos && x > 0.0)) x = 0.0;
            }
          }
      }
    }
  }

  void phase(Phase p) {
    AdmmState& st = result_.state;
    st = AdmmState::init(graph(), rhos());
    for (std::size_t i = 0; i < wl_.size(); ++i) {
      if (p == Phase::polarize) update_signs(result_.model.layers[i].layout, result_.model.weight2d(i));
      const Weight2D z = project(p, i, result_.model.weight2d(i));
      st.z[i] = reshape_2d_to_conv(z, "", graph().layers[wl_[i]].weight.shape).values;
    }

    const std::size_t n = data_.size();
    const std::size_t bs = std::min(cfg_.batch_size, std::max<std::size_t>(n, 1));
    for (std::size_t e = 1; e <= cfg_.epochs; ++e) {
      const auto order = shuffled(n, derive_seed(cfg_.seed, {static_cast<std::uint64_t>(p), e}));
      PhaseLog log;
      log.phase = phase_name(p);
      log.epoch = e;
      std::size_t batches = 0;
      for (std::size_t b = 0; b < n; b += bs) {
        std::span<const std::size_t> batch(order.data() + b, std::min(bs, n - b));
        LossAndGrad lg;
        try {
          lg = admm_loss_and_grad(graph(), data_, batch, st);
        } catch (const Error& err) {
          if (err.status() != Status::divergence) throw;
          throw DivergenceError(std::string(phase_name(p)) + " phase, epoch " + std::to_string(e) +
                                    ": " + err.what(),
                                graph(), st);
        }
        sgd_step(graph(), lg.grads, cfg_.lr);
        enforce();
        log.loss += lg.loss;
        log.penalty += lg.penalty;
        ++batches;
      }
      if (batches > 0) {
        log.loss /= static_cast<double>(batches);
        log.penalty /= static_cast<double>(batches);
      }

      if (p == Phase::polarize && e % cfg_.sign_update_interval == 0) {
        for (std::size_t i = 0; i < wl_.size(); ++i)
          update_signs(result_.model.layers[i].layout, result_.model.weight2d(i));
        ++result_.sign_updates;
      }

      for (std::size_t i = 0; i < wl_.size(); ++i) {
        const auto& w = graph().layers[wl_[i]].weight;
        WeightTensor wu("", w.shape);
        for (std::size_t k = 0; k < wu.values.size(); ++k) wu.values[k] = w.values[k] + st.u[i][k];
        const Weight2D x = reshape_conv_to_2d(wu);
        st.z[i] = reshape_2d_to_conv(project(p, i, x), "", w.shape).values;
        dual_update(st.u[i], w.values, st.z[i]);
        double r = 0.0;
        for (std::size_t k = 0; k < w.values.size(); ++k) {
          const double d = w.values[k] - st.z[i][k];
          r += d * d;
        }
        log.primal_residual += std::sqrt(r);
      }
      result_.history.push_back(log);
      if (observer_) observer_(log);
    }

    hard_projection(p);
  }

  void hard_projection(Phase p) {
    CompressedModel& cm = result_.model;
    for (std::size_t i = 0; i < wl_.size(); ++i) {
      LayerCompression& lc = cm.layers[i];
      Weight2D h = cm.weight2d(i);
      switch (p) {
        case Phase::prune: {
          const LayerKnobs k = cfg_.knobs(lc.name);
          lc.mask = select_structure(h, k.alpha, k.beta, cfg_.structure_options());
          h = apply_structure(h, lc.mask);
          lc.layout = make_layout(graph().layers[wl_[i]].weight.shape, cm.order, cm.fragment_size,
                                  lc.mask.rows);
          break;
        }
        case Phase::polarize:
          h = project_polarize(h, lc.layout);
          break;
        case Phase::quantize:
          lc.quant_scale = quantization_scale(h, cfg_.quant_bits);
          if (lc.quant_scale > 0.0) h = project_quantize(h, cfg_.quant_bits, lc.quant_scale);
          break;
      }
      cm.set_weight2d(i, h);
    }
    if (p == Phase::prune) structured_ = true;
    if (p == Phase::polarize) {
      polarized_ = true;
      cm.polarized = true;
    }
    if (p == Phase::quantize) cm.quantized = true;
    enforce();
  }

  const CompressionConfig& cfg_;
  const Dataset& data_;
  const EpochObserver& observer_;
  std::vector<std::size_t> wl_;
  AdmmResult result_;
  bool structured_ = false;
  bool polarized_ = false;
};

}  // namespace

AdmmResult admm_train(const ModelGraph& pretrained, const Dataset& train,
                      const CompressionConfig& config, const EpochObserver& observer) {
  config.validate();
  pretrained.validate();
  if (train.size() == 0) throw ShapeError("admm_train: empty training set");
  AdmmResult r = Trainer(pretrained, train, config, observer).run();
  snap_to_float32(r.model);
  return r;
}

void train_sgd(ModelGraph& model, const Dataset& train, std::size_t epochs, double lr,
               std::size_t batch_size, std::uint64_t seed, const EpochObserver& observer) {
  if (!(lr > 0.0)) throw ShapeError("train_sgd: lr must be positive");
  if (batch_size == 0) throw ShapeError("train_sgd: batch_size must be >= 1");
  const std::size_t n = train.size();
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto order = shuffled(n, derive_seed(seed, {0x5eedULL, e}));
    PhaseLog log;
    log.phase = "pretrain";
    log.epoch = e;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += batch_size) {
      std::span<const std::size_t> batch(order.data() + b, std::min(batch_size, n - b));
      Gradients g = Gradients::zeros_like(model);
      const double loss = task_loss_and_grad(model, train, batch, g);
      if (!std::isfinite(loss))
        throw Error(Status::divergence, "pretraining diverged at epoch " + std::to_string(e));
      sgd_step(model, g, lr);
      log.loss += loss;
      ++batches;
    }
    if (batches > 0) log.loss /= static_cast<double>(batches);
    if (observer) observer(log);
  }
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::structure: return "structure";
    case ViolationKind::polarization: return "polarization";
    case ViolationKind::quantization: return "quantization";
  }
  return "?";
}

ConstraintReport verify_constraints(const CompressedModel& model, const CompressionConfig& config) {
  constexpr double level_tolerance = 1e-4;
  ConstraintReport rep;
  const auto wl = model.graph.weighted_layers();
  if (model.layers.size() != wl.size()) throw ShapeError("verify_constraints: layer count mismatch");
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const LayerCompression& lc = model.layers[i];
    const Weight2D h = model.weight2d(i);
    const LayerKnobs k = config.knobs(lc.name);
    LayerConstraintReport lr;
    lr.name = lc.name;
    lr.filters = h.cols();
    lr.shapes = h.rows();
    lr.target_filters = retained_count(h.cols(), k.alpha);
    lr.target_shapes = target_rows(h.rows(), k.beta, config.structure_options());

    std::vector<std::uint8_t> nz_row(h.rows(), 0), nz_col(h.cols(), 0);
    for (std::size_t r = 0; r < h.rows(); ++r)
      for (std::size_t c = 0; c < h.cols(); ++c)
        if (h(r, c) != 0.0) {
          nz_row[r] = nz_col[c] = 1;
          if (!lc.mask.rows.at(r) || !lc.mask.cols.at(c))
            rep.violations.push_back({lc.name, ViolationKind::structure, r, c, "nonzero outside structure mask"});
        }
    lr.nonzero_filters = static_cast<std::size_t>(std::count(nz_col.begin(), nz_col.end(), 1));
    lr.nonzero_shapes = static_cast<std::size_t>(std::count(nz_row.begin(), nz_row.end(), 1));
    if (lr.filters) lr.filter_sparsity = 1.0 - static_cast<double>(lr.nonzero_filters) / lr.filters;
    if (lr.shapes) lr.shape_sparsity = 1.0 - static_cast<double>(lr.nonzero_shapes) / lr.shapes;
    if (lr.nonzero_filters > lr.target_filters)
      rep.violations.push_back({lc.name, ViolationKind::structure, lr.nonzero_filters, lr.target_filters,
                                "too many nonzero filters"});
    if (lr.nonzero_shapes > lr.target_shapes)
      rep.violations.push_back({lc.name, ViolationKind::structure, lr.nonzero_shapes, lr.target_shapes,
                                "too many nonzero filter shapes"});

    const FragmentLayout& lay = lc.layout;
    lay.check(h);
    const std::size_t fpc = lay.fragments_per_col();
    lr.polarized.assign(lay.fragment_count(), true);
    if (model.polarized) {
      for (std::size_t c = 0; c < lay.cols; ++c)
        for (std::size_t f = 0; f < fpc; ++f) {
          const bool pos = lay.sign(c, f) == Sign::positive;
          for (std::size_t s = lay.fragment_begin(f); s < lay.fragment_end(f); ++s) {
            const double v = h(lay.rows[s], c);
            if ((pos && v < 0.0) || (!pos && v > 0.0)) {
              lr.polarized[c * fpc + f] = false;
              rep.violations.push_back({lc.name, ViolationKind::polarization, lay.rows[s], c,
                                        "weight opposes fragment sign"});
            }
          }
        }
    }

    if (model.quantized) {
      const double top = static_cast<double>(max_level(model.quant_bits));
      for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c) {
          const double v = h(r, c);
          if (v == 0.0) continue;
          bool bad = !(lc.quant_scale > 0.0);
          if (!bad) {
            const double lvl = std::abs(v) / lc.quant_scale;
            bad = std::abs(lvl - std::round(lvl)) > level_tolerance || std::round(lvl) > top;
          }
          if (bad) {
            lr.quantized = false;
            std::ostringstream os;
            os << "weight " << v << " is not on the grid of step " << lc.quant_scale;
            rep.violations.push_back({lc.name, ViolationKind::quantization, r, c, os.str()});
          }
        }
    }
    rep.layers.push_back(std::move(lr));
  }
  return rep;
}

void snap_to_float32(CompressedModel& model) {
  const auto wl = model.graph.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i) {
    Layer& l = model.graph.layers[wl[i]];
    LayerCompression& lc = model.layers[i];
    lc.quant_scale = static_cast<double>(static_cast<float>(lc.quant_scale));
    for (double& v : l.weight.values) {
      if (model.quantized && lc.quant_scale > 0.0 && v != 0.0)
        v = std::copysign(std::round(std::abs(v) / lc.quant_scale) * lc.quant_scale, v);
      v = static_cast<double>(static_cast<float>(v));
    }
    for (double& b : l.bias) b = static_cast<double>(static_cast<float>(b));
  }
}

}  // namespace forms
