#include "forms/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "forms/errors.hpp"

namespace forms {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
  }
  return "?";
}

std::vector<std::size_t> ModelGraph::weighted_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights()) idx.push_back(i);
  return idx;
}

namespace {

Shape3 next_shape(const Layer& l, Shape3 s) {
  switch (l.kind) {
    case LayerKind::conv: {
      const auto& sh = l.weight.shape;
      if (sh.size() != 4 || sh[1] != s.c || sh[2] > s.h || sh[3] > s.w)
        throw ShapeError("layer " + l.name + ": conv weights incompatible with input");
      return {sh[0], s.h - sh[2] + 1, s.w - sh[3] + 1};
    }
    case LayerKind::dense: {
      const auto& sh = l.weight.shape;
      if (sh.size() != 2 || sh[1] != s.size())
        throw ShapeError("layer " + l.name + ": dense weights expect " +
                         std::to_string(sh.size() == 2 ? sh[1] : 0) + " inputs, got " +
                         std::to_string(s.size()));
      return {sh[0], 1, 1};
    }
    case LayerKind::relu: return s;
    case LayerKind::maxpool:
      if (l.pool == 0 || s.h < l.pool || s.w < l.pool)
        throw ShapeError("layer " + l.name + ": pool window larger than input");
      return {s.c, s.h / l.pool, s.w / l.pool};
  }
  return s;
}

}  // namespace

Shape3 ModelGraph::shape_at(std::size_t i) const {
  Shape3 s = input;
  for (std::size_t k = 0; k < i && k < layers.size(); ++k) s = next_shape(layers[k], s);
  return s;
}

void ModelGraph::validate() const {
  Shape3 s = input;
  for (const auto& l : layers) {
    if (l.has_weights() && l.bias.size() != l.weight.filters())
      throw ShapeError("layer " + l.name + ": bias length mismatch");
    s = next_shape(l, s);
  }
}

bool ModelGraph::pooled_after(std::size_t i) const {
  for (std::size_t k = i + 1; k < layers.size(); ++k) {
    if (layers[k].kind == LayerKind::maxpool) return true;
    if (layers[k].kind != LayerKind::relu) return false;
  }
  return false;
}

std::size_t ModelGraph::macs() const {
  std::size_t total = 0;
  Shape3 s = input;
  for (const auto& l : layers) {
    const Shape3 out = next_shape(l, s);
    if (l.has_weights()) total += l.weight.filter_size() * out.size();
    s = out;
  }
  return total;
}

namespace {

void he_init(WeightTensor& w, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(w.filter_size())));
  for (auto& v : w.values) v = dist(rng);
}

Layer weighted(LayerKind kind, std::string name, std::vector<std::size_t> shape,
               std::mt19937_64& rng) {
  Layer l;
  l.kind = kind;
  l.name = name;
  l.weight = WeightTensor(std::move(name), std::move(shape));
  he_init(l.weight, rng);
  l.bias.assign(l.weight.filters(), 0.0);
  return l;
}

Layer simple(LayerKind kind, std::string name) {
  Layer l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

}  // namespace

ModelGraph make_mlp(Shape3 input, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelGraph m;
  m.input = input;
  m.layers.push_back(weighted(LayerKind::dense, "fc1", {hidden, input.size()}, rng));
  m.layers.push_back(simple(LayerKind::relu, "relu1"));
  m.layers.push_back(weighted(LayerKind::dense, "fc2", {classes, hidden}, rng));
  m.validate();
  return m;
}

ModelGraph make_toy_cnn(Shape3 input, std::size_t c1, std::size_t c2, std::size_t classes,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelGraph m;
  m.input = input;
  m.layers.push_back(weighted(LayerKind::conv, "conv1", {c1, input.c, 3, 3}, rng));
  m.layers.push_back(simple(LayerKind::relu, "relu1"));
  m.layers.push_back(weighted(LayerKind::conv, "conv2", {c2, c1, 3, 3}, rng));
  m.layers.push_back(simple(LayerKind::relu, "relu2"));
  Layer pool = simple(LayerKind::maxpool, "pool2");
  pool.pool = 2;
  m.layers.push_back(pool);
  const Shape3 flat = m.shape_at(m.layers.size());
  m.layers.push_back(weighted(LayerKind::dense, "fc", {classes, flat.size()}, rng));
  m.validate();
  return m;
}

template <typename T>
std::vector<T> im2col(std::span<const T> x, Shape3 in, std::size_t kh, std::size_t kw) {
  if (x.size() != in.size()) throw ShapeError("im2col: input size mismatch");
  const std::size_t oh = in.h - kh + 1, ow = in.w - kw + 1, p = oh * ow;
  std::vector<T> cols(in.c * kh * kw * p);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t k = (c * kh + i) * kw + j;
        T* row = cols.data() + k * p;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox)
            row[oy * ow + ox] = x[(c * in.h + oy + i) * in.w + ox + j];
      }
  return cols;
}

template std::vector<double> im2col<double>(std::span<const double>, Shape3, std::size_t,
                                            std::size_t);
template std::vector<std::uint16_t> im2col<std::uint16_t>(std::span<const std::uint16_t>, Shape3,
                                                          std::size_t, std::size_t);

ForwardResult forward(const ModelGraph& model, std::span<const double> input) {
  if (input.size() != model.input.size())
    throw ShapeError("forward: input has " + std::to_string(input.size()) + " values, model expects " +
                     std::to_string(model.input.size()));
  ForwardResult r;
  r.activations.reserve(model.layers.size() + 1);
  r.activations.emplace_back(input.begin(), input.end());
  r.pool_argmax.resize(model.layers.size());
  Shape3 s = model.input;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Layer& l = model.layers[li];
    const Shape3 out_shape = next_shape(l, s);
    const std::vector<double>& x = r.activations.back();
    std::vector<double> y(out_shape.size(), 0.0);
    switch (l.kind) {
      case LayerKind::conv: {
        const std::size_t f = l.weight.filters(), k = l.weight.filter_size();
        const std::size_t p = out_shape.h * out_shape.w;
        const auto cols = im2col<double>(x, s, l.weight.shape[2], l.weight.shape[3]);
        for (std::size_t fi = 0; fi < f; ++fi) {
          double* out = y.data() + fi * p;
          std::fill(out, out + p, l.bias[fi]);
          const double* wrow = l.weight.values.data() + fi * k;
          for (std::size_t ki = 0; ki < k; ++ki) {
            const double wv = wrow[ki];
            if (wv == 0.0) continue;
            const double* crow = cols.data() + ki * p;
            for (std::size_t pi = 0; pi < p; ++pi) out[pi] += wv * crow[pi];
          }
        }
        break;
      }
      case LayerKind::dense: {
        const std::size_t n_out = l.weight.filters(), n_in = l.weight.filter_size();
        for (std::size_t o = 0; o < n_out; ++o) {
          double acc = l.bias[o];
          const double* wrow = l.weight.values.data() + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) acc += wrow[i] * x[i];
          y[o] = acc;
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case LayerKind::maxpool: {
        auto& arg = r.pool_argmax[li];
        arg.resize(y.size());
        for (std::size_t c = 0; c < out_shape.c; ++c)
          for (std::size_t oy = 0; oy < out_shape.h; ++oy)
            for (std::size_t ox = 0; ox < out_shape.w; ++ox) {
              std::size_t best = (c * s.h + oy * l.pool) * s.w + ox * l.pool;
              for (std::size_t i = 0; i < l.pool; ++i)
                for (std::size_t j = 0; j < l.pool; ++j) {
                  const std::size_t idx = (c * s.h + oy * l.pool + i) * s.w + ox * l.pool + j;
                  if (x[idx] > x[best]) best = idx;
                }
              const std::size_t o = (c * out_shape.h + oy) * out_shape.w + ox;
              y[o] = x[best];
              arg[o] = best;
            }
        break;
      }
    }
    r.activations.push_back(std::move(y));
    s = out_shape;
  }
  return r;
}

int predict(const ModelGraph& model, std::span<const double> input) {
  const auto r = forward(model, input);
  const auto logits = r.logits();
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double accuracy(const ModelGraph& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict(model, data.image(i)) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Gradients Gradients::zeros_like(const ModelGraph& model) {
  Gradients g;
  g.weight.resize(model.layers.size());
  g.bias.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    if (!l.has_weights()) continue;
    g.weight[i].assign(l.weight.values.size(), 0.0);
    g.bias[i].assign(l.bias.size(), 0.0);
  }
  return g;
}

namespace {

// Accumulates d(loss)/d(params) for one sample; `scale` folds in the 1/batch factor.
double backprop_sample(const ModelGraph& model, std::span<const double> input, int label,
                       double scale, Gradients& grads) {
  const ForwardResult fr = forward(model, input);
  const auto logits = fr.logits();
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - mx);
  const double loss = -(logits[static_cast<std::size_t>(label)] - mx - std::log(denom));

  std::vector<double> g(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    g[i] = scale * (std::exp(logits[i] - mx) / denom - (static_cast<int>(i) == label ? 1.0 : 0.0));

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& l = model.layers[li];
    const std::vector<double>& x = fr.activations[li];
    const Shape3 in_shape = model.shape_at(li);
    std::vector<double> dx(x.size(), 0.0);
    switch (l.kind) {
      case LayerKind::dense: {
        const std::size_t n_out = l.weight.filters(), n_in = l.weight.filter_size();
        auto& dw = grads.weight[li];
        auto& db = grads.bias[li];
        for (std::size_t o = 0; o < n_out; ++o) {
          const double go = g[o];
          if (go == 0.0) continue;
          db[o] += go;
          const double* wrow = l.weight.values.data() + o * n_in;
          double* dwrow = dw.data() + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) {
            dwrow[i] += go * x[i];
            dx[i] += wrow[i] * go;
          }
        }
        break;
      }
      case LayerKind::conv: {
        const std::size_t f = l.weight.filters(), k = l.weight.filter_size();
        const std::size_t kh = l.weight.shape[2], kw = l.weight.shape[3];
        const std::size_t oh = in_shape.h - kh + 1, ow = in_shape.w - kw + 1, p = oh * ow;
        const auto cols = im2col<double>(x, in_shape, kh, kw);
        std::vector<double> dcols(k * p, 0.0);
        auto& dw = grads.weight[li];
        auto& db = grads.bias[li];
        for (std::size_t fi = 0; fi < f; ++fi) {
          const double* gf = g.data() + fi * p;
          for (std::size_t pi = 0; pi < p; ++pi) db[fi] += gf[pi];
          const double* wrow = l.weight.values.data() + fi * k;
          for (std::size_t ki = 0; ki < k; ++ki) {
            const double* crow = cols.data() + ki * p;
            double* dcrow = dcols.data() + ki * p;
            double acc = 0.0;
            const double wv = wrow[ki];
            for (std::size_t pi = 0; pi < p; ++pi) {
              acc += gf[pi] * crow[pi];
              dcrow[pi] += wv * gf[pi];
            }
            dw[fi * k + ki] += acc;
          }
        }
        // col2im
        for (std::size_t c = 0; c < in_shape.c; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const double* dcrow = dcols.data() + ((c * kh + i) * kw + j) * p;
              for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                  dx[(c * in_shape.h + oy + i) * in_shape.w + ox + j] += dcrow[oy * ow + ox];
            }
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
        break;
      case LayerKind::maxpool: {
        const auto& arg = fr.pool_argmax[li];
        for (std::size_t o = 0; o < g.size(); ++o) dx[arg[o]] += g[o];
        break;
      }
    }
    g = std::move(dx);
  }
  return loss;
}

}  // namespace

double task_loss_and_grad(const ModelGraph& model, const Dataset& data,
                          std::span<const std::size_t> batch, Gradients& grads) {
  if (batch.empty()) return 0.0;
  if (data.shape != model.input) throw ShapeError("task_loss_and_grad: dataset shape mismatch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t idx : batch)
    loss += backprop_sample(model, data.image(idx), data.labels[idx], scale, grads);
  return loss * scale;
}

AdmmState AdmmState::init(const ModelGraph& model, std::span<const double> rho) {
  const auto wl = model.weighted_layers();
  if (rho.size() != wl.size()) throw ShapeError("AdmmState::init: one rho per weighted layer");
  AdmmState s;
  for (std::size_t i = 0; i < wl.size(); ++i) {
    if (!(rho[i] > 0.0)) throw ShapeError("AdmmState::init: rho must be positive");
    const auto& w = model.layers[wl[i]].weight.values;
    s.z.push_back(w);
    s.u.emplace_back(w.size(), 0.0);
    s.rho.push_back(rho[i]);
  }
  return s;
}

void AdmmState::check_shapes(const ModelGraph& model) const {
  const auto wl = model.weighted_layers();
  if (z.size() != wl.size() || u.size() != wl.size() || rho.size() != wl.size())
    throw ShapeError("AdmmState: layer count mismatch");
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const std::size_t n = model.layers[wl[i]].weight.values.size();
    if (z[i].size() != n || u[i].size() != n)
      throw ShapeError("AdmmState: shape mismatch for layer " + model.layers[wl[i]].name);
  }
}

LossAndGrad admm_loss_and_grad(const ModelGraph& model, const Dataset& data,
                               std::span<const std::size_t> batch, const AdmmState& state) {
  state.check_shapes(model);
  LossAndGrad out;
  out.grads = Gradients::zeros_like(model);
  out.task_loss = task_loss_and_grad(model, data, batch, out.grads);
  const auto wl = model.weighted_layers();
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const auto& w = model.layers[wl[i]].weight.values;
    auto& gw = out.grads.weight[wl[i]];
    const double rho = state.rho[i];
    double sq = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = w[k] - state.z[i][k] + state.u[i][k];
      sq += d * d;
      gw[k] += rho * d;
    }
    out.penalty += 0.5 * rho * sq;
  }
  out.loss = out.task_loss + out.penalty;
  if (!std::isfinite(out.loss))
    throw Error(Status::divergence, "admm loss is not finite");
  return out;
}

void sgd_step(ModelGraph& model, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw ShapeError("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Layer& l = model.layers[i];
    if (!l.has_weights()) continue;
    const auto& gw = grads.weight[i];
    const auto& gb = grads.bias[i];
    for (std::size_t k = 0; k < l.weight.values.size(); ++k) l.weight.values[k] -= lr * gw[k];
    for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] -= lr * gb[k];
  }
}

}  // namespace forms
