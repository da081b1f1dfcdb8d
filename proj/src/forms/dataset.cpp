#include "forms/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "forms/rng.hpp"

namespace forms {

namespace {

std::vector<double> make_prototype(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const Shape3 s = spec.shape;
  std::vector<double> img(s.size(), 0.0);
  std::uniform_real_distribution<double> cy(0.0, static_cast<double>(s.h - 1));
  std::uniform_real_distribution<double> cx(0.0, static_cast<double>(s.w - 1));
  std::uniform_real_distribution<double> width(0.8, 1.8);
  std::uniform_real_distribution<double> amp(0.4, 1.0);
  for (std::size_t c = 0; c < s.c; ++c)
    for (int blob = 0; blob < 3; ++blob) {
      const double y0 = cy(rng), x0 = cx(rng), sg = width(rng), a = amp(rng);
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const double dy = static_cast<double>(y) - y0, dx = static_cast<double>(x) - x0;
          img[(c * s.h + y) * s.w + x] += a * std::exp(-(dy * dy + dx * dx) / (2.0 * sg * sg));
        }
    }
  const double mx = *std::max_element(img.begin(), img.end());
  if (mx > 0.0)
    for (auto& v : img) v /= mx;
  return img;
}

Dataset sample(const SyntheticSpec& spec, const std::vector<std::vector<double>>& protos,
               std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> cls(0, spec.classes - 1);
  std::uniform_int_distribution<int> shift(-spec.max_shift, spec.max_shift);
  std::uniform_real_distribution<double> gain(0.7, 1.3);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const Shape3 s = spec.shape;
  Dataset d;
  d.shape = s;
  d.classes = spec.classes;
  d.images.resize(n * s.size());
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = cls(rng);
    const int sy = shift(rng), sx = shift(rng);
    const double g = gain(rng);
    d.labels[i] = static_cast<int>(k);
    double* out = d.images.data() + i * s.size();
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const long yy = static_cast<long>(y) - sy, xx = static_cast<long>(x) - sx;
          double v = 0.0;
          if (yy >= 0 && xx >= 0 && yy < static_cast<long>(s.h) && xx < static_cast<long>(s.w))
            v = protos[k][(c * s.h + static_cast<std::size_t>(yy)) * s.w + static_cast<std::size_t>(xx)];
          out[(c * s.h + y) * s.w + x] = std::clamp(g * v + noise(rng), 0.0, 1.0);
        }
  }
  return d;
}

}  // namespace

SplitDataset make_synthetic(const SyntheticSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0x70726f746fULL));
  std::vector<std::vector<double>> protos;
  for (std::size_t k = 0; k < spec.classes; ++k) protos.push_back(make_prototype(spec, rng));
  SplitDataset out;
  out.train = sample(spec, protos, spec.train, derive_seed(spec.seed, 1));
  out.test = sample(spec, protos, spec.test, derive_seed(spec.seed, 2));
  return out;
}

Dataset head(const Dataset& data, std::size_t n) {
  n = std::min(n, data.size());
  Dataset d;
  d.shape = data.shape;
  d.classes = data.classes;
  d.images.assign(data.images.begin(), data.images.begin() + static_cast<long>(n * data.shape.size()));
  d.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<long>(n));
  return d;
}

}  // namespace forms
