#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "forms/admm.hpp"
#include "forms/container.hpp"
#include "forms/dataset.hpp"
#include "forms/model.hpp"
#include "forms/tensor.hpp"

using namespace forms;

namespace {

Layer conv_layer(std::size_t f, std::size_t c, std::size_t k) {
  Layer l;
  l.kind = LayerKind::conv;
  l.name = "conv";
  l.weight = WeightTensor("conv", {f, c, k, k});
  l.bias.assign(f, 0.0);
  return l;
}

Layer dense_layer(std::size_t out, std::size_t in, const std::string& name = "fc") {
  Layer l;
  l.kind = LayerKind::dense;
  l.name = name;
  l.weight = WeightTensor(name, {out, in});
  l.bias.assign(out, 0.0);
  return l;
}

// Plain nested-loop valid convolution, stride 1.
std::vector<double> direct_conv(const std::vector<double>& x, Shape3 in, const Layer& l) {
  const std::size_t f = l.weight.shape[0], kh = l.weight.shape[2], kw = l.weight.shape[3];
  const std::size_t oh = in.h - kh + 1, ow = in.w - kw + 1;
  std::vector<double> y(f * oh * ow, 0.0);
  for (std::size_t o = 0; o < f; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t s = 0; s < ow; ++s) {
        double acc = l.bias[o];
        for (std::size_t c = 0; c < in.c; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j)
              acc += l.weight.values[((o * in.c + c) * kh + i) * kw + j] * x[(c * in.h + r + i) * in.w + s + j];
        y[(o * oh + r) * ow + s] = acc;
      }
  return y;
}

Dataset tiny_dataset(std::size_t n, std::size_t features, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d;
  d.shape = {features, 1, 1};
  d.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < features; ++k) d.images.push_back(g(rng));
    d.labels.push_back(static_cast<int>(i % classes));
  }
  return d;
}

}  // namespace

TEST_SUITE("reshape") {
  TEST_CASE("2x1x2x2 tensor becomes a 4x2 filter-shape matrix") {
    WeightTensor w("c", {2, 1, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) w.values[i] = static_cast<double>(i + 1);
    const Weight2D h = reshape_conv_to_2d(w);
    REQUIRE(h.rows() == 4);
    REQUIRE(h.cols() == 2);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(h(k, 0) == w.values[k]);
      CHECK(h(k, 1) == w.values[4 + k]);
    }
  }

  TEST_CASE("round trip is exact for assorted shapes") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (auto shape : std::vector<std::vector<std::size_t>>{{1, 1, 1, 1}, {3, 2, 3, 3}, {5, 4, 1, 2}, {7, 9}}) {
      WeightTensor w("x", shape);
      for (auto& v : w.values) v = g(rng);
      const Weight2D h = reshape_conv_to_2d(w);
      CHECK(h.cols() == shape[0]);
      CHECK(reshape_2d_to_conv(h, "x", shape) == w);
    }
  }

  TEST_CASE("1x1x1x1 tensor gives a 1x1 matrix") {
    WeightTensor w("c", {1, 1, 1, 1});
    w.values[0] = -2.5;
    const Weight2D h = reshape_conv_to_2d(w);
    CHECK(h.rows() == 1);
    CHECK(h.cols() == 1);
    CHECK(h(0, 0) == -2.5);
  }
}

TEST_SUITE("forward") {
  TEST_CASE("identity dense layer passes the input through") {
    ModelGraph m;
    m.input = {4, 1, 1};
    m.layers.push_back(dense_layer(4, 4));
    for (std::size_t i = 0; i < 4; ++i) m.layers[0].weight.values[i * 4 + i] = 1.0;
    const std::vector<double> x{0.5, -1.0, 2.0, 3.25};
    const ForwardResult r = forward(m, x);
    const auto y = r.logits();
    CHECK(std::vector<double>(y.begin(), y.end()) == x);
  }

  TEST_CASE("all-zero weights give zero logits") {
    ModelGraph m = make_toy_cnn({1, 8, 8}, 4, 4, 10, 1);
    for (auto& l : m.layers) {
      std::fill(l.weight.values.begin(), l.weight.values.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    std::vector<double> x(64, 0.7);
    const ForwardResult r = forward(m, x);
    for (double v : r.logits()) CHECK(v == 0.0);
  }

  TEST_CASE("2x2 conv on a 3x3 input, worked by hand") {
    ModelGraph m;
    m.input = {1, 3, 3};
    m.layers.push_back(conv_layer(1, 1, 2));
    m.layers[0].weight.values = {1, 2, 3, 4};
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
    // [1 2;4 5].[1 2;3 4] = 1+4+12+20 = 37, then 47, 67, 77
    const ForwardResult r = forward(m, x);
    const auto y = r.logits();
    REQUIRE(y.size() == 4);
    CHECK(y[0] == 37);
    CHECK(y[1] == 47);
    CHECK(y[2] == 67);
    CHECK(y[3] == 77);
  }

  TEST_CASE("lowered convolution equals the direct loop on random 4x4 inputs") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t c = 1 + trial % 3, f = 1 + trial % 4, k = 1 + trial % 3;
      ModelGraph m;
      m.input = {c, 4, 4};
      m.layers.push_back(conv_layer(f, c, k));
      for (auto& v : m.layers[0].weight.values) v = g(rng);
      for (auto& v : m.layers[0].bias) v = g(rng);
      std::vector<double> x(c * 16);
      for (auto& v : x) v = g(rng);
      const ForwardResult r = forward(m, x);
      const auto y = r.logits();
      const auto ref = direct_conv(x, m.input, m.layers[0]);
      REQUIRE(y.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
    }
  }

  TEST_CASE("input size mismatch is rejected") {
    const ModelGraph m = make_mlp({4, 1, 1}, 3, 2, 1);
    std::vector<double> x(5, 0.0);
    CHECK_THROWS_AS(forward(m, x), ShapeError);
  }

  TEST_CASE("incompatible adjacent layers fail validation") {
    ModelGraph m;
    m.input = {4, 1, 1};
    m.layers.push_back(dense_layer(3, 4, "a"));
    m.layers.push_back(dense_layer(2, 5, "b"));
    CHECK_THROWS_AS(m.validate(), ShapeError);
  }
}

TEST_SUITE("admm loss") {
  TEST_CASE("scalar weight: penalty 0.36 and penalty gradient 1.2") {
    ModelGraph m;
    m.input = {1, 1, 1};
    m.layers.push_back(dense_layer(1, 1));
    m.layers[0].weight.values = {1.0};
    Dataset d = tiny_dataset(1, 1, 1, 1);
    d.classes = 1;
    const std::vector<std::size_t> batch{0};
    AdmmState s;
    s.z = {{0.5}};
    s.u = {{0.1}};
    s.rho = {2.0};
    Gradients task = Gradients::zeros_like(m);
    task_loss_and_grad(m, d, batch, task);
    const LossAndGrad lg = admm_loss_and_grad(m, d, batch, s);
    // A single class has zero cross-entropy.
    CHECK(lg.task_loss == doctest::Approx(0.0));
    CHECK(lg.penalty == doctest::Approx(0.36).epsilon(1e-12));
    CHECK(lg.grads.weight[0][0] - task.weight[0][0] == doctest::Approx(1.2).epsilon(1e-12));
  }

  TEST_CASE("zero rho leaves the task gradient unchanged") {
    ModelGraph m = make_mlp({6, 1, 1}, 5, 3, 4);
    const Dataset d = tiny_dataset(12, 6, 3, 2);
    std::vector<std::size_t> batch(12);
    for (std::size_t i = 0; i < 12; ++i) batch[i] = i;
    AdmmState s = AdmmState::init(m, std::vector<double>{1.0, 1.0});
    for (auto& z : s.z)
      for (auto& v : z) v = 0.3;
    s.rho = {0.0, 0.0};
    Gradients task = Gradients::zeros_like(m);
    task_loss_and_grad(m, d, batch, task);
    const LossAndGrad lg = admm_loss_and_grad(m, d, batch, s);
    CHECK(lg.penalty == 0.0);
    CHECK(lg.grads.weight == task.weight);
  }

  TEST_CASE("W = Z and U = 0 give no penalty") {
    ModelGraph m = make_mlp({6, 1, 1}, 5, 3, 4);
    const Dataset d = tiny_dataset(6, 6, 3, 2);
    const std::vector<std::size_t> batch{0, 1, 2};
    const AdmmState s = AdmmState::init(m, std::vector<double>{0.7, 3.0});
    Gradients task = Gradients::zeros_like(m);
    task_loss_and_grad(m, d, batch, task);
    const LossAndGrad lg = admm_loss_and_grad(m, d, batch, s);
    CHECK(lg.penalty == 0.0);
    CHECK(lg.grads.weight == task.weight);
  }

  TEST_CASE("penalty gradient matches central differences") {
    ModelGraph m = make_mlp({5, 1, 1}, 4, 3, 9);
    const Dataset d = tiny_dataset(9, 5, 3, 5);
    const std::vector<std::size_t> batch{0, 3, 4, 8};
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 0.5);
    AdmmState s = AdmmState::init(m, std::vector<double>{0.8, 1.7});
    for (auto& z : s.z)
      for (auto& v : z) v = g(rng);
    for (auto& u : s.u)
      for (auto& v : u) v = g(rng);
    const LossAndGrad lg = admm_loss_and_grad(m, d, batch, s);
    Gradients task = Gradients::zeros_like(m);
    task_loss_and_grad(m, d, batch, task);
    const auto wl = m.weighted_layers();
    const double h = 1e-5;
    for (std::size_t i = 0; i < wl.size(); ++i) {
      auto& w = m.layers[wl[i]].weight.values;
      for (std::size_t k = 0; k < w.size(); k += 3) {
        const double keep = w[k];
        w[k] = keep + h;
        const double up = admm_loss_and_grad(m, d, batch, s).penalty;
        w[k] = keep - h;
        const double down = admm_loss_and_grad(m, d, batch, s).penalty;
        w[k] = keep;
        const double fd = (up - down) / (2 * h);
        const double analytic = lg.grads.weight[wl[i]][k] - task.weight[wl[i]][k];
        CHECK(std::abs(fd - analytic) <= 1e-5 * std::max(1.0, std::abs(analytic)));
      }
    }
  }

  TEST_CASE("non-finite loss signals divergence") {
    ModelGraph m = make_mlp({3, 1, 1}, 2, 2, 1);
    m.layers[0].weight.values[0] = std::nan("");
    const Dataset d = tiny_dataset(2, 3, 2, 1);
    const AdmmState s = AdmmState::init(m, std::vector<double>{1.0, 1.0});
    const std::vector<std::size_t> batch{0, 1};
    try {
      admm_loss_and_grad(m, d, batch, s);
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.status() == Status::divergence);
    }
  }

  TEST_CASE("state shape mismatch is rejected") {
    ModelGraph m = make_mlp({3, 1, 1}, 2, 2, 1);
    AdmmState s = AdmmState::init(m, std::vector<double>{1.0, 1.0});
    s.z[1].pop_back();
    CHECK_THROWS(s.check_shapes(m));
    CHECK_THROWS(AdmmState::init(m, std::vector<double>{1.0, 0.0}));
  }
}

TEST_SUITE("sgd") {
  TEST_CASE("w=1, g=2, lr=0.1 gives 0.8") {
    ModelGraph m;
    m.input = {1, 1, 1};
    m.layers.push_back(dense_layer(1, 1));
    m.layers[0].weight.values = {1.0};
    Gradients g = Gradients::zeros_like(m);
    g.weight[0][0] = 2.0;
    sgd_step(m, g, 0.1);
    CHECK(m.layers[0].weight.values[0] == doctest::Approx(0.8).epsilon(1e-15));
  }

  TEST_CASE("zero gradient leaves the model unchanged") {
    ModelGraph m = make_toy_cnn({1, 8, 8}, 4, 4, 10, 2);
    const ModelGraph before = m;
    sgd_step(m, Gradients::zeros_like(m), 0.5);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      CHECK(m.layers[i].weight == before.layers[i].weight);
      CHECK(m.layers[i].bias == before.layers[i].bias);
    }
  }

  TEST_CASE("two runs with the same seed are bit-identical") {
    SyntheticSpec spec;
    spec.train = 200;
    spec.test = 10;
    const auto data = make_synthetic(spec);
    ModelGraph a = make_toy_cnn({1, 8, 8}, 4, 8, 10, 3), b = a;
    train_sgd(a, data.train, 2, 0.05, 16, 9);
    train_sgd(b, data.train, 2, 0.05, 16, 9);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      CHECK(a.layers[i].weight.values == b.layers[i].weight.values);
      CHECK(a.layers[i].bias == b.layers[i].bias);
    }
  }

  TEST_CASE("training improves on chance for the synthetic task") {
    SyntheticSpec spec;
    spec.train = 600;
    spec.test = 300;
    const auto data = make_synthetic(spec);
    ModelGraph m = make_toy_cnn({1, 8, 8}, 8, 8, 10, 1);
    train_sgd(m, data.train, 5, 0.05, 32, 1);
    CHECK(accuracy(m, data.test) > 0.2);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("synthetic data is deterministic, bounded and labelled in range") {
    SyntheticSpec spec;
    spec.train = 50;
    spec.test = 20;
    const auto a = make_synthetic(spec), b = make_synthetic(spec);
    CHECK(a.train.images == b.train.images);
    CHECK(a.test.labels == b.test.labels);
    CHECK(a.train.size() == 50);
    for (double v : a.train.images) CHECK((v >= 0.0 && v <= 1.0));
    for (int l : a.train.labels) CHECK((l >= 0 && l < 10));
    spec.seed = 2;
    CHECK(make_synthetic(spec).train.images != a.train.images);
    CHECK(head(a.train, 7).size() == 7);
  }
}

TEST_SUITE("weight container") {
  TEST_CASE("encode then decode is lossless for float32 payloads") {
    std::vector<NamedTensor> t = {{"a.weight", {2, 3}, {1, -2, 3.5f, 0, 1e-7f, -1e7f}},
                                  {"b", {1}, {42}},
                                  {"empty", {0}, {}}};
    CHECK(decode_container(encode_container(t)) == t);
  }

  TEST_CASE("byte layout: magic, version, count, little-endian fields") {
    const auto bytes = encode_container({{"w", {2}, {1.0f, -1.0f}}});
    REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 1 + 4 + 4 + 4 + 8);
    CHECK(std::memcmp(bytes.data(), "FRMS", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 1);
    CHECK(bytes[12] == 1);
    CHECK(bytes[16] == 'w');
    CHECK(bytes[17] == 0);   // dtype
    CHECK(bytes[21] == 1);   // rank
    CHECK(bytes[25] == 2);   // dim
    float f = 0;
    std::memcpy(&f, bytes.data() + 29, 4);
    CHECK(f == 1.0f);
    CHECK(bytes[36] == 0xbf);  // -1.0f high byte
  }

  TEST_CASE("damaged containers are reported as corrupt") {
    auto bytes = encode_container({{"w", {2}, {1.0f, 2.0f}}});
    auto expect_corrupt = [](const std::vector<std::uint8_t>& b) {
      try {
        decode_container(b);
        FAIL("expected an exception");
      } catch (const Error& e) {
        CHECK(e.status() == Status::corrupt_artifact);
      }
    };
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    expect_corrupt(bad_magic);
    expect_corrupt(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1));
    auto extra = bytes;
    extra.push_back(0);
    expect_corrupt(extra);
    auto bad_dtype = bytes;
    bad_dtype[17] = 3;
    expect_corrupt(bad_dtype);
  }

  TEST_CASE("Z/U snapshots round trip through the container") {
    const ModelGraph m = make_toy_cnn({1, 8, 8}, 4, 4, 10, 5);
    AdmmState s = AdmmState::init(m, std::vector<double>{0.5, 0.25, 2.0});
    for (auto& u : s.u)
      for (std::size_t k = 0; k < u.size(); ++k) u[k] = 0.125 * static_cast<double>(k % 7);
    const AdmmState back = state_from_tensors(decode_container(encode_container(state_tensors(s, m))), m);
    for (std::size_t i = 0; i < s.z.size(); ++i)
      for (std::size_t k = 0; k < s.z[i].size(); ++k) CHECK(back.z[i][k] == static_cast<float>(s.z[i][k]));
    CHECK(back.u == s.u);
    CHECK(back.rho == s.rho);
  }
}
