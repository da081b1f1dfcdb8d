#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "forms/admm.hpp"
#include "forms/dataset.hpp"
#include "forms/layout.hpp"
#include "forms/model.hpp"
#include "forms/projection.hpp"

using namespace forms;

namespace {

Weight2D random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Weight2D h(rows, cols);
  for (auto& v : h.data()) v = n(rng);
  return h;
}

Weight2D from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Weight2D h(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (double v : row) h(r, c++) = v;
    ++r;
  }
  return h;
}

// Test-side Euclidean projection: try every subset of ceil(a F) columns and
// ceil(b R) rows, keep the closest.
double brute_force_structured_distance(const Weight2D& h, std::size_t keep_cols, std::size_t keep_rows) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t R = h.rows(), F = h.cols();
  for (std::size_t cm = 0; cm < (1u << F); ++cm) {
    if (static_cast<std::size_t>(std::popcount(cm)) != keep_cols) continue;
    for (std::size_t rm = 0; rm < (1u << R); ++rm) {
      if (static_cast<std::size_t>(std::popcount(rm)) != keep_rows) continue;
      double d = 0.0;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < F; ++c)
          if (!((cm >> c & 1) && (rm >> r & 1))) d += h(r, c) * h(r, c);
      best = std::min(best, std::sqrt(d));
    }
  }
  return best;
}

FragmentLayout single_column(std::size_t m, Sign s) {
  FragmentLayout lay = make_layout({1, m}, PolarizationOrder::c_major, m);
  lay.signs.assign(1, s);
  return lay;
}

SplitDataset small_data(std::uint64_t seed, std::size_t train = 400, std::size_t test = 200) {
  SyntheticSpec s;
  s.train = train;
  s.test = test;
  s.seed = seed;
  return make_synthetic(s);
}

}  // namespace

TEST_SUITE("structured pruning") {
  TEST_CASE("retained counts use the ceiling") {
    CHECK(retained_count(100, 0.57) == 57);
    CHECK(retained_count(10, 0.5) == 5);
    CHECK(retained_count(10, 0.51) == 6);
    CHECK(retained_count(96, 32.0 / 96) == 32);
    CHECK(retained_count(7, 1.0) == 7);
  }

  TEST_CASE("alpha = beta = 1 is the identity") {
    std::mt19937_64 rng(3);
    const Weight2D h = random_matrix(rng, 9, 5);
    CHECK(project_structured(h, 1.0, 1.0) == h);
    CHECK(project_structured(h, 1.0, 1.0, {true, 4}) == h);
  }

  TEST_CASE("4x4 with alpha 0.5 keeps the two largest columns") {
    const Weight2D h = from_rows({{1, 0.1, 5, 0}, {1, 0.2, 5, 0.3}, {1, 0.1, 5, 0.1}, {1, 0.1, 5, 0.2}});
    const StructureMask m = select_structure(h, 0.5, 1.0);
    CHECK(m.cols == std::vector<std::uint8_t>{1, 0, 1, 0});
    CHECK(m.kept_rows() == 4);
    const Weight2D p = project_structured(h, 0.5, 1.0);
    CHECK(frobenius_distance(p, h) == doctest::Approx(brute_force_structured_distance(h, 2, 4)));
  }

  TEST_CASE("matches an exhaustive search on small matrices") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 60; ++t) {
      const std::size_t R = 2 + t % 4, F = 2 + (t / 4) % 4;
      const Weight2D h = random_matrix(rng, R, F);
      const double a = 0.5, b = (t % 2) ? 0.5 : 1.0;
      const Weight2D p = project_structured(h, a, b);
      // Columns are chosen first, then rows over the kept columns. With b = 1
      // that is the exact projection; with b < 1 it is never closer than it.
      const double best = brute_force_structured_distance(h, retained_count(F, a), retained_count(R, b));
      if (b == 1.0) CHECK(frobenius_distance(p, h) == doctest::Approx(best).epsilon(1e-12));
      else CHECK(frobenius_distance(p, h) >= best - 1e-12);
    }
  }

  TEST_CASE("exact retained counts and bit-identical survivors") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 100; ++t) {
      const std::size_t R = 1 + t % 23, F = 1 + t % 13;
      const Weight2D h = random_matrix(rng, R, F);
      const double a = 0.25 * (1 + t % 4), b = 0.2 * (1 + t % 5);
      const StructureMask m = select_structure(h, a, b);
      CHECK(m.kept_cols() == retained_count(F, a));
      CHECK(m.kept_rows() == retained_count(R, b));
      const Weight2D p = apply_structure(h, m);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < F; ++c) {
          if (m.rows[r] && m.cols[c]) CHECK(p(r, c) == h(r, c));
          else CHECK(p(r, c) == 0.0);
        }
    }
  }

  TEST_CASE("crossbar-aware rounding keeps whole fragments") {
    CHECK(target_rows(36, 0.5, {true, 4}) == 20);
    CHECK(target_rows(36, 0.5, {false, 4}) == 18);
    CHECK(target_rows(10, 0.9, {true, 4}) == 10);
    CHECK(target_rows(64, 0.5, {true, 8}) == 32);
    std::mt19937_64 rng(9);
    const Weight2D h = random_matrix(rng, 36, 6);
    CHECK(select_structure(h, 1.0, 0.5, {true, 4}).kept_rows() == 20);
  }

  TEST_CASE("ties keep the lower index") {
    const Weight2D h(3, 4, 1.0);
    const StructureMask m = select_structure(h, 0.5, 1.0 / 3);
    CHECK(m.cols == std::vector<std::uint8_t>{1, 1, 0, 0});
    CHECK(m.rows == std::vector<std::uint8_t>{1, 0, 0});
  }
}

TEST_SUITE("polarization") {
  TEST_CASE("fragment sign") {
    const double pos[] = {0.2, -0.1, 0.3, -0.05};
    const double neg[] = {-1.0, 2.0, -3.0};
    const double tie[] = {0.5, -0.5};
    const double zero[] = {0.0, 0.0, 0.0};
    CHECK(fragment_sign(pos) == Sign::positive);
    CHECK(fragment_sign(neg) == Sign::negative);
    CHECK(fragment_sign(tie) == Sign::positive);
    CHECK(fragment_sign(zero) == Sign::positive);
    CHECK(fragment_sign(std::span<const double>{}) == Sign::positive);
  }

  TEST_CASE("projection zeroes the opposing weights") {
    const Weight2D a = from_rows({{0.2}, {-0.1}, {0.3}, {-0.05}});
    CHECK(project_polarize(a, single_column(4, Sign::positive)) == from_rows({{0.2}, {0}, {0.3}, {0}}));
    const Weight2D b = from_rows({{-1}, {2}, {-3}});
    CHECK(project_polarize(b, single_column(3, Sign::negative)) == from_rows({{-1}, {0}, {-3}}));
  }

  TEST_CASE("layout mismatch throws") {
    const Weight2D h(5, 2);
    const FragmentLayout lay = make_layout({3, 5}, PolarizationOrder::c_major, 4);
    CHECK_THROWS_AS(project_polarize(h, lay), ShapeError);
  }

  TEST_CASE("rows outside the layout are untouched") {
    Weight2D h = from_rows({{-1}, {-2}, {3}, {-4}});
    const std::uint8_t mask[] = {1, 0, 1, 0};
    FragmentLayout lay = make_layout({1, 4}, PolarizationOrder::c_major, 2, mask);
    lay.signs.assign(1, Sign::positive);
    CHECK(project_polarize(h, lay) == from_rows({{0}, {-2}, {3}, {-4}}));
  }

  TEST_CASE("never farther than any same-sign point") {
    std::mt19937_64 rng(21);
    for (std::size_t m = 1; m <= 4; ++m)
      for (int t = 0; t < 200; ++t) {
        const Weight2D h = random_matrix(rng, m, 1);
        for (Sign s : {Sign::positive, Sign::negative}) {
          const double sg = s == Sign::positive ? 1.0 : -1.0;
          const double d = frobenius_distance(project_polarize(h, single_column(m, s)), h);
          // For each coordinate the best feasible value is x if it has the
          // right sign and 0 otherwise; enumerate the keep/zero choices.
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t keep = 0; keep < (1u << m); ++keep) {
            double dist = 0.0;
            bool ok = true;
            for (std::size_t r = 0; r < m; ++r) {
              if (keep >> r & 1) {
                if (h(r, 0) * sg < 0.0) ok = false;
              } else {
                dist += h(r, 0) * h(r, 0);
              }
            }
            if (ok) best = std::min(best, std::sqrt(dist));
          }
          CHECK(d <= best + 1e-15);
        }
      }
  }

  TEST_CASE("update_signs reports changed fragments") {
    Weight2D h = from_rows({{1, -1}, {1, -1}, {-3, 1}, {1, 0}});
    FragmentLayout lay = make_layout({2, 4}, PolarizationOrder::c_major, 2);
    CHECK(update_signs(lay, h) == 2);  // column 1 fragment 0 and column 0 fragment 1 go negative
    CHECK(lay.sign(0, 0) == Sign::positive);
    CHECK(lay.sign(0, 1) == Sign::negative);
    CHECK(lay.sign(1, 0) == Sign::negative);
    CHECK(lay.sign(1, 1) == Sign::positive);
    CHECK(update_signs(lay, h) == 0);
  }

  TEST_CASE("traversal orders") {
    CHECK(traversal_order(1, 2, 3, PolarizationOrder::w_major) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(traversal_order(1, 2, 3, PolarizationOrder::h_major) == std::vector<std::size_t>{0, 3, 1, 4, 2, 5});
    CHECK(traversal_order(4, 1, 1, PolarizationOrder::c_major) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(traversal_order(2, 1, 2, PolarizationOrder::c_major) == std::vector<std::size_t>{0, 2, 1, 3});
    CHECK(parse_polarization_order("W") == PolarizationOrder::w_major);
    CHECK(parse_polarization_order("C-major") == PolarizationOrder::c_major);
    CHECK_THROWS(parse_polarization_order("diagonal"));
  }

  TEST_CASE("short last fragment") {
    const FragmentLayout lay = make_layout({3, 10}, PolarizationOrder::c_major, 4);
    CHECK(lay.fragments_per_col() == 3);
    CHECK(lay.fragment_count() == 9);
    CHECK(lay.fragment_end(2) == 10);
  }

  TEST_CASE("sign bitmap round trip") {
    FragmentLayout lay = make_layout({3, 12}, PolarizationOrder::c_major, 4);
    for (std::size_t i = 0; i < lay.signs.size(); ++i) lay.signs[i] = (i * 7) % 3 == 0 ? Sign::negative : Sign::positive;
    const auto bits = pack_signs(lay);
    REQUIRE(bits.size() == 2);
    // fragments 0, 3, 6 negative -> bits 0, 3, 6
    CHECK(bits[0] == 0b01001001);
    CHECK(bits[1] == 0);
    FragmentLayout back = make_layout({3, 12}, PolarizationOrder::c_major, 4);
    unpack_signs(back, bits);
    CHECK(back == lay);
    CHECK_THROWS(unpack_signs(back, std::vector<std::uint8_t>{0}));
  }
}

TEST_SUITE("quantization") {
  TEST_CASE("examples") {
    const double step = 0.01;
    CHECK(project_quantize(from_rows({{0.13}}), 8, step)(0, 0) == doctest::Approx(0.13));
    CHECK(project_quantize(from_rows({{0.134}}), 8, step)(0, 0) == doctest::Approx(0.13));
    CHECK(project_quantize(from_rows({{-0.136}}), 8, step)(0, 0) == doctest::Approx(-0.14));
    CHECK(project_quantize(from_rows({{0.0}}), 8, step)(0, 0) == 0.0);
    CHECK(project_quantize(from_rows({{300 * step}}), 8, step)(0, 0) == doctest::Approx(255 * step));
    CHECK(project_quantize(from_rows({{-300 * step}}), 8, step)(0, 0) == doctest::Approx(-255 * step));
  }

  TEST_CASE("scale and levels") {
    CHECK(max_level(8) == 255);
    CHECK(max_level(4) == 15);
    CHECK(quantization_scale(from_rows({{0.5, -2.55}}), 8) == doctest::Approx(0.01));
    CHECK(quantization_scale(Weight2D(3, 3), 8) == 0.0);
  }

  TEST_CASE("error within half a step on the grid range") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
      const Weight2D h = random_matrix(rng, 8, 8);
      const double s = quantization_scale(h, 8);
      const Weight2D q = project_quantize(h, 8, s);
      for (std::size_t k = 0; k < h.size(); ++k) {
        CHECK(std::abs(q.data()[k] - h.data()[k]) <= s / 2 * (1 + 1e-12));
        const double lvl = std::abs(q.data()[k]) / s;
        CHECK(std::abs(lvl - std::round(lvl)) < 1e-9);
        CHECK(std::round(lvl) <= 255.0);
      }
    }
  }
}

TEST_SUITE("idempotence") {
  TEST_CASE("all three projections on random matrices") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 300; ++t) {
      const std::size_t R = 1 + t % 19, F = 1 + t % 7, m = std::size_t{1} << (1 + t % 3);
      const Weight2D h = random_matrix(rng, R, F);
      const StructureOptions so{t % 2 == 0, m};
      const Weight2D p = project_structured(h, 0.5, 0.75, so);
      CHECK(project_structured(p, 0.5, 0.75, so) == p);
      FragmentLayout lay = make_layout({F, R}, PolarizationOrder::c_major, m);
      update_signs(lay, h);
      const Weight2D q = project_polarize(h, lay);
      CHECK(project_polarize(q, lay) == q);
      const double s = quantization_scale(h, 8);
      const Weight2D z = project_quantize(h, 8, s);
      CHECK(project_quantize(z, 8, s) == z);
    }
  }
}

TEST_SUITE("dual update") {
  TEST_CASE("arithmetic") {
    std::vector<double> u{0.1};
    const std::vector<double> w{1.0}, z{0.7};
    dual_update(u, w, z);
    CHECK(u[0] == doctest::Approx(0.4));
  }

  TEST_CASE("W = Z leaves U fixed") {
    std::vector<double> u{0.0, 0.3, -2.0};
    const std::vector<double> w{1.0, 2.0, 3.0};
    for (int i = 0; i < 5; ++i) dual_update(u, w, w);
    CHECK(u == std::vector<double>{0.0, 0.3, -2.0});
  }

  TEST_CASE("shape mismatch throws") {
    std::vector<double> u(2);
    const std::vector<double> w(3), z(3);
    CHECK_THROWS_AS(dual_update(u, w, z), ShapeError);
  }
}

TEST_SUITE("admm_train") {
  TEST_CASE("no constraints reduces to plain SGD") {
    const SplitDataset d = small_data(4);
    const ModelGraph m0 = make_mlp(d.train.shape, 16, 10, 8);
    CompressionConfig cfg;
    cfg.polarize = false;
    cfg.quantize = false;
    cfg.epochs = 3;
    cfg.seed = 12;
    const AdmmResult r = admm_train(m0, d.train, cfg);
    ModelGraph ref = m0;
    train_sgd(ref, d.train, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed);
    CompressedModel want = CompressedModel::identity(ref, cfg);
    snap_to_float32(want);
    for (std::size_t i = 0; i < ref.layers.size(); ++i) {
      CHECK(r.model.graph.layers[i].weight == want.graph.layers[i].weight);
      CHECK(r.model.graph.layers[i].bias == want.graph.layers[i].bias);
    }
    CHECK(r.sign_updates == 0);
    CHECK(verify_constraints(r.model, cfg).ok());
  }

  TEST_CASE("toy MLP at m=4, alpha=beta=0.5, 8-bit passes verification") {
    const SplitDataset d = small_data(6);
    const ModelGraph m0 = make_mlp(d.train.shape, 32, 10, 3);
    CompressionConfig cfg;
    cfg.defaults = {0.5, 0.5, 0.05};
    cfg.fragment_size = 4;
    cfg.epochs = 4;
    cfg.sign_update_interval = 2;
    const AdmmResult r = admm_train(m0, d.train, cfg);
    const ConstraintReport rep = verify_constraints(r.model, cfg);
    CHECK(rep.ok());
    REQUIRE(rep.layers.size() == 2);
    CHECK(rep.layers[0].nonzero_filters <= 16);
    CHECK(rep.layers[0].nonzero_shapes <= 32);
    CHECK(r.model.polarized);
    CHECK(r.model.quantized);
    CHECK(r.history.size() == 12);
  }

  TEST_CASE("signs are updated N/M times") {
    const SplitDataset d = small_data(7, 200, 50);
    const ModelGraph m0 = make_mlp(d.train.shape, 8, 10, 1);
    CompressionConfig cfg;
    cfg.quantize = false;
    cfg.epochs = 6;
    cfg.sign_update_interval = 2;
    CHECK(admm_train(m0, d.train, cfg).sign_updates == 3);
    cfg.sign_update_interval = 3;
    CHECK(admm_train(m0, d.train, cfg).sign_updates == 2);
    cfg.sign_update_interval = 4;
    CHECK(admm_train(m0, d.train, cfg).sign_updates == 1);
  }

  TEST_CASE("deterministic") {
    const SplitDataset d = small_data(8, 200, 50);
    const ModelGraph m0 = make_mlp(d.train.shape, 8, 10, 2);
    CompressionConfig cfg;
    cfg.defaults = {0.5, 0.5, 0.05};
    cfg.epochs = 2;
    const AdmmResult a = admm_train(m0, d.train, cfg), b = admm_train(m0, d.train, cfg);
    for (std::size_t i = 0; i < m0.layers.size(); ++i) CHECK(a.model.graph.layers[i].weight == b.model.graph.layers[i].weight);
  }

  TEST_CASE("divergence carries a snapshot") {
    const SplitDataset d = small_data(9, 100, 10);
    ModelGraph m0 = make_mlp(d.train.shape, 8, 10, 2);
    CompressionConfig cfg;
    cfg.lr = 1e6;
    cfg.epochs = 4;
    // Blow the weights up so the loss overflows.
    for (auto& l : m0.layers)
      for (auto& v : l.weight.values) v *= 1e150;
    try {
      admm_train(m0, d.train, cfg);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.status() == Status::divergence);
      CHECK(e.state.z.size() == 2);
      CHECK(!e.model.layers.empty());
    }
  }

  TEST_CASE("config validation") {
    CompressionConfig c;
    CHECK_NOTHROW(c.validate());
    c.defaults.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.defaults.beta = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.defaults.rho = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.quant_bits = 7;  // not a multiple of the cell width
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.sign_update_interval = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.fragment_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.layers["conv1"] = {0.5, -1.0, 0.1};
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("per-layer knobs") {
    CompressionConfig c;
    c.defaults = {0.5, 0.5, 0.1};
    c.layers["fc"] = {1.0, 0.25, 0.2};
    CHECK(c.knobs("fc") == LayerKnobs{1.0, 0.25, 0.2});
    CHECK(c.knobs("conv1") == LayerKnobs{0.5, 0.5, 0.1});
  }
}

TEST_SUITE("verify_constraints") {
  struct Fixture {
    CompressionConfig cfg;
    CompressedModel cm;
    Fixture() {
      const SplitDataset d = small_data(10, 200, 20);
      cfg.defaults = {0.5, 0.5, 0.05};
      cfg.fragment_size = 4;
      cfg.epochs = 2;
      cm = admm_train(make_mlp(d.train.shape, 16, 10, 5), d.train, cfg).model;
    }
    // A nonzero retained weight in the first layer, by (row, col).
    std::pair<std::size_t, std::size_t> pick(const Weight2D& h, Sign want) const {
      const FragmentLayout& lay = cm.layers[0].layout;
      for (std::size_t c = 0; c < lay.cols; ++c)
        for (std::size_t f = 0; f < lay.fragments_per_col(); ++f)
          if (lay.sign(c, f) == want)
            for (std::size_t s = lay.fragment_begin(f); s < lay.fragment_end(f); ++s)
              if (h(lay.rows[s], c) != 0.0) return {lay.rows[s], c};
      FAIL("no candidate weight");
      return {0, 0};
    }
  };

  TEST_CASE("freshly projected model is clean") {
    Fixture fx;
    CHECK(verify_constraints(fx.cm, fx.cfg).ok());
  }

  TEST_CASE("one flipped sign is one polarization violation") {
    Fixture fx;
    Weight2D h = fx.cm.weight2d(0);
    const auto [r, c] = fx.pick(h, Sign::positive);
    h(r, c) = -h(r, c);
    fx.cm.set_weight2d(0, h);
    const ConstraintReport rep = verify_constraints(fx.cm, fx.cfg);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].kind == ViolationKind::polarization);
    CHECK(rep.violations[0].row == r);
    CHECK(rep.violations[0].col == c);
    CHECK(std::count(rep.layers[0].polarized.begin(), rep.layers[0].polarized.end(), false) == 1);
  }

  TEST_CASE("one off-grid weight is one quantization violation") {
    Fixture fx;
    Weight2D h = fx.cm.weight2d(0);
    const auto [r, c] = fx.pick(h, Sign::positive);
    h(r, c) += 0.3 * fx.cm.layers[0].quant_scale;
    fx.cm.set_weight2d(0, h);
    const ConstraintReport rep = verify_constraints(fx.cm, fx.cfg);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].kind == ViolationKind::quantization);
    CHECK_FALSE(rep.layers[0].quantized);
  }

  TEST_CASE("a revived pruned filter is a structure violation") {
    Fixture fx;
    Weight2D h = fx.cm.weight2d(0);
    const auto& mask = fx.cm.layers[0].mask;
    const std::size_t col = static_cast<std::size_t>(std::find(mask.cols.begin(), mask.cols.end(), 0) - mask.cols.begin());
    const std::size_t row = static_cast<std::size_t>(std::find(mask.rows.begin(), mask.rows.end(), 1) - mask.rows.begin());
    REQUIRE(col < mask.cols.size());
    h(row, col) = fx.cm.layers[0].quant_scale;
    fx.cm.set_weight2d(0, h);
    const ConstraintReport rep = verify_constraints(fx.cm, fx.cfg);
    bool structural = false;
    for (const auto& v : rep.violations) structural = structural || v.kind == ViolationKind::structure;
    CHECK(structural);
  }

  TEST_CASE("sparsity fields") {
    Fixture fx;
    const ConstraintReport rep = verify_constraints(fx.cm, fx.cfg);
    const auto& l0 = rep.layers[0];
    CHECK(l0.filters == 16);
    CHECK(l0.target_filters == 8);
    CHECK(l0.filter_sparsity >= 0.5);
    CHECK(l0.shape_sparsity >= 0.5 - 1e-12);
  }
}
