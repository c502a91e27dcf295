// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "faclstm/errors.hpp"
#include "faclstm/objective.hpp"
#include "oracle.hpp"

using facl::Box;
using facl::Tensor;

TEST_CASE("label smoothing values") {
  const auto id = facl::label_smooth(4, 0.0);
  for (int k = 0; k < 39; ++k) CHECK(id[k] == (k == 4 ? 1.0 : 0.0));

  const auto y = facl::label_smooth(0, 0.1);
  CHECK(y[0] == doctest::Approx(0.9025641026).epsilon(1e-10));
  for (int k = 1; k < 39; ++k) CHECK(y[k] == doctest::Approx(0.0025641026).epsilon(1e-8));
  CHECK(std::accumulate(y.begin(), y.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

  for (double v : facl::label_smooth(7, 1.0)) CHECK(v == doctest::Approx(1.0 / 39).epsilon(1e-15));

  CHECK_THROWS_AS(facl::label_smooth(0, -0.1), facl::ValidationError);
  CHECK_THROWS_AS(facl::label_smooth(0, 1.5), facl::ValidationError);
  CHECK_THROWS_AS(facl::label_smooth(39, 0.1), facl::ValidationError);
}

TEST_CASE("label smoothing invariants") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> eps(0.0, 0.5);
  std::uniform_int_distribution<int> hot(0, 38);
  for (int i = 0; i < 200; ++i) {
    const double e = eps(rng);
    const int h = hot(rng);
    const auto y = facl::label_smooth(h, e);
    CHECK(std::abs(std::accumulate(y.begin(), y.end(), 0.0) - 1.0) < 1e-12);
    CHECK(*std::min_element(y.begin(), y.end()) == doctest::Approx(e / 39).epsilon(1e-14));
    CHECK(*std::max_element(y.begin(), y.end()) == doctest::Approx(1 - e + e / 39).epsilon(1e-14));
    CHECK(std::max_element(y.begin(), y.end()) - y.begin() == h);
  }
}

TEST_CASE("smoothed target tensor layout") {
  const std::vector<std::vector<int>> seqs{{36, 0, 37}, {36, 5, 37}};
  const Tensor t = facl::smoothed_targets(seqs, 0.0);
  REQUIRE(t.dims() == Tensor::Dims{3, 2, 39});
  CHECK(t[(1 * 2 + 1) * 39 + 5] == 1.0);
  CHECK(t[(0 * 2 + 0) * 39 + 36] == 1.0);
}

TEST_CASE("shrink box") {
  const Box g = facl::shrink_box({10, 20, 50, 40}, 0.25);
  CHECK(g == Box{25, 27.5, 35, 32.5});
  CHECK(facl::shrink_box({10, 20, 50, 40}, 1.0) == Box{10, 20, 50, 40});
  CHECK_THROWS_AS(facl::shrink_box({10, 20, 10, 40}, 0.25), facl::ValidationError);
  CHECK_THROWS_AS(facl::shrink_box({10, 20, 50, 40}, 0.0), facl::ValidationError);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 100), len(1, 50);
  // dyadic ratios keep the area identity exact in binary floating point
  for (double r : {0.25, 0.5, 0.125, 1.0}) {
    for (int i = 0; i < 100; ++i) {
      const double x = std::round(u(rng)), y = std::round(u(rng));
      const Box b{x, y, x + std::round(len(rng)), y + std::round(len(rng))};
      const Box s = facl::shrink_box(b, r);
      CHECK((s.x_min + s.x_max) / 2 == doctest::Approx((b.x_min + b.x_max) / 2).epsilon(1e-14));
      CHECK((s.y_min + s.y_max) / 2 == doctest::Approx((b.y_min + b.y_max) / 2).epsilon(1e-14));
      CHECK(s.width() * s.height() == r * r * b.width() * b.height());
    }
  }
}

namespace {

// Independent rasterizer: scale, shrink, then test each cell center.
Tensor brute_mask(const std::vector<Box>& boxes, int64_t h, int64_t w, double r) {
  Tensor m({1, 1, h / 4, w / 4});
  for (const Box& b : boxes) {
    const double cx = (b.x_min + b.x_max) / 8, cy = (b.y_min + b.y_max) / 8;
    const double hw = (b.x_max - b.x_min) / 4 * r / 2, hh = (b.y_max - b.y_min) / 4 * r / 2;
    for (int64_t y = 0; y < h / 4; ++y)
      for (int64_t x = 0; x < w / 4; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px >= cx - hw && px <= cx + hw && py >= cy - hh && py <= cy + hh) m.at(0, 0, y, x) = 1.0;
      }
  }
  return m;
}

}  // namespace

TEST_CASE("rasterize masks") {
  const auto empty = facl::rasterize_masks({}, 64, 256);
  CHECK(empty.mask.dims() == Tensor::Dims{1, 1, 16, 64});
  for (double v : empty.mask.data()) CHECK(v == 0.0);

  const std::vector<Box> full{{0, 0, 256, 64}};
  const Tensor all = facl::rasterize_masks(full, 64, 256, 1.0).mask;
  for (double v : all.data()) CHECK(v == 1.0);

  const std::vector<Box> one{{0, 0, 40, 20}};
  const Tensor m = facl::rasterize_masks(one, 64, 256).mask;
  CHECK(m == brute_mask(one, 64, 256, 0.25));
  // shrunk box spans x 3.75..6.25, y 1.875..3.125 at quarter scale
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 64; ++x) CHECK(m.at(0, 0, y, x) == ((y == 2 && (x == 4 || x == 5)) ? 1.0 : 0.0));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 200), len(16, 56);
  for (int i = 0; i < 50; ++i) {
    std::vector<Box> boxes;
    for (int k = 0; k < 3; ++k) {
      const double x = u(rng) * 0.9, y = u(rng) * 0.04;
      boxes.push_back({x, y, std::min(256.0, x + len(rng)), std::min(64.0, y + len(rng))});
    }
    const auto gt = facl::rasterize_masks(boxes, 64, 256);
    CHECK(gt.mask == brute_mask(boxes, 64, 256, 0.25));
  }
}

TEST_CASE("tiny boxes still mark their center cell") {
  const std::vector<Box> tiny{{9, 5, 11, 7}};
  const Tensor m = facl::rasterize_masks(tiny, 32, 64).mask;
  CHECK(m.at(0, 0, 1, 2) == 1.0);
  CHECK(std::accumulate(m.data().begin(), m.data().end(), 0.0) == 1.0);
}

TEST_CASE("out-of-image boxes are clamped") {
  const std::vector<Box> boxes{{-8, -4, 20, 100}};
  const auto gt = facl::rasterize_masks(boxes, 32, 64);
  CHECK(gt.clamped_boxes == 1);
  CHECK(std::accumulate(gt.mask.data().begin(), gt.mask.data().end(), 0.0) > 0.0);
}

TEST_CASE("mask loss values") {
  Tensor m({1, 1, 4, 4});
  for (int i = 0; i < 10; ++i) m[i] = 1.0;
  CHECK(facl::mask_loss(m, m) == 0.0);
  CHECK(facl::mask_loss(m, Tensor(m.dims())) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(std::abs(facl::mask_loss(m, Tensor(m.dims(), 0.5)) - 0.01 * (1 - 10.0 / 18)) < 1e-15);
  CHECK(facl::mask_loss(m, Tensor(m.dims(), 0.5)) == doctest::Approx(0.0044444444).epsilon(1e-8));
  CHECK(facl::mask_loss(Tensor(m.dims()), Tensor(m.dims())) == 0.0);
  CHECK_THROWS_AS(facl::mask_loss(m, Tensor({1, 1, 4, 5})), facl::ShapeError);
}

TEST_CASE("mask loss stays within [0, 0.01] on 1000 fuzz cases") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(1, 8);
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < 1000; ++i) {
    const int h = side(rng), w = side(rng);
    Tensor m({1, 1, h, w});
    for (auto& v : m.data()) v = coin(rng) ? 1.0 : 0.0;
    m[0] = 1.0;
    const Tensor p = oracle::random_tensor({1, 1, h, w}, rng, 0, 1);
    const double l = facl::mask_loss(m, p);
    CHECK(l >= 0.0);
    CHECK(l <= 0.01);
  }
}

TEST_CASE("sequence loss values") {
  const std::vector<std::vector<int>> seqs{{36, 3, 37}};
  const Tensor y0 = facl::smoothed_targets(seqs, 0.0);
  CHECK(facl::sequence_loss(Tensor(y0.dims(), 1.0 / 39), y0) == doctest::Approx(std::log(39.0)).epsilon(1e-12));
  CHECK(std::abs(facl::sequence_loss(Tensor(y0.dims(), 1.0 / 39), y0) - 3.6635616461) < 1e-9);
  CHECK(facl::sequence_loss(y0, y0) == 0.0);

  const Tensor y = facl::smoothed_targets(seqs, 0.1);
  double entropy = 0;
  for (int k = 0; k < 39; ++k) entropy -= y[k] * std::log(y[k]);
  CHECK(facl::sequence_loss(y, y) == doctest::Approx(entropy).epsilon(1e-12));

  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    Tensor p = oracle::random_tensor(y.dims(), rng, 0.01, 1);
    for (int row = 0; row < 3; ++row) {
      double s = 0;
      for (int k = 0; k < 39; ++k) s += p[row * 39 + k];
      for (int k = 0; k < 39; ++k) p[row * 39 + k] /= s;
    }
    CHECK(facl::sequence_loss(p, y) >= facl::sequence_loss(y, y));
  }

  int64_t hits = 0;
  Tensor zero_p(y0.dims(), 0.0);
  for (int t = 0; t < 3; ++t) zero_p[t * 39 + 0] = 1.0;
  facl::sequence_loss(zero_p, y0, &hits);
  CHECK(hits == 3);
}

TEST_CASE("sequence loss gradient matches central differences") {
  std::mt19937_64 rng(6);
  const std::vector<std::vector<int>> seqs{{36, 2, 37}};
  const Tensor targets = facl::smoothed_targets(seqs, 0.1);
  std::vector<Tensor> logits;
  for (int t = 0; t < 3; ++t) logits.push_back(oracle::random_tensor({1, 39}, rng));
  auto loss = [&](facl::ag::Tape& tape, bool trainable) {
    facl::ag::Var total;
    for (int t = 0; t < 3; ++t) {
      auto z = trainable ? tape.parameter("z" + std::to_string(t), logits[t]) : tape.constant(logits[t]);
      Tensor row({1, 39});
      std::copy_n(targets.data().begin() + t * 39, 39, row.data().begin());
      auto l = facl::ag::softmax_cross_entropy(z, row);
      total = total.valid() ? facl::ag::add(total, l) : l;
    }
    return facl::ag::scale(total, 1.0 / 3);
  };
  facl::ag::Tape tape;
  const auto g = tape.backward(loss(tape, true));
  for (int t = 0; t < 3; ++t)
    for (int k = 0; k < 39; ++k) {
      const double saved = logits[t][k];
      logits[t][k] = saved + 1e-5;
      facl::ag::Tape a;
      const double up = loss(a, false).value().item();
      logits[t][k] = saved - 1e-5;
      facl::ag::Tape b;
      const double down = loss(b, false).value().item();
      logits[t][k] = saved;
      const double n = (up - down) / 2e-5;
      const double an = g.at("z" + std::to_string(t))[k];
      CHECK(std::abs(an - n) / std::max(1.0, std::abs(an)) < 1e-6);
    }
}

TEST_CASE("total loss") {
  CHECK(facl::total_loss(0.5, 0.004, 1.0) == doctest::Approx(0.504).epsilon(1e-15));
  CHECK(facl::total_loss(0.5, 0.004, 0.0) == 0.5);
  CHECK(facl::total_loss(0.0, 0.0, 3.0) == 0.0);
  CHECK_THROWS_AS(facl::total_loss(1, 1, -1), facl::ValidationError);
}
