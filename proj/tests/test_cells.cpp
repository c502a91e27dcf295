// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include <doctest.h>

#include <cmath>
#include <random>

#include "faclstm/cells.hpp"
#include "faclstm/errors.hpp"
#include "oracle.hpp"

using facl::Tensor;

namespace {

facl::CellState<Tensor> filled_state(Tensor::Dims dims, double c) { return {Tensor(dims, c), Tensor(dims, 0.0)}; }

facl::FcLstmParams zero_fc(int64_t dx, int64_t dh) {
  facl::FcLstmParams p;
  facl::FcLstmParams::fields(p, [&](const char* name, Tensor& t) {
    const std::string_view n = name;
    if (n == "w_ci" || n == "w_cf" || n == "w_co") t = Tensor({1, dh});
    else t = Tensor({n.substr(2, 1) == "x" ? dx : dh, dh});
  });
  return p;
}

}  // namespace

TEST_CASE("fc_lstm zero-weight fixed points") {
  const auto p = zero_fc(3, 4);
  auto s = facl::fc_lstm_step(p, Tensor({2, 3}, 0.7), filled_state({2, 4}, 0.0));
  for (double v : s.c.data()) CHECK(v == 0.0);
  for (double v : s.h.data()) CHECK(v == 0.0);

  s = facl::fc_lstm_step(p, Tensor({2, 3}, 0.7), filled_state({2, 4}, 1.0));
  for (double v : s.c.data()) CHECK(v == 0.5);
  for (double v : s.h.data()) CHECK(v == doctest::Approx(0.2310585786).epsilon(1e-10));
}

TEST_CASE("fc_lstm matches the scalar-loop oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto p = facl::init_fc_lstm(5, 4, rng);
    const Tensor x = oracle::random_tensor({3, 5}, rng);
    const facl::CellState<Tensor> prev{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3, 4}, rng)};
    const auto got = facl::fc_lstm_step(p, x, prev);
    const auto want = oracle::fc_lstm(p, x, {prev.c, prev.h});
    CHECK(oracle::max_abs_diff(got.c, want.c) < 1e-12);
    CHECK(oracle::max_abs_diff(got.h, want.h) < 1e-12);
  }
}

TEST_CASE("fc_lstm rejects mismatched dimensions") {
  std::mt19937_64 rng(0);
  const auto p = facl::init_fc_lstm(5, 4, rng);
  CHECK_THROWS_AS(facl::fc_lstm_step(p, Tensor({1, 6}), filled_state({1, 4}, 0)), facl::ShapeError);
  CHECK_THROWS_AS(facl::fc_lstm_step(p, Tensor({1, 5}), filled_state({1, 3}, 0)), facl::ShapeError);
}

TEST_CASE("convlstm with zero weights from zero state stays at zero") {
  std::mt19937_64 rng(0);
  auto p = facl::init_conv_lstm(2, 3, 3, 4, 5, rng);
  facl::ConvLstmParams::fields(p, [](const char*, Tensor& t) { t = Tensor(t.dims()); });
  const auto s = facl::convlstm_step(p, oracle::random_tensor({1, 2, 4, 5}, rng), filled_state({1, 3, 4, 5}, 0));
  for (double v : s.h.data()) CHECK(v == 0.0);
}

TEST_CASE("convlstm on 1x1 maps equals fc_lstm over 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto fc = facl::init_fc_lstm(3, 4, rng);
    const auto conv = oracle::conv_from_fc(fc);
    const Tensor x = oracle::random_tensor({2, 3}, rng);
    const facl::CellState<Tensor> prev{oracle::random_tensor({2, 4}, rng), oracle::random_tensor({2, 4}, rng)};
    const auto a = facl::fc_lstm_step(fc, x, prev);
    const auto b = facl::convlstm_step(conv, x.reshaped({2, 3, 1, 1}),
                                       {prev.c.reshaped({2, 4, 1, 1}), prev.h.reshaped({2, 4, 1, 1})});
    CHECK(oracle::max_abs_diff(a.c, b.c.reshaped({2, 4})) < 1e-12);
    CHECK(oracle::max_abs_diff(a.h, b.h.reshaped({2, 4})) < 1e-12);
  }
}

TEST_CASE("convlstm is translation equivariant away from borders") {
  std::mt19937_64 rng(5);
  auto p = facl::init_conv_lstm(2, 3, 3, 8, 8, rng);
  // uniform peepholes so the cell treats every position alike
  facl::ConvLstmParams::fields(p, [&](const char* name, Tensor& t) {
    const std::string_view n = name;
    if (n == "w_ci" || n == "w_cf" || n == "w_co") {
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 64; ++i) t[c * 64 + i] = 0.1 * static_cast<double>(c + 1);
    }
  });
  const Tensor x = oracle::random_tensor({1, 2, 8, 8}, rng);
  Tensor shifted({1, 2, 8, 8});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int xx = 1; xx < 8; ++xx) shifted.at(0, c, y, xx) = x.at(0, c, y, xx - 1);
  const auto zero = filled_state({1, 3, 8, 8}, 0);
  const auto a = facl::convlstm_step(p, x, zero);
  const auto b = facl::convlstm_step(p, shifted, zero);
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y < 7; ++y)
      for (int xx = 1; xx < 6; ++xx) CHECK(b.h.at(0, c, y, xx + 1) == doctest::Approx(a.h.at(0, c, y, xx)).epsilon(1e-12));
}

TEST_CASE("attend with w_z = 0 gives uniform attention") {
  std::mt19937_64 rng(1);
  const facl::AttnCellShape s{3, 4, 4, 2, 3};
  auto p = oracle::random_cell(s, rng);
  p.w_z = Tensor(p.w_z.dims());
  const Tensor x = oracle::random_tensor({2, 3, 4, 5}, rng);
  const facl::CellState<Tensor> prev{oracle::random_tensor({2, 4, 4, 5}, rng), oracle::random_tensor({2, 4, 4, 5}, rng)};
  const auto [x_hat, attn] = facl::attend(p, x, prev);
  for (double v : attn.data()) CHECK(v == doctest::Approx(1.0 / 20).epsilon(1e-14));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x_hat[i] == doctest::Approx(x[i] / 20).epsilon(1e-13));
}

TEST_CASE("attend on a single position returns x") {
  std::mt19937_64 rng(2);
  const facl::AttnCellShape s{3, 4, 4, 2, 3};
  const auto p = oracle::random_cell(s, rng);
  const Tensor x = oracle::random_tensor({1, 3, 1, 1}, rng);
  const auto [x_hat, attn] = facl::attend(p, x, {oracle::random_tensor({1, 4, 1, 1}, rng), oracle::random_tensor({1, 4, 1, 1}, rng)});
  CHECK(attn.item() == 1.0);
  CHECK(x_hat == x);
}

TEST_CASE("faclstm forced arithmetic") {
  const facl::AttnCellShape s{3, 2, 2, 2, 3};
  const auto p = facl::zero_attn_cell(s);
  const Tensor x({1, 3, 2, 2}, 0.3);
  auto [st, trace] = facl::faclstm_step(p, x, filled_state({1, 2, 2, 2}, 1.0));
  for (double v : trace.bottleneck.data()) CHECK(v == 0.0);
  for (double v : st.c.data()) CHECK(v == 0.5);
  for (double v : st.h.data()) CHECK(v == 0.25);

  auto [st2, trace2] = facl::faclstm_step(p, x, filled_state({1, 2, 2, 2}, -1.0));
  for (double v : st2.c.data()) CHECK(v == -0.5);
  for (double v : st2.h.data()) CHECK(v == 0.0);
}

TEST_CASE("faclstm matches the scalar-loop oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const facl::AttnCellShape s{3, 4, 5, 2, 3};
    const auto p = oracle::random_cell(s, rng);
    const Tensor x = oracle::random_tensor({2, 3, 4, 5}, rng);
    const facl::CellState<Tensor> prev{oracle::random_tensor({2, 4, 4, 5}, rng), oracle::random_tensor({2, 4, 4, 5}, rng)};
    const auto [got, trace] = facl::faclstm_step(p, x, prev);
    const auto want = oracle::faclstm(p, x, {prev.c, prev.h});
    CHECK(oracle::max_abs_diff(got.c, want.state.c) < 1e-10);
    CHECK(oracle::max_abs_diff(got.h, want.state.h) < 1e-10);
    CHECK(oracle::max_abs_diff(trace.attn, want.attn) < 1e-10);
  }
}

TEST_CASE("taped and plain cell steps agree") {
  std::mt19937_64 rng(4);
  const facl::AttnCellShape s{3, 4, 4, 2, 3};
  const auto p = oracle::random_cell(s, rng);
  const Tensor x = oracle::random_tensor({1, 3, 3, 4}, rng);
  const auto plain = facl::unroll(p, x, 3);
  facl::ag::Tape tape;
  const auto taped = facl::unroll(facl::bind<facl::AttnConvLstmWeights>(tape, p, "", false), tape.constant(x), 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(plain.states[t].h == taped.states[t].h.value());
    CHECK(plain.traces[t].attn == taped.traces[t].attn.value());
  }
}

TEST_CASE("unroll contracts") {
  std::mt19937_64 rng(6);
  const facl::AttnCellShape s{33, 8, 8, 4, 3};
  const auto p = oracle::random_cell(s, rng);
  const Tensor x = oracle::random_tensor({1, 33, 16, 64}, rng);

  const auto one = facl::unroll(p, x, 1);
  const auto step = facl::faclstm_step(p, x, {Tensor({1, 8, 16, 64}), Tensor({1, 8, 16, 64})});
  CHECK(one.states.at(0).h == step.first.h);

  const auto r = facl::unroll(p, x, 20);
  REQUIRE(r.states.size() == 20);
  REQUIRE(r.traces.size() == 20);
  for (const auto& st : r.states) {
    CHECK(st.c.dims() == Tensor::Dims{1, 8, 16, 64});
    CHECK(st.h.dims() == Tensor::Dims{1, 8, 16, 64});
    CHECK(st.c.all_finite());
  }
  for (const auto& tr : r.traces) {
    double sum = 0;
    for (double v : tr.attn.data()) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (const Tensor* g : {&tr.input_gate, &tr.forget_gate, &tr.output_gate}) {
      for (double v : g->data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
    for (double v : tr.bottleneck.data()) CHECK(v >= 0.0);
  }
  CHECK_THROWS_AS(facl::unroll(p, x, 0), facl::ValidationError);
}

TEST_CASE("unroll without attention or recurrence repeats the same output") {
  std::mt19937_64 rng(7);
  const facl::AttnCellShape s{3, 4, 4, 2, 3};
  auto p = oracle::random_cell(s, rng);
  p.w_z = Tensor(p.w_z.dims());
  p.w_h = Tensor(p.w_h.dims());
  // zero the h_{t-1} half of w_b
  for (int64_t o = 0; o < 4; ++o)
    for (int64_t c = 3; c < 7; ++c)
      for (int64_t i = 0; i < 9; ++i) p.w_b[(o * 7 + c) * 9 + i] = 0.0;
  // close the forget gate so c_{t-1} is not carried
  p.bias_f2 = Tensor(p.bias_f2.dims(), -1000.0);
  const auto r = facl::unroll(p, oracle::random_tensor({1, 3, 4, 5}, rng), 5);
  for (int t = 1; t < 5; ++t) CHECK(r.states[t].h == r.states[0].h);
}

TEST_CASE("unroll is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    const auto p = oracle::random_cell({3, 4, 4, 2, 3}, rng);
    return facl::unroll(p, oracle::random_tensor({1, 3, 4, 4}, rng), 4).states.back().h;
  };
  CHECK(run() == run());
}

TEST_CASE("cell parameter validation") {
  std::mt19937_64 rng(0);
  auto p = facl::init_attn_cell({3, 4, 4, 2, 3}, rng);
  CHECK_NOTHROW(facl::validate(p));
  const auto s = facl::shape_of(p);
  CHECK(s.input_channels == 3);
  CHECK(s.cell_channels == 4);
  CHECK(s.attn_channels == 2);
  CHECK(p.bias_f2 == Tensor({4}, 1.0));
  p.w_i = Tensor({4, 3, 3, 3});
  CHECK_THROWS_AS(facl::validate(p), facl::ShapeError);
}
