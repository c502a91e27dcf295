// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "faclstm/autograd.hpp"
#include "faclstm/errors.hpp"
#include "faclstm/optim.hpp"
#include "oracle.hpp"

using facl::Tensor;
namespace ag = facl::ag;

namespace {

using Builder = std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>;

// Largest |a - n| / max(1, |a|) over every input entry, with loss = sum(op * probe).
double fd_error(const std::vector<Tensor>& inputs, const Builder& op, uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xABCDEF);
  Tensor probe;
  auto loss_of = [&](ag::Tape& tape, const std::vector<ag::Var>& vars) {
    ag::Var y = op(tape, vars);
    if (y.value().numel() == 1) return y;
    if (!probe.same_shape(y.value())) probe = oracle::random_tensor(y.value().dims(), rng);
    return ag::sum(ag::hadamard(y, tape.constant(probe)));
  };
  ag::Tape tape;
  std::vector<ag::Var> vars;
  for (size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.parameter("in" + std::to_string(i), inputs[i]));
  const auto grads = tape.backward(loss_of(tape, vars));

  std::vector<Tensor> work = inputs;
  auto eval = [&] {
    ag::Tape t;
    std::vector<ag::Var> v;
    for (const auto& w : work) v.push_back(t.constant(w));
    return loss_of(t, v).value().item();
  };
  double worst = 0;
  const double h = 1e-5;
  for (size_t i = 0; i < work.size(); ++i) {
    const Tensor& g = grads.at("in" + std::to_string(i));
    for (int64_t k = 0; k < work[i].numel(); ++k) {
      const double saved = work[i][k];
      work[i][k] = saved + h;
      const double up = eval();
      work[i][k] = saved - h;
      const double down = eval();
      work[i][k] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g[k] - numeric) / std::max(1.0, std::abs(g[k])));
    }
  }
  return worst;
}

// Values bounded away from zero so relu stays differentiable under the probe step.
Tensor away_from_zero(Tensor::Dims dims, std::mt19937_64& rng) {
  Tensor t = oracle::random_tensor(std::move(dims), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = sign(rng) ? v : -v;
  return t;
}

}  // namespace

TEST_CASE("gradient of sum is all ones") {
  ag::Tape tape;
  auto x = tape.parameter("x", Tensor({2, 3}, 1.5));
  const auto g = tape.backward(ag::sum(x));
  for (double v : g.at("x").data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of sum of squares at 3 is 6") {
  ag::Tape tape;
  auto x = tape.parameter("x", Tensor({4}, 3.0));
  const auto g = tape.backward(ag::sum(ag::hadamard(x, x)));
  for (double v : g.at("x").data()) CHECK(v == 6.0);
}

TEST_CASE("unused parameters get zero gradients") {
  ag::Tape tape;
  auto x = tape.parameter("x", Tensor({2}, 1.0));
  tape.parameter("unused", Tensor({3}, 1.0));
  const auto g = tape.backward(ag::sum(x));
  CHECK(g.at("unused") == Tensor({3}, 0.0));
}

TEST_CASE("per-op gradients match central differences over 10 seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    auto r = [&](Tensor::Dims d) { return oracle::random_tensor(std::move(d), rng); };

    CHECK(fd_error({r({2, 3, 5, 5}), r({4, 3, 3, 3}), r({4})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::conv2d(v[0], v[1], v[2]); },
                   seed) < 1e-4);
    CHECK(fd_error({r({1, 2, 7, 6}), r({3, 2, 3, 3}), r({3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::conv2d(v[0], v[1], v[2], 2); },
                   seed) < 1e-4);
    CHECK(fd_error({r({1, 2, 4, 4}), r({2, 2, 1, 1})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::conv2d(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 2, 2})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::sigmoid(v[0]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 2, 2})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::tanh(v[0]); }, seed) < 1e-4);
    CHECK(fd_error({away_from_zero({2, 3, 2, 2}, rng)},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::relu(v[0]); }, seed) < 1e-4);
    CHECK(fd_error({oracle::random_tensor({2, 1, 3, 4}, rng, -3, 3)},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::spatial_softmax(v[0]); },
                   seed) < 1e-4);
    CHECK(fd_error({r({2, 2, 3, 3}), r({2, 1, 3, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::concat_channels(v[0], v[1]); },
                   seed) < 1e-4);
    CHECK(fd_error({r({2, 4, 3, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::slice_channels(v[0], 1, 2); },
                   seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 3, 3}), r({2, 3, 3, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::hadamard(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 3, 3}), r({2, 1, 3, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::hadamard(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 3, 3}), r({1, 3, 3, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::hadamard(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3}), r({1, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::hadamard(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 2, 2}), r({2, 3, 2, 2})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::add(v[0], v[1]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 2, 2}), r({3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::add_channel_bias(v[0], v[1]); },
                   seed) < 1e-4);
    CHECK(fd_error({r({2, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::scale(v[0], -2.5); }, seed) < 1e-4);
    CHECK(fd_error({r({1, 2, 2, 3})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::upsample_nearest2(v[0]); }, seed) < 1e-4);
    CHECK(fd_error({r({2, 2, 2, 2}), r({8, 5}), r({5})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::dense(ag::flatten(v[0]), v[1], v[2]); },
                   seed) < 1e-4);
    CHECK(fd_error({r({2, 3, 2, 2})},
                   [](ag::Tape&, const std::vector<ag::Var>& v) { return ag::sum(v[0]); }, seed) < 1e-4);

    Tensor targets({3, 5});
    for (int row = 0; row < 3; ++row) {
      double s = 0;
      for (int k = 0; k < 5; ++k) s += (targets[row * 5 + k] = std::uniform_real_distribution<double>(0, 1)(rng));
      for (int k = 0; k < 5; ++k) targets[row * 5 + k] /= s;
    }
    CHECK(fd_error({r({3, 5})},
                   [&](ag::Tape&, const std::vector<ag::Var>& v) { return ag::softmax_cross_entropy(v[0], targets); },
                   seed) < 1e-4);

    const Tensor truth = oracle::random_tensor({2, 1, 3, 4}, rng, 0, 1);
    CHECK(fd_error({oracle::random_tensor({2, 1, 3, 4}, rng, 0.05, 0.95)},
                   [&](ag::Tape&, const std::vector<ag::Var>& v) { return ag::dice_mask_loss(truth, v[0]); },
                   seed) < 1e-4);
  }
}

TEST_CASE("conv2d kernel gradient on a random 5x5 input") {
  std::mt19937_64 rng(77);
  const Tensor x = oracle::random_tensor({1, 1, 5, 5}, rng);
  CHECK(fd_error({oracle::random_tensor({1, 1, 3, 3}, rng)},
                 [&](ag::Tape& t, const std::vector<ag::Var>& v) { return ag::conv2d(t.constant(x), v[0]); },
                 77) < 1e-6);
}

TEST_CASE("replaying a computation gives bitwise identical gradients") {
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng);
  const Tensor k = oracle::random_tensor({2, 3, 3, 3}, rng);
  auto run = [&] {
    ag::Tape tape;
    auto kv = tape.parameter("k", k);
    auto y = ag::spatial_softmax(ag::slice_channels(ag::tanh(ag::conv2d(tape.constant(x), kv)), 0, 1));
    return tape.backward(ag::sum(ag::hadamard(y, y)));
  };
  CHECK(run().at("k") == run().at("k"));
}

TEST_CASE("non-finite values are rejected when recorded") {
  ag::Tape tape;
  auto x = tape.parameter("x", Tensor({1}, 1e308));
  CHECK_THROWS_AS(ag::scale(x, 10.0), facl::NumericError);
  CHECK_THROWS_AS(tape.parameter("x", Tensor({1})), facl::ValidationError);
}

TEST_CASE("cross entropy floors log probabilities and counts hits") {
  ag::Tape tape;
  Tensor logits({1, 3}, std::vector<double>{0.0, 0.0, -100.0});
  Tensor targets({1, 3}, std::vector<double>{0.0, 0.0, 1.0});
  int64_t hits = 0;
  auto loss = ag::softmax_cross_entropy(tape.parameter("z", logits), targets, &hits);
  CHECK(hits == 1);
  CHECK(loss.value().item() == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
}

TEST_CASE("corrupt backward hook perturbs conv kernel gradients") {
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor({1, 1, 4, 4}, rng);
  const Tensor k = oracle::random_tensor({1, 1, 3, 3}, rng);
  auto grad = [&](bool corrupt) {
    ag::Tape tape;
    tape.set_corrupt_backward(corrupt);
    return tape.backward(ag::sum(ag::conv2d(tape.constant(x), tape.parameter("k", k)))).at("k");
  };
  const Tensor clean = grad(false), bad = grad(true);
  CHECK(oracle::max_abs_diff(clean, bad) > 1e-3);
}

TEST_CASE("adam: zero gradient from a fresh state leaves parameters unchanged") {
  facl::NamedTensors params{{"w", Tensor({3}, std::vector<double>{1, -2, 3})}};
  const auto before = params;
  facl::AdamState st;
  facl::adam_step(params, {{"w", Tensor({3})}}, st, 1e-3);
  CHECK(params == before);
  CHECK(st.first_moment.at("w") == Tensor({3}));
  CHECK(st.step == 1);
}

TEST_CASE("adam: moments decay under zero gradient") {
  facl::NamedTensors params{{"w", Tensor({1}, 1.0)}};
  facl::AdamState st;
  facl::adam_step(params, {{"w", Tensor({1}, 0.5)}}, st, 1e-3);
  const double m = st.first_moment.at("w")[0], v = st.second_moment.at("w")[0];
  facl::adam_step(params, {}, st, 1e-3);
  CHECK(st.first_moment.at("w")[0] == doctest::Approx(0.9 * m).epsilon(1e-15));
  CHECK(st.second_moment.at("w")[0] == doctest::Approx(0.999 * v).epsilon(1e-15));
}

TEST_CASE("adam: first step moves each entry by about lr in the gradient's sign") {
  facl::NamedTensors params{{"w", Tensor({4}, std::vector<double>{0.1, 0.2, 0.3, 0.4})}};
  const auto before = params;
  facl::AdamState st;
  const Tensor g({4}, std::vector<double>{2.0, -0.5, 1e-3, -7.0});
  facl::adam_step(params, {{"w", g}}, st, 0.01);
  for (int i = 0; i < 4; ++i) {
    const double step = params.at("w")[i] - before.at("w")[i];
    // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    CHECK(step == doctest::Approx(-0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
  }
}

TEST_CASE("adam: zero learning rate is the identity") {
  std::mt19937_64 rng(1);
  facl::NamedTensors params{{"a", oracle::random_tensor({2, 2}, rng)}};
  const auto before = params;
  facl::AdamState st;
  for (int i = 0; i < 3; ++i) facl::adam_step(params, {{"a", oracle::random_tensor({2, 2}, rng)}}, st, 0.0);
  CHECK(params == before);
}

TEST_CASE("adam: non-finite gradient is rejected without side effects") {
  facl::NamedTensors params{{"a", Tensor({2}, 1.0)}, {"b", Tensor({2}, 2.0)}};
  const auto before = params;
  facl::AdamState st;
  try {
    facl::adam_step(params, {{"a", Tensor({2}, 1.0)}, {"b", Tensor({2}, std::vector<double>{1, NAN})}}, st, 0.1);
    FAIL("expected NumericError");
  } catch (const facl::NumericError& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(params == before);
  CHECK(st.step == 0);
  CHECK_THROWS_AS(facl::adam_step(params, {{"zzz", Tensor({2})}}, st, 0.1), facl::ValidationError);
  CHECK_THROWS_AS(facl::adam_step(params, {{"a", Tensor({3})}}, st, 0.1), facl::ShapeError);
}
