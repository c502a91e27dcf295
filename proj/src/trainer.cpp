// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <random>
#include <thread>

#include "faclstm/errors.hpp"
#include "faclstm/objective.hpp"

namespace facl {

namespace {

constexpr const char* kAdamM = "adam.m.";
constexpr const char* kAdamV = "adam.v.";
constexpr const char* kStep = "train.step";

std::string truth_string(const std::string& text, int steps) {
  return CharsetCodec::decode_prediction(CharsetCodec::encode_target(text, steps));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(size_t n, int threads, F&& fn) {
  const size_t workers = std::min<size_t>(n, static_cast<size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Tensor stack_batch(std::span<const Tensor* const> items) {
  Tensor::Dims dims = items.front()->dims();
  dims[0] = static_cast<int64_t>(items.size());
  Tensor out(dims);
  auto dst = out.data().begin();
  for (const Tensor* t : items) dst = std::copy(t->data().begin(), t->data().end(), dst);
  return out;
}

// Stacks (T, 1, K) targets into (T, N, K).
Tensor stack_targets(std::span<const Tensor* const> items) {
  const int64_t steps = items.front()->dim(0), k = items.front()->dim(2);
  const int64_t n = static_cast<int64_t>(items.size());
  Tensor out({steps, n, k});
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t t = 0; t < steps; ++t) {
      std::copy_n(items[static_cast<size_t>(b)]->data().begin() + t * k, k, out.data().begin() + (t * n + b) * k);
    }
  }
  return out;
}

std::string group_of(const std::string& name) {
  for (const char* g : {"dec.feat", "dec.mask"}) {
    if (name.rfind(g, 0) == 0) return g;
  }
  return name.substr(0, name.find('.'));
}

}  // namespace

TrainState fresh_state(const Config& cfg) {
  cfg.validate();
  return {init_model(cfg.net, cfg.seed), {}};
}

NamedTensors state_to_named(const TrainState& s) {
  NamedTensors out = to_named(s.params);
  for (const auto& [name, t] : s.adam.first_moment) out.emplace(kAdamM + name, t);
  for (const auto& [name, t] : s.adam.second_moment) out.emplace(kAdamV + name, t);
  out.emplace(kStep, Tensor::scalar(static_cast<double>(s.adam.step)));
  return out;
}

TrainState state_from_named(const NamedTensors& named, const Config& cfg) {
  TrainState s;
  s.params = from_named(named, cfg.net);
  const NamedTensors expected = to_named(s.params);
  for (const auto& [name, t] : named) {
    const bool is_m = name.rfind(kAdamM, 0) == 0;
    const bool is_v = name.rfind(kAdamV, 0) == 0;
    if (!is_m && !is_v) continue;
    const std::string param = name.substr(is_m ? std::string_view(kAdamM).size() : std::string_view(kAdamV).size());
    auto it = expected.find(param);
    if (it == expected.end() || !it->second.same_shape(t)) {
      throw ShapeError("optimizer state " + name + " " + t.shape_str() + " does not match the model");
    }
    (is_m ? s.adam.first_moment : s.adam.second_moment).emplace(param, t);
  }
  if (auto it = named.find(kStep); it != named.end()) {
    s.adam.step = static_cast<int64_t>(it->second.item());
  }
  return s;
}

PreparedSample prepare(const Sample& s, const Config& cfg) {
  const auto& net = cfg.net;
  if (s.image.dims() != Tensor::Dims{1, 1, net.image_height, net.image_width}) {
    throw ShapeError(fmt::format("sample \"{}\" image {} does not match configured {}x{}", s.text,
                                 s.image.shape_str(), net.image_height, net.image_width));
  }
  PreparedSample p;
  p.image = s.image;
  const auto seq = CharsetCodec::encode_target(s.text, net.steps);
  const std::vector<std::vector<int>> one{seq};
  p.targets = smoothed_targets(one, cfg.epsilon);
  p.mask = rasterize_masks(s.boxes, net.image_height, net.image_width, cfg.shrink_ratio).mask;
  p.truth = truth_string(s.text, net.steps);
  return p;
}

BatchGradient batch_gradient(const ModelParams& params, std::span<const PreparedSample* const> batch,
                             const Config& cfg) {
  if (batch.empty()) throw ValidationError("empty batch");
  struct PerSample {
    ag::Gradients grads;
    double ls = 0, lm = 0, l = 0;
    bool correct = false;
    int64_t floor_hits = 0;
  };
  std::vector<PerSample> results(batch.size());
  parallel_for(batch.size(), cfg.threads, [&](size_t i) {
    const PreparedSample& s = *batch[i];
    ag::Tape tape;
    BoundModel m = bind_model(tape, params, true);
    ForwardVars f = forward(m, tape.constant(s.image), cfg.net);
    PerSample& r = results[i];
    LossVars loss = training_loss(f, s.targets, s.mask, cfg.lambda, &r.floor_hits);
    r.ls = loss.sequence.value().item();
    r.lm = loss.mask.valid() ? loss.mask.value().item() : 0.0;
    r.l = loss.total.value().item();
    std::vector<int> pred;
    for (const auto& z : f.logits) {
      const auto& row = z.value().data();
      pred.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    r.correct = CharsetCodec::decode_prediction(pred) == s.truth;
    r.grads = tape.backward(loss.total);
  });

  BatchGradient out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& r : results) {
    for (const auto& [name, g] : r.grads) {
      auto [it, inserted] = out.grads.try_emplace(name, g.dims());
      Tensor& acc = it->second;
      for (int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
    out.metrics.sequence_loss += r.ls * inv;
    out.metrics.mask_loss += r.lm * inv;
    out.metrics.loss += r.l * inv;
    out.metrics.sequence_accuracy += (r.correct ? 1.0 : 0.0) * inv;
    out.floor_hits += r.floor_hits;
  }
  for (auto& [name, g] : out.grads) {
    for (auto& v : g.data()) v *= inv;
  }
  return out;
}

std::vector<size_t> batch_indices(const Config& cfg, size_t dataset_size, int64_t step) {
  if (dataset_size == 0) throw ValidationError("dataset is empty");
  const size_t b = static_cast<size_t>(cfg.batch_size);
  const int64_t per_epoch = static_cast<int64_t>((dataset_size + b - 1) / b);
  const int64_t epoch = step / per_epoch;
  const size_t pos = static_cast<size_t>(step % per_epoch);
  std::vector<size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(sample_seed(cfg.seed ^ 0x5EED5EED5EED5EEDULL, static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t begin = pos * b;
  const size_t end = std::min(dataset_size, begin + b);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

void train(const Config& cfg, std::span<const Sample> data, TrainState& state, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw ValidationError("cannot train on an empty dataset");
  std::vector<PreparedSample> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data) prepared.push_back(prepare(s, cfg));

  const int64_t per_epoch = static_cast<int64_t>((data.size() + static_cast<size_t>(cfg.batch_size) - 1) /
                                                 static_cast<size_t>(cfg.batch_size));
  const int64_t total = cfg.total_steps();
  for (int64_t step = state.adam.step; step < total; ++step) {
    std::vector<const PreparedSample*> batch;
    for (size_t i : batch_indices(cfg, data.size(), step)) batch.push_back(&prepared[i]);
    BatchGradient bg;
    try {
      bg = batch_gradient(state.params, batch, cfg);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("step {}: {}", step + 1, e.what()));
    }
    const StepMetrics& m = bg.metrics;
    if (!std::isfinite(m.loss)) {
      throw NumericError(fmt::format("step {}: non-finite loss (Ls={}, Lm={}, L={})", step + 1, m.sequence_loss,
                                     m.mask_loss, m.loss));
    }
    NamedTensors named = to_named(state.params);
    try {
      adam_step(named, bg.grads, state.adam, cfg.lr_at(step), cfg.adam);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("step {} (Ls={}, Lm={}, L={}): {}", step + 1, m.sequence_loss, m.mask_loss,
                                     m.loss, e.what()));
    }
    state.params = from_named(named, cfg.net);
    bg.metrics.step = step + 1;
    if (hooks.on_step) hooks.on_step(bg.metrics);
    if (hooks.on_epoch && (step + 1) % per_epoch == 0) hooks.on_epoch((step + 1) / per_epoch, state);
  }
}

EvalReport evaluate(const ModelParams& params, const Config& cfg, std::span<const Sample> data) {
  if (data.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  EvalReport rep;
  int64_t chars = 0, chars_ok = 0, seq_ok = 0;
  const size_t chunk = static_cast<size_t>(cfg.batch_size);
  for (size_t begin = 0; begin < data.size(); begin += chunk) {
    const size_t end = std::min(data.size(), begin + chunk);
    std::vector<const Tensor*> images;
    for (size_t i = begin; i < end; ++i) {
      if (data[i].image.dims() != Tensor::Dims{1, 1, cfg.net.image_height, cfg.net.image_width}) {
        throw ShapeError(fmt::format("sample {} image {} does not match configured {}x{}", i,
                                     data[i].image.shape_str(), cfg.net.image_height, cfg.net.image_width));
      }
      images.push_back(&data[i].image);
    }
    const ForwardResult r = forward(params, stack_batch(images), cfg.net);
    for (size_t i = begin; i < end; ++i) {
      const auto pred = argmax_indices(r.probs, static_cast<int64_t>(i - begin));
      const auto target = CharsetCodec::encode_target(data[i].text, cfg.net.steps);
      const std::string decoded = CharsetCodec::decode_prediction(pred);
      rep.predictions.push_back(decoded);
      if (decoded == truth_string(data[i].text, cfg.net.steps)) ++seq_ok;
      for (size_t k = 1; k <= data[i].text.size(); ++k) {
        ++chars;
        if (pred[k] == target[k]) ++chars_ok;
      }
    }
  }
  rep.count = static_cast<int64_t>(data.size());
  rep.sequence_accuracy = static_cast<double>(seq_ok) / static_cast<double>(rep.count);
  rep.char_accuracy = chars == 0 ? 1.0 : static_cast<double>(chars_ok) / static_cast<double>(chars);
  return rep;
}

std::string recognize(const ModelParams& params, const Config& cfg, const Tensor& image) {
  const ForwardResult r = forward(params, image, cfg.net);
  return CharsetCodec::decode_prediction(argmax_indices(r.probs, 0));
}

bool GradcheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [](const GradGroup& g) { return g.passed(); });
}

namespace {

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
}

// Indices to probe in a tensor of n entries.
std::vector<int64_t> probe_indices(int64_t n, int64_t max_entries, std::mt19937_64& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  if (max_entries > 0 && n > max_entries) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(max_entries));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

// Central difference at step h; entries that miss the tolerance are retried
// at h/10 and h/100, which keeps a ReLU kink near the probe point out of the
// stencil.
void check_tensor(GradGroup& group, const std::string& name, Tensor& param, const Tensor& analytic,
                  const GradcheckOptions& opts, std::mt19937_64& rng, const std::function<double()>& loss) {
  auto central = [&](int64_t i, double h) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    return (up - down) / (2.0 * h);
  };
  for (int64_t i : probe_indices(param.numel(), opts.max_entries, rng)) {
    double numeric = central(i, opts.step);
    double err = rel_error(analytic[i], numeric);
    double h = opts.step;
    for (int retry = 0; retry < 2 && err >= group.tolerance; ++retry) {
      if (retry == 0) ++group.retried;
      h /= 10.0;
      const double n2 = central(i, h);
      if (const double e2 = rel_error(analytic[i], n2); e2 < err) {
        err = e2;
        numeric = n2;
      }
    }
    if (err > group.max_rel_error) {
      group.max_rel_error = err;
      group.worst = fmt::format("{}[{}] analytic {:.6e} numeric {:.6e}", name, i, analytic[i], numeric);
    }
    ++group.checked;
  }
}

GradGroup check_cell_unroll(uint64_t seed, const GradcheckOptions& opts) {
  std::mt19937_64 rng(sample_seed(seed, 7));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const AttnCellShape shape{3, 4, 4, 4, 3};
  AttnConvLstmParams p = init_attn_cell(shape, rng);
  // Nonzero biases so every bias term is exercised.
  AttnConvLstmParams::fields(p, [&](const char* name, Tensor& t) {
    if (std::string_view(name).starts_with("bias")) {
      for (auto& v : t.data()) v = 0.5 * u(rng);
    }
  });
  Tensor x({1, 3, 4, 6});
  for (auto& v : x.data()) v = u(rng);
  constexpr int kSteps = 3;
  std::vector<Tensor> probes;
  for (int t = 0; t < kSteps; ++t) {
    Tensor r({1, 4, 4, 6});
    for (auto& v : r.data()) v = u(rng);
    probes.push_back(r);
  }
  auto build_loss = [&](ag::Tape& tape, const AttnConvLstmWeights<ag::Var>& w) {
    UnrollVars out = unroll(w, tape.constant(x), kSteps);
    ag::Var total;
    for (int t = 0; t < kSteps; ++t) {
      ag::Var term = ag::sum(ag::hadamard(out.states[static_cast<size_t>(t)].h, tape.constant(probes[static_cast<size_t>(t)])));
      total = total.valid() ? ag::add(total, term) : term;
    }
    return total;
  };
  ag::Tape tape;
  tape.set_corrupt_backward(opts.corrupt_backward);
  const auto grads = tape.backward(build_loss(tape, bind<AttnConvLstmWeights>(tape, p, "", true)));
  auto loss = [&] {
    ag::Tape t;
    return build_loss(t, bind<AttnConvLstmWeights>(t, p, "", false)).value().item();
  };
  GradGroup g;
  g.name = "cell.unroll";
  g.tolerance = opts.cell_tolerance;
  AttnConvLstmParams::fields(p, [&](const char* name, Tensor& t) {
    check_tensor(g, std::string("cell.") + name, t, grads.at(name), opts, rng, loss);
  });
  return g;
}

}  // namespace

GradcheckReport gradcheck(const Config& cfg, uint64_t seed, const GradcheckOptions& opts) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ModelParams params = init_model(cfg.net, seed);
  // Nonzero biases, so their gradients are not trivially checked at zero.
  std::mt19937_64 rng(sample_seed(seed, 1));
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  NamedTensors named = to_named(params);
  for (auto& [name, t] : named) {
    if (t.rank() == 1 && name != "cell.bias_f2") {
      for (auto& v : t.data()) v = u(rng);
    }
  }
  params = from_named(named, cfg.net);

  DatasetSpec spec = cfg.dataset_spec(sample_seed(seed, 2));
  spec.count = 2;
  spec.max_length = std::min(spec.max_length, cfg.net.steps - 2);
  spec.min_length = std::min(spec.min_length, spec.max_length);
  const auto samples = generate_samples(spec);
  std::vector<PreparedSample> prepared;
  for (const auto& s : samples) prepared.push_back(prepare(s, cfg));
  std::vector<const Tensor*> images, targets, masks;
  for (const auto& p : prepared) {
    images.push_back(&p.image);
    targets.push_back(&p.targets);
    masks.push_back(&p.mask);
  }
  const Tensor image = stack_batch(images);
  const Tensor target = stack_targets(targets);
  const Tensor mask = stack_batch(masks);

  ag::Tape tape;
  tape.set_corrupt_backward(opts.corrupt_backward);
  ForwardVars f = forward(bind_model(tape, params, true), tape.constant(image), cfg.net);
  const auto grads = tape.backward(training_loss(f, target, mask, cfg.lambda).total);

  auto loss = [&] {
    ag::Tape t;
    ForwardVars fv = forward(bind_model(t, params, false), t.constant(image), cfg.net);
    return training_loss(fv, target, mask, cfg.lambda).total.value().item();
  };

  GradcheckReport rep;
  std::map<std::string, size_t> group_index;
  auto group = [&](const std::string& name) -> GradGroup& {
    const std::string g = group_of(name);
    auto [it, inserted] = group_index.try_emplace(g, rep.groups.size());
    if (inserted) {
      rep.groups.emplace_back();
      rep.groups.back().name = g;
      rep.groups.back().tolerance = g == "cell" ? opts.cell_tolerance : opts.tolerance;
    }
    return rep.groups[it->second];
  };
  // Perturb tensors in place through a view that loss() sees.
  auto visit = [&](auto& weights, const std::string& prefix) {
    using W = std::remove_cvref_t<decltype(weights)>;
    W::fields(weights, [&](const char* field, Tensor& t) {
      const std::string name = prefix + field;
      check_tensor(group(name), name, t, grads.at(name), opts, rng, loss);
    });
  };
  visit(params.enc, "enc.");
  visit(params.feat, "dec.feat.");
  if (params.mask) visit(*params.mask, "dec.mask.");
  visit(params.cell, "cell.");
  visit(params.head, "head.");

  rep.groups.push_back(check_cell_unroll(seed, opts));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

VisualizeResult visualize(const ModelParams& params, const Config& cfg, const Tensor& image,
                          const std::filesystem::path& out_dir) {
  if (image.dims() != Tensor::Dims{1, 1, cfg.net.image_height, cfg.net.image_width}) {
    throw ShapeError(fmt::format("image {} does not match configured {}x{}", image.shape_str(),
                                 cfg.net.image_height, cfg.net.image_width));
  }
  const ForwardResult r = forward(params, image, cfg.net);
  std::filesystem::create_directories(out_dir);
  VisualizeResult out;
  if (r.mask) {
    out.files.push_back(out_dir / "mask.pgm");
    write_pgm_normalized(out.files.back(), *r.mask);
  }
  for (size_t t = 0; t < r.traces.size(); ++t) {
    out.files.push_back(out_dir / fmt::format("attn_{:02d}.pgm", t + 1));
    write_pgm_normalized(out.files.back(), r.traces[t].attn);
  }
  out.decoded = CharsetCodec::decode_prediction(argmax_indices(r.probs, 0));
  return out;
}

}  // namespace facl
