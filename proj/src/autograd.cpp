// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "faclstm/errors.hpp"

namespace facl::ag {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(const std::string& name, Tensor value) {
  for (int id : parameters_) {
    if (nodes_[static_cast<size_t>(id)].name == name) {
      throw ValidationError("parameter registered twice: " + name);
    }
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.name = name;
  Var v = push(std::move(n));
  parameters_.push_back(v.id_);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by a recorded op with output " + value.shape_str());
  }
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ValidationError("op mixes variables from different tapes");
    if (requires_grad(in)) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::accumulate(Var v, const Tensor& grad) {
  Node& n = nodes_[static_cast<size_t>(v.id_)];
  if (!n.requires_grad) return;
  if (!grad.same_shape(n.value)) {
    throw ShapeError("gradient " + grad.shape_str() + " does not match value " + n.value.shape_str());
  }
  if (!n.has_grad) {
    n.grad = grad;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = grad.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Gradients Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ValidationError("loss belongs to a different tape");
  if (value(loss).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + value(loss).shape_str());
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  accumulate(loss, Tensor(value(loss).dims(), 1.0));
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad, n.value);
  }
  Gradients out;
  for (int id : parameters_) {
    Node& n = nodes_[static_cast<size_t>(id)];
    out.emplace(n.name, n.has_grad ? n.grad : Tensor(n.value.dims()));
  }
  return out;
}

namespace {

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.dims());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// Sums g over the leading axes where `target` has extent 1 and g does not.
Tensor reduce_to(const Tensor& g, const Tensor::Dims& target) {
  if (g.dims() == target) return g;
  const int64_t outer = g.dim(0), mid = g.dim(1);
  const int64_t inner = g.numel() / (outer * mid);
  const bool bn = target[0] == 1, bc = target[1] == 1;
  Tensor out(target);
  for (int64_t n = 0; n < outer; ++n) {
    for (int64_t c = 0; c < mid; ++c) {
      const int64_t gi = (n * mid + c) * inner;
      const int64_t oi = ((bn ? 0 : n) * target[1] + (bc ? 0 : c)) * inner;
      for (int64_t i = 0; i < inner; ++i) out[oi + i] += g[gi + i];
    }
  }
  return out;
}

Var conv_impl(Var x, Var k, const Var* b, int stride) {
  Tensor out = facl::conv2d(x.value(), k.value(), b ? &b->value() : nullptr, stride);
  Var bias = b ? *b : Var();
  auto fn = [x, k, bias, stride](Tape& tape, const Tensor& g, const Tensor&) {
    const bool need_x = tape.requires_grad(x);
    const bool need_k = tape.requires_grad(k);
    const bool need_b = bias.valid() && tape.requires_grad(bias);
    Tensor gx, gk, gb;
    facl::conv2d_backward(x.value(), k.value(), g, stride, need_x ? &gx : nullptr,
                          need_k ? &gk : nullptr, need_b ? &gb : nullptr);
    if (need_x) tape.accumulate(x, gx);
    if (need_k) {
      if (tape.corrupt_backward()) {
        for (auto& v : gk.data()) v *= 1.05;
      }
      tape.accumulate(k, gk);
    }
    if (need_b) tape.accumulate(bias, gb);
  };
  if (b) return x.tape().record(std::move(out), {x, k, *b}, fn);
  return x.tape().record(std::move(out), {x, k}, fn);
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, int stride) { return conv_impl(x, kernel, &bias, stride); }

Var conv2d(Var x, Var kernel, int stride) { return conv_impl(x, kernel, nullptr, stride); }

Var add(Var a, Var b) {
  return a.tape().record(facl::add(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Tensor& g, const Tensor&) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

Var add_channel_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || bias.value().numel() != xv.channels()) {
    throw ShapeError("add_channel_bias: bias " + bias.value().shape_str() + " for " + xv.shape_str());
  }
  const int64_t plane = xv.height() * xv.width();
  Tensor out = xv;
  for (int64_t n = 0; n < xv.batch(); ++n) {
    for (int64_t c = 0; c < xv.channels(); ++c) {
      double* p = out.data().data() + (n * xv.channels() + c) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] += bias.value()[c];
    }
  }
  return x.tape().record(std::move(out), {x, bias},
                         [x, bias, plane](Tape& t, const Tensor& g, const Tensor&) {
                           t.accumulate(x, g);
                           if (!t.requires_grad(bias)) return;
                           const int64_t channels = g.dim(1);
                           Tensor gb(bias.value().dims());
                           for (int64_t n = 0; n < g.dim(0); ++n) {
                             for (int64_t c = 0; c < channels; ++c) {
                               const double* p = g.data().data() + (n * channels + c) * plane;
                               for (int64_t i = 0; i < plane; ++i) gb[c] += p[i];
                             }
                           }
                           t.accumulate(bias, gb);
                         });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gx = g;
    for (auto& v : gx.data()) v *= factor;
    t.accumulate(x, gx);
  });
}

Var hadamard(Var a, Var b) {
  return a.tape().record(facl::hadamard(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Tensor& g, const Tensor&) {
                           if (t.requires_grad(a)) t.accumulate(a, facl::hadamard(g, b.value()));
                           if (t.requires_grad(b)) {
                             t.accumulate(b, reduce_to(facl::hadamard(g, a.value()), b.value().dims()));
                           }
                         });
}

Var sigmoid(Var x) {
  return x.tape().record(facl::sigmoid(x.value()), {x},
                         [x](Tape& t, const Tensor& g, const Tensor& y) {
                           Tensor d = zip(g, y, [](double gi, double yi) { return gi * yi * (1.0 - yi); });
                           t.accumulate(x, d);
                         });
}

Var tanh(Var x) {
  return x.tape().record(facl::tanh(x.value()), {x}, [x](Tape& t, const Tensor& g, const Tensor& y) {
    t.accumulate(x, zip(g, y, [](double gi, double yi) { return gi * (1.0 - yi * yi); }));
  });
}

Var relu(Var x) {
  return x.tape().record(facl::relu(x.value()), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, zip(g, x.value(), [](double gi, double xi) { return xi > 0.0 ? gi : 0.0; }));
  });
}

Var spatial_softmax(Var z) {
  return z.tape().record(facl::spatial_softmax(z.value()), {z},
                         [z](Tape& t, const Tensor& g, const Tensor& y) {
                           const int64_t plane = y.height() * y.width();
                           Tensor gz(y.dims());
                           for (int64_t n = 0; n < y.batch(); ++n) {
                             const int64_t off = n * plane;
                             double dot = 0.0;
                             for (int64_t i = 0; i < plane; ++i) dot += g[off + i] * y[off + i];
                             for (int64_t i = 0; i < plane; ++i) gz[off + i] = y[off + i] * (g[off + i] - dot);
                           }
                           t.accumulate(z, gz);
                         });
}

Var concat_channels(Var a, Var b) {
  const int64_t ca = a.value().channels(), cb = b.value().channels();
  return a.tape().record(facl::concat_channels(a.value(), b.value()), {a, b},
                         [a, b, ca, cb](Tape& t, const Tensor& g, const Tensor&) {
                           if (t.requires_grad(a)) t.accumulate(a, facl::slice_channels(g, 0, ca));
                           if (t.requires_grad(b)) t.accumulate(b, facl::slice_channels(g, ca, cb));
                         });
}

Var slice_channels(Var x, int64_t begin, int64_t count) {
  return x.tape().record(facl::slice_channels(x.value(), begin, count), {x},
                         [x, begin, count](Tape& t, const Tensor& g, const Tensor&) {
                           const Tensor& xv = x.value();
                           const int64_t plane = xv.height() * xv.width();
                           Tensor gx(xv.dims());
                           for (int64_t n = 0; n < xv.batch(); ++n) {
                             std::copy_n(g.data().begin() + n * count * plane, count * plane,
                                         gx.data().begin() + (n * xv.channels() + begin) * plane);
                           }
                           t.accumulate(x, gx);
                         });
}

Var upsample_nearest2(Var x) {
  return x.tape().record(facl::upsample_nearest2(x.value()), {x},
                         [x](Tape& t, const Tensor& g, const Tensor&) {
                           Tensor gx(x.value().dims());
                           for (int64_t n = 0; n < g.batch(); ++n) {
                             for (int64_t c = 0; c < g.channels(); ++c) {
                               for (int64_t y = 0; y < g.height(); ++y) {
                                 for (int64_t xx = 0; xx < g.width(); ++xx) {
                                   gx.at(n, c, y / 2, xx / 2) += g.at(n, c, y, xx);
                                 }
                               }
                             }
                           }
                           t.accumulate(x, gx);
                         });
}

Var flatten(Var x) {
  const Tensor& xv = x.value();
  const int64_t rows = xv.dim(0);
  return x.tape().record(xv.reshaped({rows, xv.numel() / rows}), {x},
                         [x](Tape& t, const Tensor& g, const Tensor&) {
                           t.accumulate(x, g.reshaped(x.value().dims()));
                         });
}

Var dense(Var x, Var w, Var bias) {
  return x.tape().record(
      facl::dense(x.value(), w.value(), bias.value()), {x, w, bias},
      [x, w, bias](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& xv = x.value();
        const Tensor& wv = w.value();
        const int64_t rows = xv.dim(0), d = wv.dim(0), k = wv.dim(1);
        if (t.requires_grad(x)) {
          Tensor gx(xv.dims());
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t i = 0; i < d; ++i) {
              double acc = 0.0;
              for (int64_t j = 0; j < k; ++j) acc += g[r * k + j] * wv[i * k + j];
              gx[r * d + i] = acc;
            }
          }
          t.accumulate(x, gx);
        }
        if (t.requires_grad(w)) {
          Tensor gw(wv.dims());
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t i = 0; i < d; ++i) {
              const double xi = xv[r * d + i];
              if (xi == 0.0) continue;
              for (int64_t j = 0; j < k; ++j) gw[i * k + j] += xi * g[r * k + j];
            }
          }
          t.accumulate(w, gw);
        }
        if (t.requires_grad(bias)) {
          Tensor gb(bias.value().dims());
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < k; ++j) gb[j] += g[r * k + j];
          }
          t.accumulate(bias, gb);
        }
      });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, Tensor(x.value().dims(), g[0]));
  });
}

Var softmax_cross_entropy(Var logits, const Tensor& targets, int64_t* floor_hits) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || !z.same_shape(targets)) {
    throw ShapeError("softmax_cross_entropy: logits " + z.shape_str() + " vs targets " +
                     targets.shape_str());
  }
  const double log_floor = std::log(1e-12);
  const int64_t rows = z.dim(0), k = z.dim(1);
  Tensor probs = softmax_rows(z);
  // clamped[i] marks log-probabilities replaced by the floor
  std::vector<char> clamped(static_cast<size_t>(z.numel()), 0);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* zr = z.data().data() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (int64_t j = 0; j < k; ++j) total += std::exp(zr[j] - mx);
    const double lse = mx + std::log(total);
    for (int64_t j = 0; j < k; ++j) {
      double lp = zr[j] - lse;
      if (lp < log_floor) {
        lp = log_floor;
        clamped[static_cast<size_t>(r * k + j)] = 1;
        if (floor_hits && targets[r * k + j] > 0.0) ++*floor_hits;
      }
      loss -= targets[r * k + j] * lp;
    }
  }
  loss /= static_cast<double>(rows);
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [logits, targets, probs = std::move(probs), clamped = std::move(clamped), rows,
       k](Tape& t, const Tensor& g, const Tensor&) {
        Tensor gz(probs.dims());
        const double s = g[0] / static_cast<double>(rows);
        for (int64_t r = 0; r < rows; ++r) {
          double live_mass = 0.0;
          for (int64_t j = 0; j < k; ++j) {
            if (!clamped[static_cast<size_t>(r * k + j)]) live_mass += targets[r * k + j];
          }
          for (int64_t j = 0; j < k; ++j) {
            const int64_t i = r * k + j;
            const double own = clamped[static_cast<size_t>(i)] ? 0.0 : targets[i];
            gz[i] = s * (probs[i] * live_mass - own);
          }
        }
        t.accumulate(logits, gz);
      });
}

Var dice_mask_loss(const Tensor& truth, Var pred) {
  const Tensor& p = pred.value();
  if (!truth.same_shape(p)) {
    throw ShapeError("dice_mask_loss: truth " + truth.shape_str() + " vs prediction " + p.shape_str());
  }
  const int64_t batch = p.dim(0);
  const int64_t per = p.numel() / batch;
  std::vector<double> inter(static_cast<size_t>(batch)), denom(static_cast<size_t>(batch));
  double loss = 0.0;
  for (int64_t n = 0; n < batch; ++n) {
    double i_sum = 0.0, m_sum = 0.0, p_sum = 0.0;
    for (int64_t i = n * per; i < (n + 1) * per; ++i) {
      i_sum += truth[i] * p[i];
      m_sum += truth[i];
      p_sum += p[i];
    }
    inter[static_cast<size_t>(n)] = i_sum;
    // two empty masks agree perfectly
    denom[static_cast<size_t>(n)] = m_sum + p_sum;
    if (m_sum + p_sum > 0.0) loss += 0.01 * (1.0 - 2.0 * i_sum / (m_sum + p_sum));
  }
  loss /= static_cast<double>(batch);
  return pred.tape().record(
      Tensor::scalar(loss), {pred},
      [pred, truth, inter = std::move(inter), denom = std::move(denom), batch, per](
          Tape& t, const Tensor& g, const Tensor&) {
        Tensor gp(pred.value().dims());
        const double s = g[0] / static_cast<double>(batch);
        for (int64_t n = 0; n < batch; ++n) {
          const double I = inter[static_cast<size_t>(n)];
          const double S = denom[static_cast<size_t>(n)];
          if (S == 0.0) continue;
          for (int64_t i = n * per; i < (n + 1) * per; ++i) {
            gp[i] = s * -0.02 * (truth[i] * S - I) / (S * S);
          }
        }
        t.accumulate(pred, gp);
      });
}

}  // namespace facl::ag
