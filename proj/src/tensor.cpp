// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t product(const Tensor::Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), int64_t{1}, std::multiplies<>());
}

void check_dims(const Tensor::Dims& dims) {
  if (dims.empty() || dims.size() > 4) {
    throw ShapeError(fmt::format("tensor rank must be 1..4, got {}", dims.size()));
  }
  for (auto d : dims) {
    if (d < 1) throw ShapeError("tensor extents must be >= 1, got " + dims_str(dims));
  }
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(fmt::format("{}: expected (N,C,H,W), got {}", what, t.shape_str()));
  }
}

int64_t out_extent(int64_t in, int stride) { return (in + stride - 1) / stride; }

// Unfolds one sample (C, H, W) into a (C*kh*kw, Ho*Wo) patch matrix.
void im2col(const double* img, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int64_t ho, int64_t wo, double* cols) {
  const int64_t ph = kh / 2;
  const int64_t pw = kw / 2;
  int64_t row = 0;
  for (int64_t c = 0; c < c_in; ++c) {
    const double* plane = img + c * h * w;
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx, ++row) {
        double* dst = cols + row * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t y = oy * stride + dy - ph;
          if (y < 0 || y >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, 0.0);
            continue;
          }
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t x = ox * stride + dx - pw;
            dst[oy * wo + ox] = (x < 0 || x >= w) ? 0.0 : plane[y * w + x];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back onto the image.
void col2im(const double* cols, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int64_t ho, int64_t wo, double* img) {
  const int64_t ph = kh / 2;
  const int64_t pw = kw / 2;
  std::fill(img, img + c_in * h * w, 0.0);
  int64_t row = 0;
  for (int64_t c = 0; c < c_in; ++c) {
    double* plane = img + c * h * w;
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx, ++row) {
        const double* src = cols + row * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t y = oy * stride + dy - ph;
          if (y < 0 || y >= h) continue;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t x = ox * stride + dx - pw;
            if (x >= 0 && x < w) plane[y * w + x] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

void check_conv_args(const Tensor& input, const Tensor& kernel, const Tensor* bias, int stride) {
  require_rank4(input, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  if (input.channels() != kernel.dim(1)) {
    throw ShapeError(fmt::format("conv2d: input has {} channels but kernel expects {}",
                                 input.channels(), kernel.dim(1)));
  }
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + kernel.shape_str());
  }
  if (bias != nullptr && bias->numel() != kernel.dim(0)) {
    throw ShapeError(fmt::format("conv2d: bias has {} entries for {} output channels",
                                 bias->numel(), kernel.dim(0)));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.dims());
  auto src = x.data();
  auto dst = out.data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

std::string dims_str(const Tensor::Dims& dims) {
  std::string s = "(";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

Tensor::Tensor() : dims_{1}, data_(1, 0.0) {}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(static_cast<size_t>(product(dims_)), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (product(dims_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError(fmt::format("tensor {} needs {} values, got {}", dims_str(dims_),
                                 product(dims_), data_.size()));
  }
}

std::string Tensor::shape_str() const { return dims_str(dims_); }

Tensor Tensor::reshaped(Dims dims) const {
  check_dims(dims);
  if (product(dims) != numel()) {
    throw ShapeError("cannot reshape " + shape_str() + " to " + dims_str(dims));
  }
  return Tensor(std::move(dims), data_);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, int stride) {
  check_conv_args(input, kernel, bias, stride);
  const int64_t n = input.batch(), c_in = input.channels(), h = input.height(), w = input.width();
  const int64_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int64_t ho = out_extent(h, stride), wo = out_extent(w, stride);
  const int64_t patch = c_in * kh * kw;

  Tensor out({n, c_out, ho, wo});
  std::vector<double> cols(static_cast<size_t>(patch * ho * wo));
  CMapMat k(kernel.data().data(), c_out, patch);
  for (int64_t b = 0; b < n; ++b) {
    im2col(input.data().data() + b * c_in * h * w, c_in, h, w, kh, kw, stride, ho, wo, cols.data());
    CMapMat cm(cols.data(), patch, ho * wo);
    MapMat o(out.data().data() + b * c_out * ho * wo, c_out, ho * wo);
    o.noalias() = k * cm;
    if (bias != nullptr) {
      for (int64_t oc = 0; oc < c_out; ++oc) o.row(oc).array() += (*bias)[oc];
    }
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     int stride, Tensor* grad_input, Tensor* grad_kernel, Tensor* grad_bias) {
  check_conv_args(input, kernel, nullptr, stride);
  const int64_t n = input.batch(), c_in = input.channels(), h = input.height(), w = input.width();
  const int64_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int64_t ho = out_extent(h, stride), wo = out_extent(w, stride);
  const int64_t patch = c_in * kh * kw;
  if (grad_out.dims() != Tensor::Dims{n, c_out, ho, wo}) {
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape_str() + " does not match output " +
                     dims_str({n, c_out, ho, wo}));
  }

  if (grad_input) *grad_input = Tensor(input.dims());
  if (grad_kernel) *grad_kernel = Tensor(kernel.dims());
  if (grad_bias) *grad_bias = Tensor({c_out});

  std::vector<double> cols(static_cast<size_t>(patch * ho * wo));
  CMapMat k(kernel.data().data(), c_out, patch);
  for (int64_t b = 0; b < n; ++b) {
    CMapMat go(grad_out.data().data() + b * c_out * ho * wo, c_out, ho * wo);
    if (grad_kernel) {
      im2col(input.data().data() + b * c_in * h * w, c_in, h, w, kh, kw, stride, ho, wo, cols.data());
      CMapMat cm(cols.data(), patch, ho * wo);
      MapMat gk(grad_kernel->data().data(), c_out, patch);
      gk.noalias() += go * cm.transpose();
    }
    if (grad_bias) {
      for (int64_t oc = 0; oc < c_out; ++oc) (*grad_bias)[oc] += go.row(oc).sum();
    }
    if (grad_input) {
      MapMat gc(cols.data(), patch, ho * wo);
      gc.noalias() = k.transpose() * go;
      col2im(cols.data(), c_in, h, w, kh, kw, stride, ho, wo,
             grad_input->data().data() + b * c_in * h * w);
    }
  }
}

Tensor sigmoid(const Tensor& x) {
  return map(x, [](double v) {
    // Split on sign so exp never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor tanh(const Tensor& x) {
  return map(x, [](double v) { return std::tanh(v); });
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor spatial_softmax(const Tensor& z) {
  require_rank4(z, "spatial_softmax");
  if (z.channels() != 1) {
    throw ShapeError("spatial_softmax: expected a single channel, got " + z.shape_str());
  }
  Tensor out(z.dims());
  const int64_t plane = z.height() * z.width();
  for (int64_t b = 0; b < z.batch(); ++b) {
    const double* src = z.data().data() + b * plane;
    double* dst = out.data().data() + b * plane;
    const double mx = *std::max_element(src, src + plane);
    double total = 0.0;
    for (int64_t i = 0; i < plane; ++i) {
      dst[i] = std::exp(src[i] - mx);
      total += dst[i];
    }
    for (int64_t i = 0; i < plane; ++i) dst[i] /= total;
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected (N,K), got " + logits.shape_str());
  Tensor out(logits.dims());
  const int64_t k = logits.dim(1);
  for (int64_t r = 0; r < logits.dim(0); ++r) {
    const double* src = logits.data().data() + r * k;
    double* dst = out.data().data() + r * k;
    const double mx = *std::max_element(src, src + k);
    double total = 0.0;
    for (int64_t i = 0; i < k; ++i) {
      dst[i] = std::exp(src[i] - mx);
      total += dst[i];
    }
    for (int64_t i = 0; i < k; ++i) dst[i] /= total;
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: " + a.shape_str() + " and " + b.shape_str() +
                     " differ outside the channel axis");
  }
  const int64_t plane = a.height() * a.width();
  const int64_t ca = a.channels(), cb = b.channels();
  Tensor out({a.batch(), ca + cb, a.height(), a.width()});
  auto dst = out.data().begin();
  for (int64_t n = 0; n < a.batch(); ++n) {
    auto sa = a.data().begin() + n * ca * plane;
    dst = std::copy(sa, sa + ca * plane, dst);
    auto sb = b.data().begin() + n * cb * plane;
    dst = std::copy(sb, sb + cb * plane, dst);
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int64_t begin, int64_t count) {
  require_rank4(x, "slice_channels");
  if (begin < 0 || count < 1 || begin + count > x.channels()) {
    throw ShapeError(fmt::format("slice_channels: [{}, {}) out of range for {}", begin,
                                 begin + count, x.shape_str()));
  }
  const int64_t plane = x.height() * x.width();
  Tensor out({x.batch(), count, x.height(), x.width()});
  auto dst = out.data().begin();
  for (int64_t n = 0; n < x.batch(); ++n) {
    auto src = x.data().begin() + (n * x.channels() + begin) * plane;
    dst = std::copy(src, src + count * plane, dst);
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) {
    Tensor out(a.dims());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
  }
  bool ok = a.rank() == b.rank() && a.rank() >= 2;
  for (int i = 0; ok && i < a.rank(); ++i) {
    const bool broadcastable_axis = i < 2 && b.dim(i) == 1;
    ok = a.dim(i) == b.dim(i) || broadcastable_axis;
  }
  if (!ok) {
    throw ShapeError("hadamard: cannot broadcast " + b.shape_str() + " onto " + a.shape_str());
  }
  const int64_t outer = a.dim(0), mid = a.dim(1);
  const int64_t inner = a.numel() / (outer * mid);
  const bool bn = b.dim(0) == 1, bc = b.dim(1) == 1;
  Tensor out(a.dims());
  for (int64_t n = 0; n < outer; ++n) {
    for (int64_t c = 0; c < mid; ++c) {
      const int64_t ai = (n * mid + c) * inner;
      const int64_t bi = ((bn ? 0 : n) * b.dim(1) + (bc ? 0 : c)) * inner;
      for (int64_t i = 0; i < inner; ++i) out[ai + i] = a[ai + i] * b[bi + i];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.dims());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const int64_t rows = x.dim(0);
  const int64_t d = x.numel() / rows;
  if (w.rank() != 2 || w.dim(0) != d) {
    throw ShapeError(fmt::format("dense: input has {} features per row but weight is {}", d,
                                 w.shape_str()));
  }
  const int64_t k = w.dim(1);
  if (bias.numel() != k) {
    throw ShapeError(fmt::format("dense: bias has {} entries for {} outputs", bias.numel(), k));
  }
  Tensor out({rows, k});
  CMapMat xm(x.data().data(), rows, d);
  CMapMat wm(w.data().data(), d, k);
  MapMat om(out.data().data(), rows, k);
  om.noalias() = xm * wm;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < k; ++j) om(r, j) += bias[j];
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  require_rank4(x, "upsample_nearest2");
  const int64_t h = x.height(), w = x.width();
  Tensor out({x.batch(), x.channels(), 2 * h, 2 * w});
  for (int64_t n = 0; n < x.batch(); ++n) {
    for (int64_t c = 0; c < x.channels(); ++c) {
      for (int64_t y = 0; y < 2 * h; ++y) {
        for (int64_t xx = 0; xx < 2 * w; ++xx) out.at(n, c, y, xx) = x.at(n, c, y / 2, xx / 2);
      }
    }
  }
  return out;
}

}  // namespace facl
