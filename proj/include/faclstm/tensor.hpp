// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace facl {

// Dense row-major array of doubles with rank 1..4. Rank-4 tensors are laid
// out as (batch, channels, height, width).
class Tensor {
 public:
  using Dims = std::vector<int64_t>;

  Tensor();  // shape [1], value 0
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }

  const Dims& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  // NCHW accessors; only valid on rank-4 tensors.
  int64_t batch() const { return dims_.at(0); }
  int64_t channels() const { return dims_.at(1); }
  int64_t height() const { return dims_.at(2); }
  int64_t width() const { return dims_.at(3); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x)];
  }
  double at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(((n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x)];
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  std::string shape_str() const;

  // Same data, new extents; element count must match.
  Tensor reshaped(Dims dims) const;

  double item() const;  // requires exactly one element
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  std::vector<double> data_;
};

std::string dims_str(const Tensor::Dims& dims);

// ---------------------------------------------------------------------------
// Pure operations. All take and return values; none mutate their inputs.
// ---------------------------------------------------------------------------

// Same-padded 2-D convolution. kernel is (Cout, Cin, kh, kw) with odd kh, kw;
// bias is (Cout) or null. With stride s the output extent is ceil(H / s).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
              int stride = 1);
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int stride = 1) {
  return conv2d(input, kernel, &bias, stride);
}

// Gradients of conv2d. Any output pointer may be null to skip that term.
// Results are written (not accumulated).
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     int stride, Tensor* grad_input, Tensor* grad_kernel, Tensor* grad_bias);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

// Softmax over all H*W positions of a single-channel map, per batch item.
Tensor spatial_softmax(const Tensor& z);

// Softmax along the last axis of a (N, K) tensor.
Tensor softmax_rows(const Tensor& logits);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t count);

// Elementwise product. b may match a exactly, or have extent 1 on the batch
// and/or channel axis, in which case it is broadcast along that axis.
Tensor hadamard(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);

// x: (N, D) or any rank-4 tensor (flattened per batch item); w: (D, K); bias: (K).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor upsample_nearest2(const Tensor& x);

}  // namespace facl
