#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "memnav/autodiff/tensor.hpp"

namespace memnav::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

inline MatrixMap as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(const Buffer& v, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

enum class LayerKind { kLinear, kConv1d, kReLU, kLayerNorm, kMultiHeadAttention, kSoftmax, kSigmoid, kEmbedding, kDropout };

struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0;        // Linear/LayerNorm width, Conv1d in-channels, attention query dim
  std::size_t out = 0;       // Linear out, Conv1d out-channels, attention memory dim, Embedding dim
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t heads = 1;
  std::size_t count = 0;     // Embedding rows
  double p = 0.0;            // Dropout rate

  static LayerSpec linear(std::size_t in, std::size_t out) { return {LayerKind::kLinear, in, out}; }
  static LayerSpec conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
                          std::size_t pad) {
    return {LayerKind::kConv1d, in_ch, out_ch, k, stride, pad};
  }
  static LayerSpec relu() { return {LayerKind::kReLU}; }
  static LayerSpec sigmoid() { return {LayerKind::kSigmoid}; }
  static LayerSpec softmax() { return {LayerKind::kSoftmax}; }
  static LayerSpec layer_norm(std::size_t dim) { return {LayerKind::kLayerNorm, dim}; }
  static LayerSpec dropout(double p) {
    LayerSpec s{LayerKind::kDropout};
    s.p = p;
    return s;
  }
  static LayerSpec attention(std::size_t dim, std::size_t memory_dim, std::size_t heads) {
    LayerSpec s{LayerKind::kMultiHeadAttention, dim, memory_dim};
    s.heads = heads;
    return s;
  }
  static LayerSpec embedding(std::size_t count, std::size_t dim) {
    LayerSpec s{LayerKind::kEmbedding, 0, dim};
    s.count = count;
    return s;
  }

  void validate() const {
    switch (kind) {
      case LayerKind::kLinear:
      case LayerKind::kConv1d:
        if (in == 0 || out == 0 || (kind == LayerKind::kConv1d && (kernel == 0 || stride == 0)))
          throw ShapeMismatch("layer dimensions must be positive");
        break;
      case LayerKind::kLayerNorm:
        if (in == 0) throw ShapeMismatch("layer norm width must be positive");
        break;
      case LayerKind::kMultiHeadAttention:
        if (in == 0 || out == 0 || heads == 0 || in % heads != 0)
          throw ShapeMismatch("attention dim must be positive and divisible by head count");
        break;
      case LayerKind::kEmbedding:
        if (count == 0 || out == 0) throw ShapeMismatch("embedding table must be non-empty");
        break;
      case LayerKind::kDropout:
        if (p < 0.0 || p >= 1.0) throw ShapeMismatch("dropout rate must be in [0,1)");
        break;
      default: break;
    }
  }
};

// Single-input layer operating on a leading batch dimension. forward() keeps
// the input for one backward(); infer() is the const, cache-free path.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor infer(const Tensor& x) const = 0;

  virtual Tensor forward(const Tensor& x) {
    Tensor y = infer(x);
    input_ = x;
    has_input_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) {
    if (!has_input_) throw NoForwardPass(kind_name() + ": backward without a preceding forward");
    has_input_ = false;
    return backward_impl(input_, dy);
  }

  virtual void collect(ParameterList&) {}
  virtual std::string kind_name() const = 0;

 protected:
  virtual Tensor backward_impl(const Tensor& x, const Tensor& dy) = 0;

  static void expect_same(const Tensor& a, const Tensor& b, const std::string& what) {
    if (a.shape != b.shape) {
      throw ShapeMismatch(what + ": gradient shape " + shape_str(b.shape) + " vs " + shape_str(a.shape));
    }
  }

  Tensor input_;
  bool has_input_ = false;
};

class Linear : public Layer {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {
    weight_.init_he(in, rng);
    bias_.init_fan_in(in, rng);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

  // Accepts [B, ...] and flattens trailing dims.
  Tensor infer(const Tensor& x) const override {
    if (x.rank() < 2 || x.row_size() != in_) {
      throw ShapeMismatch("linear: expected [B," + std::to_string(in_) + "], got " + shape_str(x.shape));
    }
    const std::size_t batch = x.dim(0);
    Tensor y({batch, out_});
    auto X = as_matrix(x.values, batch, in_);
    auto W = as_matrix(weight_.value.values, out_, in_);
    auto Y = as_matrix(y.values, batch, out_);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += ConstVectorMap(bias_.value.data(), out_).transpose();
    return y;
  }

  void collect(ParameterList& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::string kind_name() const override { return "Linear"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    const std::size_t batch = x.dim(0);
    if (dy.shape != Shape{batch, out_}) throw ShapeMismatch("linear: bad upstream gradient " + shape_str(dy.shape));
    auto X = as_matrix(x.values, batch, in_);
    auto dY = as_matrix(dy.values, batch, out_);
    as_matrix(weight_.value.grad, out_, in_).noalias() += dY.transpose() * X;
    VectorMap(bias_.value.grad.data(), out_) += dY.colwise().sum().transpose();
    weight_.grad_populated = bias_.grad_populated = true;
    Tensor dx(x.shape);
    as_matrix(dx.values, batch, in_).noalias() = dY * as_matrix(weight_.value.values, out_, in_);
    return dx;
  }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
};

// 1-D convolution over [B, C, L] with zero padding.
class Conv1d : public Layer {
 public:
  Conv1d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(padding),
        weight_(name + ".weight", {out_ch, in_ch, kernel}), bias_(name + ".bias", {out_ch}) {
    weight_.init_he(in_ch * kernel, rng);
    bias_.init_fan_in(in_ch * kernel, rng);
  }

  std::size_t output_length(std::size_t length) const {
    if (length + 2 * pad_ < kernel_) throw ShapeMismatch("conv1d: input shorter than kernel");
    return (length + 2 * pad_ - kernel_) / stride_ + 1;
  }

  Tensor infer(const Tensor& x) const override {
    check_input(x);
    const std::size_t batch = x.dim(0), len = x.dim(2), out_len = output_length(len);
    const std::size_t patch = in_ch_ * kernel_, cols = batch * out_len;
    Buffer col = im2col(x, out_len);
    Buffer prod(out_ch_ * cols);
    as_matrix(prod, out_ch_, cols).noalias() =
        as_matrix(weight_.value.values, out_ch_, patch) * as_matrix(col, patch, cols);
    Tensor y({batch, out_ch_, out_len});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_ch_; ++o)
        for (std::size_t t = 0; t < out_len; ++t)
          y[(b * out_ch_ + o) * out_len + t] = prod[o * cols + b * out_len + t] + bias_.value[o];
    return y;
  }

  void collect(ParameterList& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::string kind_name() const override { return "Conv1d"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    const std::size_t batch = x.dim(0), len = x.dim(2), out_len = output_length(len);
    const std::size_t patch = in_ch_ * kernel_, cols = batch * out_len;
    if (dy.shape != Shape{batch, out_ch_, out_len}) throw ShapeMismatch("conv1d: bad upstream gradient");
    Buffer col = im2col(x, out_len);
    Buffer dprod(out_ch_ * cols);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_ch_; ++o)
        for (std::size_t t = 0; t < out_len; ++t) {
          const double g = dy[(b * out_ch_ + o) * out_len + t];
          dprod[o * cols + b * out_len + t] = g;
          bias_.value.grad[o] += g;
        }
    auto dP = as_matrix(dprod, out_ch_, cols);
    as_matrix(weight_.value.grad, out_ch_, patch).noalias() += dP * as_matrix(col, patch, cols).transpose();
    weight_.grad_populated = bias_.grad_populated = true;
    Buffer dcol(patch * cols);
    as_matrix(dcol, patch, cols).noalias() = as_matrix(weight_.value.values, out_ch_, patch).transpose() * dP;
    Tensor dx(x.shape);
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t k = 0; k < kernel_; ++k) {
        const std::size_t r = c * kernel_ + k;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < out_len; ++t) {
            const long pos = static_cast<long>(t * stride_ + k) - static_cast<long>(pad_);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            dx[(b * in_ch_ + c) * len + pos] += dcol[r * cols + b * out_len + t];
          }
      }
    return dx;
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != in_ch_) {
      throw ShapeMismatch("conv1d: expected [B," + std::to_string(in_ch_) + ",L], got " + shape_str(x.shape));
    }
  }

  // Patch matrix [C*K, B*L_out].
  Buffer im2col(const Tensor& x, std::size_t out_len) const {
    const std::size_t batch = x.dim(0), len = x.dim(2), cols = batch * out_len;
    Buffer col(in_ch_ * kernel_ * cols, 0.0);
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t k = 0; k < kernel_; ++k) {
        const std::size_t r = c * kernel_ + k;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < out_len; ++t) {
            const long pos = static_cast<long>(t * stride_ + k) - static_cast<long>(pad_);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            col[r * cols + b * out_len + t] = x[(b * in_ch_ + c) * len + pos];
          }
      }
    return col;
  }

  std::size_t in_ch_, out_ch_, kernel_, stride_, pad_;
  Parameter weight_, bias_;
};

class ReLU : public Layer {
 public:
  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    y.grad.clear();
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    return y;
  }
  std::string kind_name() const override { return "ReLU"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    expect_same(x, dy, "relu");
    Tensor dx(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return dx;
  }
};

class Sigmoid : public Layer {
 public:
  static double apply(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }
  Tensor infer(const Tensor& x) const override {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = apply(x[i]);
    return y;
  }
  std::string kind_name() const override { return "Sigmoid"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    expect_same(x, dy, "sigmoid");
    Tensor dx(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = apply(x[i]);
      dx[i] = dy[i] * s * (1.0 - s);
    }
    return dx;
  }
};

// Softmax over the last dimension.
class Softmax : public Layer {
 public:
  static void apply(std::span<const double> in, std::span<double> out) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : in) peak = std::max(peak, v);
    double total = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = std::exp(in[i] - peak);
      total += out[i];
    }
    for (double& v : out) v /= total;
  }

  Tensor infer(const Tensor& x) const override {
    if (x.rank() < 1) throw ShapeMismatch("softmax: scalar input");
    Tensor y(x.shape);
    const std::size_t width = x.shape.back();
    for (std::size_t r = 0; r < x.size() / width; ++r)
      apply({x.data() + r * width, width}, {y.data() + r * width, width});
    return y;
  }
  std::string kind_name() const override { return "Softmax"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    expect_same(x, dy, "softmax");
    Tensor y = infer(x);
    Tensor dx(x.shape);
    const std::size_t width = x.shape.back();
    for (std::size_t r = 0; r < x.size() / width; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += y[r * width + i] * dy[r * width + i];
      for (std::size_t i = 0; i < width; ++i)
        dx[r * width + i] = y[r * width + i] * (dy[r * width + i] - dot);
    }
    return dx;
  }
};

// Normalizes over the last dimension; zero-variance rows normalize to zeros.
class LayerNorm : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;

  LayerNorm(std::string name, std::size_t dim) : dim_(dim), gain_(name + ".gain", {dim}), shift_(name + ".shift", {dim}) {
    std::fill(gain_.value.values.begin(), gain_.value.values.end(), 1.0);
  }

  Tensor infer(const Tensor& x) const override {
    check(x);
    Tensor y(x.shape);
    const std::size_t rows = x.size() / dim_;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = x.data() + r * dim_;
      double mean = 0.0, var = 0.0;
      moments(in, mean, var);
      const double inv = 1.0 / std::sqrt(var + kEpsilon);
      for (std::size_t i = 0; i < dim_; ++i)
        y[r * dim_ + i] = gain_.value[i] * ((in[i] - mean) * inv) + shift_.value[i];
    }
    return y;
  }

  void collect(ParameterList& out) override {
    out.push_back(&gain_);
    out.push_back(&shift_);
  }
  std::string kind_name() const override { return "LayerNorm"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    expect_same(x, dy, "layer norm");
    Tensor dx(x.shape);
    const std::size_t rows = x.size() / dim_;
    Buffer xhat(dim_), dxhat(dim_);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = x.data() + r * dim_;
      const double* g = dy.data() + r * dim_;
      double mean = 0.0, var = 0.0;
      moments(in, mean, var);
      const double inv = 1.0 / std::sqrt(var + kEpsilon);
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        xhat[i] = (in[i] - mean) * inv;
        dxhat[i] = g[i] * gain_.value[i];
        gain_.value.grad[i] += g[i] * xhat[i];
        shift_.value.grad[i] += g[i];
        mean_d += dxhat[i];
        mean_dx += dxhat[i] * xhat[i];
      }
      mean_d /= static_cast<double>(dim_);
      mean_dx /= static_cast<double>(dim_);
      for (std::size_t i = 0; i < dim_; ++i) dx[r * dim_ + i] = inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
    gain_.grad_populated = shift_.grad_populated = true;
    return dx;
  }

 private:
  void check(const Tensor& x) const {
    if (x.rank() < 1 || x.shape.back() != dim_) {
      throw ShapeMismatch("layer norm: expected last dim " + std::to_string(dim_) + ", got " + shape_str(x.shape));
    }
  }
  void moments(const double* in, double& mean, double& var) const {
    mean = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) mean += in[i];
    mean /= static_cast<double>(dim_);
    var = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(dim_);
  }

  std::size_t dim_;
  Parameter gain_, shift_;
};

// Inverted dropout; identity unless training() is on.
class Dropout : public Layer {
 public:
  Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {}

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  double rate() const { return p_; }
  void set_rate(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must lie in [0,1)");
    p_ = p;
  }

  Tensor infer(const Tensor& x) const override { return x; }

  Tensor forward(const Tensor& x) override {
    input_ = x;
    has_input_ = true;
    mask_.assign(x.size(), 1.0);
    if (training_ && p_ > 0.0) {
      const double keep = 1.0 / (1.0 - p_);
      for (double& m : mask_) m = rng_.uniform() < p_ ? 0.0 : keep;
    }
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
    return y;
  }
  std::string kind_name() const override { return "Dropout"; }

 protected:
  Tensor backward_impl(const Tensor& x, const Tensor& dy) override {
    expect_same(x, dy, "dropout");
    Tensor dx(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

 private:
  double p_;
  Rng rng_;
  bool training_ = false;
  Buffer mask_;
};

// Lookup table; not a Sequential layer since its input is a list of indices.
class Embedding {
 public:
  Embedding(std::string name, std::size_t count, std::size_t dim, Rng& rng)
      : count_(count), dim_(dim), table_(name + ".table", {count, dim}) {
    table_.init_fan_in(dim, rng);
  }

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t i) const {
    if (i >= count_) throw ShapeMismatch("embedding index out of range");
    return table_.value.row(i);
  }
  Parameter& table() { return table_; }
  const Parameter& table() const { return table_; }

  Tensor lookup(std::span<const std::size_t> indices) const {
    Tensor out({indices.size(), dim_});
    for (std::size_t n = 0; n < indices.size(); ++n) {
      auto r = row(indices[n]);
      std::copy(r.begin(), r.end(), out.data() + n * dim_);
    }
    return out;
  }

  void accumulate(std::size_t index, std::span<const double> grad) {
    if (index >= count_ || grad.size() != dim_) throw ShapeMismatch("embedding gradient mismatch");
    double* g = table_.value.grad.data() + index * dim_;
    for (std::size_t i = 0; i < dim_; ++i) g[i] += grad[i];
    table_.grad_populated = true;
  }

  // Marks the table as part of this backward pass even if no row was used.
  void touch() { table_.grad_populated = true; }

 private:
  std::size_t count_, dim_;
  Parameter table_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(const std::string& name, const std::vector<LayerSpec>& specs, Rng& rng) {
    for (std::size_t i = 0; i < specs.size(); ++i) add(name + "." + std::to_string(i), specs[i], rng);
  }

  void add(const std::string& name, const LayerSpec& spec, Rng& rng) {
    spec.validate();
    switch (spec.kind) {
      case LayerKind::kLinear: layers_.push_back(std::make_unique<Linear>(name, spec.in, spec.out, rng)); break;
      case LayerKind::kConv1d:
        layers_.push_back(std::make_unique<Conv1d>(name, spec.in, spec.out, spec.kernel, spec.stride, spec.padding, rng));
        break;
      case LayerKind::kReLU: layers_.push_back(std::make_unique<ReLU>()); break;
      case LayerKind::kSigmoid: layers_.push_back(std::make_unique<Sigmoid>()); break;
      case LayerKind::kSoftmax: layers_.push_back(std::make_unique<Softmax>()); break;
      case LayerKind::kLayerNorm: layers_.push_back(std::make_unique<LayerNorm>(name, spec.in)); break;
      case LayerKind::kDropout: layers_.push_back(std::make_unique<Dropout>(spec.p, rng.next())); break;
      case LayerKind::kMultiHeadAttention:
      case LayerKind::kEmbedding:
        throw ShapeMismatch("attention and embedding layers take structured inputs, not a Sequential slot");
    }
  }

  Tensor infer(const Tensor& x) const {
    Tensor h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }

  Tensor forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }

  Tensor backward(const Tensor& dy) {
    if (layers_.empty()) return dy;
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect(ParameterList& out) {
    for (auto& l : layers_) l->collect(out);
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace memnav::ad
