#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memnav/autodiff/layers.hpp"

namespace memnav::ad {

// Variable-length memory for a batch: rows of all samples stacked, sample b
// owning rows [offsets[b], offsets[b+1]).
struct PackedRows {
  Tensor rows;
  std::vector<std::size_t> offsets{0};

  std::size_t batch() const { return offsets.size() - 1; }
  std::size_t count(std::size_t b) const { return offsets[b + 1] - offsets[b]; }

  static PackedRows single(const Tensor& rows_2d) {
    PackedRows p;
    p.rows = rows_2d;
    p.offsets = {0, rows_2d.rank() == 2 ? rows_2d.dim(0) : 0};
    return p;
  }
};

// Multi-head scaled dot-product attention of one query vector per sample over
// that sample's memory rows. A sample with no rows gets a zero output.
class MultiHeadAttention {
 public:
  struct Gradients {
    Tensor query;
    Tensor memory;
  };

  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t memory_dim, std::size_t heads, Rng& rng)
      : dim_(dim), memory_dim_(memory_dim), heads_(heads),
        wq_(name + ".wq", {dim, dim}), bq_(name + ".bq", {dim}),
        wk_(name + ".wk", {dim, memory_dim}), bk_(name + ".bk", {dim}),
        wv_(name + ".wv", {dim, memory_dim}), bv_(name + ".bv", {dim}),
        wo_(name + ".wo", {dim, dim}), bo_(name + ".bo", {dim}) {
    LayerSpec::attention(dim, memory_dim, heads).validate();
    for (Parameter* p : {&wq_, &bq_, &wo_, &bo_}) p->init_fan_in(dim, rng);
    for (Parameter* p : {&wk_, &bk_, &wv_, &bv_}) p->init_fan_in(memory_dim, rng);
  }

  std::size_t dim() const { return dim_; }
  std::size_t memory_dim() const { return memory_dim_; }
  std::size_t heads() const { return heads_; }

  Tensor infer(const Tensor& query, const PackedRows& memory) const {
    Cache c;
    return run(query, memory, c);
  }

  Tensor forward(const Tensor& query, const PackedRows& memory) {
    cache_ = Cache{};
    Tensor y = run(query, memory, cache_);
    cache_.query = query;
    cache_.memory = memory;
    has_cache_ = true;
    return y;
  }

  // Attention weights of the last forward, [rows, heads].
  const Buffer& last_weights() const { return cache_.weights; }

  Gradients backward(const Tensor& dy) {
    if (!has_cache_) throw NoForwardPass("attention: backward without a preceding forward");
    has_cache_ = false;
    const Cache& c = cache_;
    const std::size_t batch = c.query.dim(0), rows = c.memory.rows.rank() == 2 ? c.memory.rows.dim(0) : 0;
    if (dy.shape != Shape{batch, dim_}) throw ShapeMismatch("attention: bad upstream gradient " + shape_str(dy.shape));
    const std::size_t dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Output projection; samples without memory contributed nothing.
    Buffer dctx(batch * dim_, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      if (c.memory.count(b) == 0) continue;
      for (std::size_t o = 0; o < dim_; ++o) {
        const double g = dy[b * dim_ + o];
        bo_.value.grad[o] += g;
        for (std::size_t i = 0; i < dim_; ++i) {
          wo_.value.grad[o * dim_ + i] += g * c.ctx[b * dim_ + i];
          dctx[b * dim_ + i] += g * wo_.value[o * dim_ + i];
        }
      }
    }

    Buffer dq(batch * dim_, 0.0), dk(rows * dim_, 0.0), dv(rows * dim_, 0.0);
    Buffer da;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t begin = c.memory.offsets[b], count = c.memory.count(b);
      if (count == 0) continue;
      for (std::size_t h = 0; h < heads_; ++h) {
        const double* dc = dctx.data() + b * dim_ + h * dh;
        da.assign(count, 0.0);
        double weighted = 0.0;
        for (std::size_t j = 0; j < count; ++j) {
          const std::size_t r = begin + j;
          const double a = c.weights[r * heads_ + h];
          const double* v = c.v.data() + r * dim_ + h * dh;
          double* dvr = dv.data() + r * dim_ + h * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            dvr[i] += a * dc[i];
            da[j] += dc[i] * v[i];
          }
          weighted += a * da[j];
        }
        const double* q = c.q.data() + b * dim_ + h * dh;
        double* dqb = dq.data() + b * dim_ + h * dh;
        for (std::size_t j = 0; j < count; ++j) {
          const std::size_t r = begin + j;
          const double ds = c.weights[r * heads_ + h] * (da[j] - weighted) * scale;
          const double* k = c.k.data() + r * dim_ + h * dh;
          double* dkr = dk.data() + r * dim_ + h * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            dqb[i] += ds * k[i];
            dkr[i] += ds * q[i];
          }
        }
      }
    }

    Gradients out{Tensor(c.query.shape), Tensor({rows, memory_dim_})};
    auto dQ = as_matrix(dq, batch, dim_);
    as_matrix(wq_.value.grad, dim_, dim_).noalias() += dQ.transpose() * as_matrix(c.query.values, batch, dim_);
    VectorMap(bq_.value.grad.data(), dim_) += dQ.colwise().sum().transpose();
    as_matrix(out.query.values, batch, dim_).noalias() = dQ * as_matrix(wq_.value.values, dim_, dim_);
    if (rows > 0) {
      auto M = as_matrix(c.memory.rows.values, rows, memory_dim_);
      auto dK = as_matrix(dk, rows, dim_);
      auto dV = as_matrix(dv, rows, dim_);
      as_matrix(wk_.value.grad, dim_, memory_dim_).noalias() += dK.transpose() * M;
      as_matrix(wv_.value.grad, dim_, memory_dim_).noalias() += dV.transpose() * M;
      VectorMap(bk_.value.grad.data(), dim_) += dK.colwise().sum().transpose();
      VectorMap(bv_.value.grad.data(), dim_) += dV.colwise().sum().transpose();
      auto dM = as_matrix(out.memory.values, rows, memory_dim_);
      dM.noalias() = dK * as_matrix(wk_.value.values, dim_, memory_dim_);
      dM.noalias() += dV * as_matrix(wv_.value.values, dim_, memory_dim_);
    }
    for (Parameter* p : {&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_}) p->grad_populated = true;
    return out;
  }

  void collect(ParameterList& out) {
    for (Parameter* p : {&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_}) out.push_back(p);
  }

 private:
  struct Cache {
    Tensor query;
    PackedRows memory;
    Buffer q, k, v, weights, ctx;
  };

  Tensor run(const Tensor& query, const PackedRows& memory, Cache& c) const {
    if (query.rank() != 2 || query.dim(1) != dim_) {
      throw ShapeMismatch("attention: query must be [B," + std::to_string(dim_) + "], got " + shape_str(query.shape));
    }
    const std::size_t batch = query.dim(0);
    if (memory.batch() != batch) throw ShapeMismatch("attention: memory batch does not match query batch");
    const std::size_t rows = memory.offsets.back();
    if (rows > 0 && (memory.rows.rank() != 2 || memory.rows.dim(0) != rows || memory.rows.dim(1) != memory_dim_)) {
      throw ShapeMismatch("attention: memory rows must be [R," + std::to_string(memory_dim_) + "], got " +
                          shape_str(memory.rows.shape));
    }
    const std::size_t dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.q.assign(batch * dim_, 0.0);
    {
      auto Q = as_matrix(c.q, batch, dim_);
      Q.noalias() = as_matrix(query.values, batch, dim_) * as_matrix(wq_.value.values, dim_, dim_).transpose();
      Q.rowwise() += ConstVectorMap(bq_.value.data(), dim_).transpose();
    }
    c.k.assign(rows * dim_, 0.0);
    c.v.assign(rows * dim_, 0.0);
    if (rows > 0) {
      auto M = as_matrix(memory.rows.values, rows, memory_dim_);
      auto K = as_matrix(c.k, rows, dim_);
      auto V = as_matrix(c.v, rows, dim_);
      K.noalias() = M * as_matrix(wk_.value.values, dim_, memory_dim_).transpose();
      K.rowwise() += ConstVectorMap(bk_.value.data(), dim_).transpose();
      V.noalias() = M * as_matrix(wv_.value.values, dim_, memory_dim_).transpose();
      V.rowwise() += ConstVectorMap(bv_.value.data(), dim_).transpose();
    }
    c.weights.assign(rows * heads_, 0.0);
    c.ctx.assign(batch * dim_, 0.0);
    Buffer scores;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t begin = memory.offsets[b], count = memory.count(b);
      if (count == 0) continue;
      scores.resize(count);
      for (std::size_t h = 0; h < heads_; ++h) {
        const double* q = c.q.data() + b * dim_ + h * dh;
        for (std::size_t j = 0; j < count; ++j) {
          const double* k = c.k.data() + (begin + j) * dim_ + h * dh;
          double s = 0.0;
          for (std::size_t i = 0; i < dh; ++i) s += q[i] * k[i];
          scores[j] = s * scale;
        }
        Buffer w(count);
        Softmax::apply(scores, w);
        double* ctx = c.ctx.data() + b * dim_ + h * dh;
        for (std::size_t j = 0; j < count; ++j) {
          c.weights[(begin + j) * heads_ + h] = w[j];
          const double* v = c.v.data() + (begin + j) * dim_ + h * dh;
          for (std::size_t i = 0; i < dh; ++i) ctx[i] += w[j] * v[i];
        }
      }
    }
    Tensor y({batch, dim_});
    for (std::size_t b = 0; b < batch; ++b) {
      if (memory.count(b) == 0) continue;
      for (std::size_t o = 0; o < dim_; ++o) {
        double s = bo_.value[o];
        for (std::size_t i = 0; i < dim_; ++i) s += wo_.value[o * dim_ + i] * c.ctx[b * dim_ + i];
        y[b * dim_ + o] = s;
      }
    }
    return y;
  }

  std::size_t dim_, memory_dim_, heads_;
  Parameter wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Cache cache_;
  bool has_cache_ = false;
};

}  // namespace memnav::ad
