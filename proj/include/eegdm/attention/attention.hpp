#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/random.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

// Row-stochastic weights softmax(Q K^T / sqrt(d)) for Q (L1, d), K (L2, d).
template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
    throw std::invalid_argument("attention: Q and K must be (L1, d) and (L2, d)");
  if (k.dim(0) == 0) throw std::invalid_argument("attention: empty keys");
  const std::size_t l1 = q.dim(0), l2 = k.dim(0), d = q.dim(1);
  Tensor<T> s(Shape{l1, l2});
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  for (std::size_t i = 0; i < l1; ++i)
    for (std::size_t j = 0; j < l2; ++j) {
      T acc{};
      for (std::size_t c = 0; c < d; ++c) acc += q[i * d + c] * k[j * d + c];
      s[i * l2 + j] = acc * scale;
    }
  return ops::softmax_rows(s);
}

// Single-head attention softmax(Q K^T / sqrt(d)) V.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) throw std::invalid_argument("attention: V must have one row per key");
  const auto w = attention_weights(q, k);
  const std::size_t l1 = q.dim(0), l2 = k.dim(0), dv = v.dim(1);
  Tensor<T> out(Shape{l1, dv});
  for (std::size_t i = 0; i < l1; ++i)
    for (std::size_t j = 0; j < l2; ++j)
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += w[i * l2 + j] * v[j * dv + c];
  return out;
}

namespace ops {

// Batched multi-head scaled dot-product attention. q (B, L1, d), k and v
// (B, L2, d); head h uses columns [h*d/heads, (h+1)*d/heads) and scores are
// scaled by 1/sqrt(d/heads).
template <class T>
Var<T> multi_head_sdpa(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads) {
  detail::require(q.value().rank() == 3 && k.value().rank() == 3 && v.value().rank() == 3, "multi_head_sdpa",
                  "inputs must be (B, L, d)");
  const std::size_t batch = q.dim(0), l1 = q.dim(1), d = q.dim(2), l2 = k.dim(1);
  detail::require(k.dim(0) == batch && v.dim(0) == batch && k.dim(2) == d && v.dim(2) == d && v.dim(1) == l2,
                  "multi_head_sdpa", "shape mismatch");
  detail::require(l2 > 0, "multi_head_sdpa", "empty keys");
  detail::require(heads > 0 && d % heads == 0, "multi_head_sdpa", "d not divisible by heads");
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  using Mat = detail::RowMat<T>;
  using Stride = Eigen::OuterStride<>;
  using CMap = Eigen::Map<const Mat, 0, Stride>;
  using MapS = Eigen::Map<Mat, 0, Stride>;

  auto probs = std::make_shared<typename Tensor<T>::Storage>(batch * heads * l1 * l2);
  Tensor<T> out(Shape{batch, l1, d});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      CMap Q(q.value().data() + b * l1 * d + h * dh, l1, dh, Stride(d));
      CMap K(k.value().data() + b * l2 * d + h * dh, l2, dh, Stride(d));
      CMap V(v.value().data() + b * l2 * d + h * dh, l2, dh, Stride(d));
      detail::MapMat<T> P(probs->data() + (b * heads + h) * l1 * l2, l1, l2);
      P.noalias() = (Q * K.transpose()) * scale;
      for (std::size_t i = 0; i < l1; ++i) {
        const T mx = P.row(i).maxCoeff();
        P.row(i) = (P.row(i).array() - mx).exp();
        T sum{};
        for (std::size_t j = 0; j < l2; ++j) sum += P(i, j);
        P.row(i) /= sum;
      }
      MapS O(out.data() + b * l1 * d + h * dh, l1, dh, Stride(d));
      O.noalias() = P * V;
    }
  return record<T>(std::move(out), {q, k, v}, [=](Node<T>& self) {
    auto* gq = self.parent_grad(0);
    auto* gk = self.parent_grad(1);
    auto* gv = self.parent_grad(2);
    const auto& qv = self.parent_value(0);
    const auto& kv = self.parent_value(1);
    const auto& vv = self.parent_value(2);
    Mat dp(l1, l2), ds(l1, l2);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        detail::CMapMat<T> P(probs->data() + (b * heads + h) * l1 * l2, l1, l2);
        CMap dO(self.grad.data() + b * l1 * d + h * dh, l1, dh, Stride(d));
        CMap Q(qv.data() + b * l1 * d + h * dh, l1, dh, Stride(d));
        CMap K(kv.data() + b * l2 * d + h * dh, l2, dh, Stride(d));
        CMap V(vv.data() + b * l2 * d + h * dh, l2, dh, Stride(d));
        if (gv) MapS(gv->data() + b * l2 * d + h * dh, l2, dh, Stride(d)).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        dp.noalias() = dO * V.transpose();
        for (std::size_t i = 0; i < l1; ++i) {
          T dot{};
          for (std::size_t j = 0; j < l2; ++j) dot += dp(i, j) * P(i, j);
          ds.row(i) = P.row(i).array() * (dp.row(i).array() - dot) * scale;
        }
        if (gq) MapS(gq->data() + b * l1 * d + h * dh, l1, dh, Stride(d)).noalias() += ds * K;
        if (gk) MapS(gk->data() + b * l2 * d + h * dh, l2, dh, Stride(d)).noalias() += ds.transpose() * Q;
      }
  });
}

// Inverted dropout with keep-probability 1 - p; identity when p = 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  detail::require(p < 1.0, "dropout", "rate must be < 1");
  auto mask = std::make_shared<std::vector<T>>(x.size());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep;
    y[i] = x.value()[i] * (*mask)[i];
  }
  return record<T>(std::move(y), {x}, [mask](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace ops

}  // namespace eegdm
