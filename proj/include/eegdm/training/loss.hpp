#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/ops.hpp"

namespace eegdm {

// (total / K) / count_c for present classes, rescaled to mean 1 over them.
// Classes with no samples get weight 0.
inline std::vector<double> class_weights(const std::vector<int>& counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  double total = 0.0;
  std::size_t present = 0;
  for (int c : counts) {
    if (c < 0) throw std::invalid_argument("class_weights: negative count");
    total += c;
    present += c > 0;
  }
  if (present == 0) throw std::invalid_argument("class_weights: all classes empty");
  std::vector<double> w(counts.size(), 0.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] > 0) sum += (w[k] = total / static_cast<double>(counts.size()) / counts[k]);
  const double mean = sum / static_cast<double>(present);
  for (auto& x : w) x /= mean;
  return w;
}

inline std::vector<int> label_counts(const std::vector<int>& labels, std::size_t num_classes) {
  std::vector<int> counts(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw std::out_of_range("label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  return counts;
}

namespace ops {

// Label-smoothed, class-weighted cross-entropy averaged over the batch.
// Target = (1 - s) one_hot + s / K; each row is scaled by the weight of its
// true class. Empty `weights` means all ones.
template <class T>
Var<T> smoothed_weighted_ce(const Var<T>& logits, const std::vector<int>& labels, double smoothing,
                            const std::vector<double>& weights = {}) {
  detail::require(logits.value().rank() == 2, "smoothed_weighted_ce", "logits must be (B, K)");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  detail::require(labels.size() == batch && batch > 0, "smoothed_weighted_ce", "one label per row required");
  detail::require(smoothing >= 0.0 && smoothing < 1.0, "smoothed_weighted_ce", "smoothing must lie in [0, 1)");
  detail::require(weights.empty() || weights.size() == k, "smoothed_weighted_ce", "one weight per class required");
  for (double w : weights) detail::require(w >= 0.0, "smoothed_weighted_ce", "weights must be non-negative");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw std::out_of_range("smoothed_weighted_ce: label " + std::to_string(l) + " out of range");

  const auto probs = softmax_rows(logits.value());
  const double off = smoothing / static_cast<double>(k), on = 1.0 - smoothing + off;
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* z = logits.value().data() + b * k;
    const T mx = *std::max_element(z, z + k);
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(static_cast<double>(z[j] - mx));
    lse = std::log(lse) + static_cast<double>(mx);
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double tgt = static_cast<std::size_t>(labels[b]) == j ? on : off;
      if (tgt > 0) row -= tgt * (static_cast<double>(z[j]) - lse);
    }
    loss += row * (weights.empty() ? 1.0 : weights[labels[b]]);
  }
  loss /= static_cast<double>(batch);
  return record<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                   [=](Node<T>& self) {
                     auto* g = self.parent_grad(0);
                     if (!g) return;
                     const double go = static_cast<double>(self.grad[0]) / static_cast<double>(batch);
                     for (std::size_t b = 0; b < batch; ++b) {
                       const double w = (weights.empty() ? 1.0 : weights[labels[b]]) * go;
                       for (std::size_t j = 0; j < k; ++j) {
                         const double tgt = static_cast<std::size_t>(labels[b]) == j ? on : off;
                         (*g)[b * k + j] += static_cast<T>(w * (static_cast<double>(probs[b * k + j]) - tgt));
                       }
                     }
                   });
}

}  // namespace ops

}  // namespace eegdm
