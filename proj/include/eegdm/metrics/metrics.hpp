#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<long long> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {
    if (classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  }
  ConfusionMatrix(std::initializer_list<std::initializer_list<long long>> rows) : ConfusionMatrix(rows.size()) {
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != k) throw std::invalid_argument("ConfusionMatrix: matrix must be square");
      std::size_t j = 0;
      for (long long v : r) {
        if (v < 0) throw std::invalid_argument("ConfusionMatrix: counts must be non-negative");
        at(i, j++) = v;
      }
      ++i;
    }
  }

  long long& at(std::size_t truth, std::size_t pred) { return counts.at(truth * k + pred); }
  long long at(std::size_t truth, std::size_t pred) const { return counts.at(truth * k + pred); }

  void add(int truth, int pred) {
    if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= k || static_cast<std::size_t>(pred) >= k)
      throw std::out_of_range("ConfusionMatrix: label outside [0, " + std::to_string(k) + ")");
    ++at(truth, pred);
  }

  void merge(const ConfusionMatrix& other) {
    if (other.k != k) throw std::invalid_argument("ConfusionMatrix: cannot merge different class counts");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  }

  long long total() const { return std::accumulate(counts.begin(), counts.end(), 0LL); }
  long long row_sum(std::size_t i) const {
    long long s = 0;
    for (std::size_t j = 0; j < k; ++j) s += at(i, j);
    return s;
  }
  long long col_sum(std::size_t j) const {
    long long s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, j);
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < k; ++i) {
      nlohmann::ordered_json r = nlohmann::ordered_json::array();
      for (std::size_t j = 0; j < k; ++j) r.push_back(at(i, j));
      rows.push_back(std::move(r));
    }
    return rows;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred, std::size_t k) {
  if (truth.size() != pred.size()) throw std::invalid_argument("confusion: label vectors differ in length");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

// Index of the largest entry per row of (B, K); ties go to the lowest index.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  const std::size_t k = scores.shape().back(), rows = scores.size() / k;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (scores[r * k + j] > scores[r * k + best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline double cohen_kappa(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n <= 0) throw std::invalid_argument("cohen_kappa: empty confusion matrix");
  double diag = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < cm.k; ++i) {
    diag += static_cast<double>(cm.at(i, i));
    pe += static_cast<double>(cm.row_sum(i)) * static_cast<double>(cm.col_sum(i));
  }
  const double po = diag / n;
  pe /= n * n;
  if (pe >= 1.0) return 0.0;
  return (po - pe) / (1.0 - pe);
}

// Mean per-class recall over classes with at least one true sample; empty
// classes are skipped with a warning on `warn` (if given).
inline double balanced_accuracy(const ConfusionMatrix& cm, std::ostream* warn = &std::cerr) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < cm.k; ++i) {
    const long long row = cm.row_sum(i);
    if (row == 0) {
      if (warn) *warn << "warning: class " << i << " has no samples; excluded from balanced accuracy\n";
      continue;
    }
    sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("balanced_accuracy: empty confusion matrix");
  return sum / static_cast<double>(used);
}

// Support-weighted mean of per-class F1; a class with undefined precision
// and recall contributes 0.
inline double weighted_f1(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n <= 0) throw std::invalid_argument("weighted_f1: empty confusion matrix");
  double out = 0.0;
  for (std::size_t i = 0; i < cm.k; ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    const double support = static_cast<double>(cm.row_sum(i)), predicted = static_cast<double>(cm.col_sum(i));
    double f1 = 0.0;
    if (support > 0 && predicted > 0 && tp > 0) {
      const double prec = tp / predicted, rec = tp / support;
      f1 = 2.0 * prec * rec / (prec + rec);
    }
    out += f1 * support / n;
  }
  return out;
}

struct BinaryCurves {
  double auroc = 0.0;
  double auprc = 0.0;
};

// AUROC by the rank statistic with averaged tie ranks; AUPRC as the
// step-wise sum of precision times recall increments, thresholds taken at
// each distinct score.
inline BinaryCurves auroc_auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc_auprc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc_auprc: labels must be 0 or 1");
    pos += l == 1;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auroc_auprc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t q = i; q < j; ++q)
      if (labels[order[q]] == 1) rank_sum += avg_rank;
    i = j;
  }
  BinaryCurves out;
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  out.auroc = (rank_sum - p * (p + 1.0) / 2.0) / (p * q);

  // descending thresholds; tied scores enter together
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  for (std::size_t i = n; i > 0;) {
    std::size_t j = i;
    while (j > 0 && scores[order[j - 1]] == scores[order[i - 1]]) {
      --j;
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
    }
    const double recall = tp / p, precision = tp / (tp + fp);
    out.auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return out;
}

struct MetricReport {
  double kappa = 0.0;
  double bacc = 0.0;
  double wf1 = 0.0;
  std::optional<double> auroc, auprc;
  ConfusionMatrix confusion;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j{{"kappa", kappa}, {"bacc", bacc}, {"wf1", wf1}};
    j["auroc"] = auroc ? nlohmann::ordered_json(*auroc) : nlohmann::ordered_json(nullptr);
    j["auprc"] = auprc ? nlohmann::ordered_json(*auprc) : nlohmann::ordered_json(nullptr);
    j["confusion"] = confusion.to_json();
    return j;
  }
};

// Report from class probabilities (B, K). AUROC/AUPRC use the class-1
// probability and are filled only for binary tasks with both classes
// present.
template <class T>
MetricReport evaluate_probabilities(const Tensor<T>& probs, const std::vector<int>& labels,
                                    std::ostream* warn = &std::cerr) {
  const std::size_t k = probs.shape().back();
  MetricReport r;
  r.confusion = confusion(labels, argmax_rows(probs), k);
  r.kappa = cohen_kappa(r.confusion);
  r.bacc = balanced_accuracy(r.confusion, warn);
  r.wf1 = weighted_f1(r.confusion);
  if (k == 2) {
    std::vector<double> s(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) s[i] = static_cast<double>(probs[i * 2 + 1]);
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) {
      const auto c = auroc_auprc(s, labels);
      r.auroc = c.auroc;
      r.auprc = c.auprc;
    }
  }
  return r;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Mean and population standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  for (double x : v) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(v.size()));
  return out;
}

// {runs: [...], summary: {metric: {mean, std}}} over several seeds.
inline nlohmann::ordered_json summarize_runs(const std::vector<MetricReport>& runs,
                                             const std::vector<std::uint64_t>& seeds = {}) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto r = runs[i].to_json();
    if (i < seeds.size()) r["seed"] = seeds[i];
    list.push_back(std::move(r));
  }
  j["runs"] = std::move(list);
  nlohmann::ordered_json summary;
  auto add = [&](const char* name, auto get) {
    std::vector<double> v;
    for (const auto& r : runs)
      if (auto x = get(r)) v.push_back(*x);
    if (v.size() != runs.size() || v.empty()) return;
    const auto ms = mean_std(v);
    summary[name] = {{"mean", ms.mean}, {"std", ms.std}};
  };
  add("kappa", [](const MetricReport& r) { return std::optional<double>(r.kappa); });
  add("bacc", [](const MetricReport& r) { return std::optional<double>(r.bacc); });
  add("wf1", [](const MetricReport& r) { return std::optional<double>(r.wf1); });
  add("auroc", [](const MetricReport& r) { return r.auroc; });
  add("auprc", [](const MetricReport& r) { return r.auprc; });
  j["summary"] = std::move(summary);
  return j;
}

}  // namespace eegdm
