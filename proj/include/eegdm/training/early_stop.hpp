#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

namespace eegdm {

// Stops when the validation score has not improved for `patience`
// consecutive epochs, counting only epochs after `min_epochs`. Epochs are
// 1-based. The best epoch is the first one reaching the maximum score.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience = 3, std::size_t min_epochs = 20)
      : patience_(patience), min_epochs_(min_epochs) {
    if (patience == 0) throw std::invalid_argument("EarlyStopping: patience must be positive");
  }

  // Records the score for the next epoch; returns true if training should
  // stop after it.
  bool update(double score) {
    history_.push_back(score);
    const std::size_t epoch = history_.size();
    if (history_.size() == 1 || score > best_score_) {
      best_score_ = score;
      best_epoch_ = epoch;
      stale_ = 0;
    } else if (epoch > min_epochs_) {
      ++stale_;
    }
    return stale_ >= patience_;
  }

  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_score_; }
  bool improved_last() const { return best_epoch_ == history_.size(); }
  const std::vector<double>& history() const { return history_; }

 private:
  std::size_t patience_, min_epochs_;
  std::vector<double> history_;
  double best_score_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

}  // namespace eegdm
