#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "eegdm/numerics/errors.hpp"

namespace eegdm {

// JSON-lines training log: {epoch, step, lr, loss, val_metric} per record,
// plus optional extra fields. Each line is flushed as written.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path, bool append = false)
      : os_(path, append ? std::ios::app : std::ios::trunc) {
    if (!os_) throw DataError("cannot open training log " + path.string());
  }

  bool open() const { return os_.is_open(); }

  void write(std::size_t epoch, std::size_t step, double lr, double loss, std::optional<double> val_metric,
             const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json j{{"epoch", epoch}, {"step", step}, {"lr", lr}, {"loss", loss}};
    j["val_metric"] = val_metric ? nlohmann::ordered_json(*val_metric) : nlohmann::ordered_json(nullptr);
    for (const auto& [k, v] : extra.items()) j[k] = v;
    records_.push_back(j);
    if (os_.is_open()) os_ << j.dump() << '\n' << std::flush;
  }

  const std::vector<nlohmann::ordered_json>& records() const { return records_; }

 private:
  std::ofstream os_;
  std::vector<nlohmann::ordered_json> records_;
};

}  // namespace eegdm
