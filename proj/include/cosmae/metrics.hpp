#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosmae/error.hpp"

namespace cosmae {

// One structured line per event. Epoch lines carry losses and lr; eval lines
// carry micro_map (and macro_map as an extra). The file is append-only JSON
// lines, parseable independently per line.
struct MetricsRecord {
  std::string run_id;
  std::int64_t task_id = 0;
  std::int64_t epoch = -1;  // -1 means an "eval" event
  double loss_recon = 0.0;
  double loss_mim = 0.0;
  double lr = 0.0;
  std::optional<double> micro_map;
  std::optional<double> macro_map;
  double wall_time_s = 0.0;

  bool is_eval() const { return epoch < 0; }

  std::string to_line() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["task_id"] = task_id;
    if (is_eval()) {
      j["epoch"] = "eval";
    } else {
      j["epoch"] = epoch;
    }
    if (!is_eval()) {
      j["loss_recon"] = loss_recon;
      j["loss_mim"] = loss_mim;
      j["lr"] = lr;
    }
    if (micro_map) j["micro_map"] = *micro_map;
    if (macro_map) j["macro_map"] = *macro_map;
    j["wall_time_s"] = wall_time_s;
    return j.dump();
  }

  static MetricsRecord from_line(const std::string& line) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("metrics: unparseable line: ") + e.what());
    }
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.task_id = j.at("task_id").get<std::int64_t>();
    if (j.at("epoch").is_string()) {
      r.epoch = -1;
    } else {
      r.epoch = j.at("epoch").get<std::int64_t>();
    }
    if (j.contains("loss_recon")) r.loss_recon = j["loss_recon"].get<double>();
    if (j.contains("loss_mim")) r.loss_mim = j["loss_mim"].get<double>();
    if (j.contains("lr")) r.lr = j["lr"].get<double>();
    if (j.contains("micro_map")) r.micro_map = j["micro_map"].get<double>();
    if (j.contains("macro_map")) r.macro_map = j["macro_map"].get<double>();
    if (j.contains("wall_time_s")) r.wall_time_s = j["wall_time_s"].get<double>();
    return r;
  }
};

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) : path_(path) {
    if (!path_.empty()) {
      out_.open(path_, std::ios::app);
      if (!out_) throw IoError("metrics: cannot open " + path_);
    }
  }

  void append(const MetricsRecord& r) {
    records_.push_back(r);
    if (out_.is_open()) {
      out_ << r.to_line() << '\n';
      out_.flush();
    }
  }

  const std::vector<MetricsRecord>& records() const { return records_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<MetricsRecord> records_;
};

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("metrics: cannot open " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(MetricsRecord::from_line(line));
  }
  return out;
}

}  // namespace cosmae
