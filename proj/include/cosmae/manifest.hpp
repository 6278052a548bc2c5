#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosmae/io.hpp"
#include "cosmae/trainer.hpp"

namespace cosmae {

// Ordered task list plus the downstream eval directory. Paths inside the
// manifest are resolved relative to the manifest file.
struct TaskManifest {
  std::vector<TaskSpec> tasks;
  std::string eval_dir;  // empty = no downstream eval set

  void validate() const {
    if (tasks.empty()) throw ConfigError("manifest: no tasks listed");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].task_id != static_cast<std::int64_t>(i) + 1) {
        throw ConfigError("manifest: task ids must be 1..T in order");
      }
      if (tasks[i].epochs <= 0 || tasks[i].batch_size <= 0) {
        throw ConfigError("manifest: task " + std::to_string(tasks[i].task_id) +
                          ": epochs and batch_size must be positive");
      }
    }
  }
};

inline std::string manifest_to_json(const TaskManifest& m) {
  nlohmann::ordered_json j;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : m.tasks) {
    nlohmann::ordered_json tj;
    tj["task_id"] = t.task_id;
    tj["dir"] = t.dataset_dir;
    tj["epochs"] = t.epochs;
    tj["batch_size"] = t.batch_size;
    j["tasks"].push_back(tj);
  }
  if (!m.eval_dir.empty()) j["eval_dir"] = m.eval_dir;
  return j.dump(2) + "\n";
}

inline void write_manifest(const std::string& path, const TaskManifest& m) {
  io::spit(path, manifest_to_json(m));
}

inline TaskManifest read_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::slurp(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + std::string(e.what()));
  }
  TaskManifest m;
  try {
    const auto base = std::filesystem::path(path).parent_path();
    for (const auto& tj : j.at("tasks")) {
      TaskSpec t;
      t.task_id = tj.at("task_id").get<std::int64_t>();
      t.dataset_dir = (base / tj.at("dir").get<std::string>()).string();
      t.epochs = tj.at("epochs").get<int>();
      t.batch_size = tj.at("batch_size").get<int>();
      m.tasks.push_back(t);
    }
    if (j.contains("eval_dir")) {
      m.eval_dir = (base / j["eval_dir"].get<std::string>()).string();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed manifest: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

}  // namespace cosmae
