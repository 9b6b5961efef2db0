#pragma once

#include <chrono>
#include <ctime>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chest/common.hpp"
#include "chest/curriculum.hpp"
#include "chest/embed.hpp"
#include "chest/eval.hpp"
#include "chest/hin.hpp"
#include "chest/model.hpp"
#include "chest/subgraph.hpp"

namespace chest::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig: a flat JSON document with dotted keys. Every omitted field takes
// its published default; unknown keys are rejected with the full key list.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string schema_path;
  std::string dataset_name = "dataset";
  std::vector<std::string> metapaths;  // empty = take the schema file's list

  std::uint64_t seed = 0;
  unsigned threads = 0;

  embed::SkipgramConfig sg;
  unsigned walks_per_node = 10;
  unsigned walk_length = 20;

  unsigned K = 5;
  unsigned pool_multiplier = 4;
  std::uint32_t n_max = 64;
  std::uint32_t n_slots = 8;

  std::uint32_t d = 64;
  std::uint32_t d_ff = 128;
  std::uint32_t layers = 2;
  std::uint32_t heads = 2;
  bool layer_norm = true;

  curriculum::CourseConfig course;

  unsigned eval_n_neg = 1000;
  unsigned valid_n_neg = 1000;
  std::vector<unsigned> cutoffs = {10, 20};

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0)
      throw config_error("model.d must be positive and divisible by model.heads");
    if (walk_length < 2) throw config_error("embed.walk_length must be >= 2");
    if (K < 1) throw config_error("subgraph.k must be >= 1");
    if (cutoffs.empty()) throw config_error("eval.cutoffs must be non-empty");
    course.validate();
    if (!schema_path.empty() && !std::filesystem::exists(schema_path))
      throw config_error("data.schema_path does not exist: " + schema_path);
  }

  json to_json() const;
  static RunConfig from_json(const json& j);
  static RunConfig from_file(const std::string& path);

  std::uint64_t hash() const {
    // nlohmann::json objects iterate in sorted key order, so dump() is a
    // canonical form and permuted inputs hash identically
    return fnv1a64(to_json().dump());
  }
};

namespace detail {

struct KeyBinding {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

inline const char* mode_name(curriculum::CurriculumMode m) {
  switch (m) {
    case curriculum::CurriculumMode::standard: return "standard";
    case curriculum::CurriculumMode::multi_task: return "multi_task";
    case curriculum::CurriculumMode::reverse_courses: return "reverse_courses";
    case curriculum::CurriculumMode::no_pretrain: return "no_pretrain";
  }
  return "standard";
}

inline curriculum::CurriculumMode mode_from_name(const std::string& s) {
  if (s == "standard") return curriculum::CurriculumMode::standard;
  if (s == "multi_task") return curriculum::CurriculumMode::multi_task;
  if (s == "reverse_courses") return curriculum::CurriculumMode::reverse_courses;
  if (s == "no_pretrain") return curriculum::CurriculumMode::no_pretrain;
  throw config_error("unknown train.mode \"" + s +
                     "\" (standard, multi_task, reverse_courses, no_pretrain)");
}

template <class T>
T as_number(const json& v, const std::string& key) {
  if (!v.is_number() && !v.is_boolean())
    throw config_error("key " + key + " expects a number");
  return v.get<T>();
}

inline const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    std::vector<KeyBinding> b;
    auto add = [&b](std::string key, auto getter, auto setter) {
      b.push_back({std::move(key), getter, setter});
    };
    add("data.schema_path",
        [](const RunConfig& c) { return json(c.schema_path); },
        [](RunConfig& c, const json& v) { c.schema_path = v.get<std::string>(); });
    add("data.name", [](const RunConfig& c) { return json(c.dataset_name); },
        [](RunConfig& c, const json& v) { c.dataset_name = v.get<std::string>(); });
    add("metapaths", [](const RunConfig& c) { return json(c.metapaths); },
        [](RunConfig& c, const json& v) {
          c.metapaths = v.get<std::vector<std::string>>();
        });
    add("seed", [](const RunConfig& c) { return json(c.seed); },
        [](RunConfig& c, const json& v) {
          c.seed = as_number<std::uint64_t>(v, "seed");
          c.sg.seed = c.seed;
          c.course.seed = c.seed;
        });
    add("threads", [](const RunConfig& c) { return json(c.threads); },
        [](RunConfig& c, const json& v) {
          c.threads = as_number<unsigned>(v, "threads");
          c.course.threads = c.threads;
        });
    add("embed.dim", [](const RunConfig& c) { return json(c.sg.d_pre); },
        [](RunConfig& c, const json& v) {
          c.sg.d_pre = as_number<std::uint32_t>(v, "embed.dim");
        });
    add("embed.window", [](const RunConfig& c) { return json(c.sg.window); },
        [](RunConfig& c, const json& v) {
          c.sg.window = as_number<unsigned>(v, "embed.window");
        });
    add("embed.negatives",
        [](const RunConfig& c) { return json(c.sg.negatives); },
        [](RunConfig& c, const json& v) {
          c.sg.negatives = as_number<unsigned>(v, "embed.negatives");
        });
    add("embed.epochs", [](const RunConfig& c) { return json(c.sg.epochs); },
        [](RunConfig& c, const json& v) {
          c.sg.epochs = as_number<unsigned>(v, "embed.epochs");
        });
    add("embed.learning_rate",
        [](const RunConfig& c) { return json(c.sg.learning_rate); },
        [](RunConfig& c, const json& v) {
          c.sg.learning_rate = as_number<double>(v, "embed.learning_rate");
        });
    add("embed.walks_per_node",
        [](const RunConfig& c) { return json(c.walks_per_node); },
        [](RunConfig& c, const json& v) {
          c.walks_per_node = as_number<unsigned>(v, "embed.walks_per_node");
        });
    add("embed.walk_length",
        [](const RunConfig& c) { return json(c.walk_length); },
        [](RunConfig& c, const json& v) {
          c.walk_length = as_number<unsigned>(v, "embed.walk_length");
        });
    add("subgraph.k", [](const RunConfig& c) { return json(c.K); },
        [](RunConfig& c, const json& v) {
          c.K = as_number<unsigned>(v, "subgraph.k");
        });
    add("subgraph.pool_multiplier",
        [](const RunConfig& c) { return json(c.pool_multiplier); },
        [](RunConfig& c, const json& v) {
          c.pool_multiplier = as_number<unsigned>(v, "subgraph.pool_multiplier");
        });
    add("subgraph.n_max", [](const RunConfig& c) { return json(c.n_max); },
        [](RunConfig& c, const json& v) {
          c.n_max = as_number<std::uint32_t>(v, "subgraph.n_max");
        });
    add("subgraph.n_slots", [](const RunConfig& c) { return json(c.n_slots); },
        [](RunConfig& c, const json& v) {
          c.n_slots = as_number<std::uint32_t>(v, "subgraph.n_slots");
        });
    add("model.d", [](const RunConfig& c) { return json(c.d); },
        [](RunConfig& c, const json& v) {
          c.d = as_number<std::uint32_t>(v, "model.d");
        });
    add("model.d_ff", [](const RunConfig& c) { return json(c.d_ff); },
        [](RunConfig& c, const json& v) {
          c.d_ff = as_number<std::uint32_t>(v, "model.d_ff");
        });
    add("model.layers", [](const RunConfig& c) { return json(c.layers); },
        [](RunConfig& c, const json& v) {
          c.layers = as_number<std::uint32_t>(v, "model.layers");
        });
    add("model.heads", [](const RunConfig& c) { return json(c.heads); },
        [](RunConfig& c, const json& v) {
          c.heads = as_number<std::uint32_t>(v, "model.heads");
        });
    add("model.layer_norm",
        [](const RunConfig& c) { return json(c.layer_norm); },
        [](RunConfig& c, const json& v) { c.layer_norm = v.get<bool>(); });
    add("train.batch_size",
        [](const RunConfig& c) { return json(c.course.batch_size); },
        [](RunConfig& c, const json& v) {
          c.course.batch_size = as_number<unsigned>(v, "train.batch_size");
        });
    add("train.mask_node_prob",
        [](const RunConfig& c) { return json(c.course.mask_node_prob); },
        [](RunConfig& c, const json& v) {
          c.course.mask_node_prob = as_number<double>(v, "train.mask_node_prob");
        });
    add("train.mask_edge_prob",
        [](const RunConfig& c) { return json(c.course.mask_edge_prob); },
        [](RunConfig& c, const json& v) {
          c.course.mask_edge_prob = as_number<double>(v, "train.mask_edge_prob");
        });
    add("train.w_mnp", [](const RunConfig& c) { return json(c.course.w_mnp); },
        [](RunConfig& c, const json& v) {
          c.course.w_mnp = as_number<double>(v, "train.w_mnp");
        });
    add("train.w_mep", [](const RunConfig& c) { return json(c.course.w_mep); },
        [](RunConfig& c, const json& v) {
          c.course.w_mep = as_number<double>(v, "train.w_mep");
        });
    add("train.w_mtp", [](const RunConfig& c) { return json(c.course.w_mtp); },
        [](RunConfig& c, const json& v) {
          c.course.w_mtp = as_number<double>(v, "train.w_mtp");
        });
    add("train.w_scl", [](const RunConfig& c) { return json(c.course.w_scl); },
        [](RunConfig& c, const json& v) {
          c.course.w_scl = as_number<double>(v, "train.w_scl");
        });
    add("train.tau", [](const RunConfig& c) { return json(c.course.tau); },
        [](RunConfig& c, const json& v) {
          c.course.tau = as_number<double>(v, "train.tau");
        });
    add("train.aug_ratio",
        [](const RunConfig& c) { return json(c.course.aug_ratio); },
        [](RunConfig& c, const json& v) {
          c.course.aug_ratio = as_number<double>(v, "train.aug_ratio");
        });
    add("train.scl_negatives",
        [](const RunConfig& c) { return json(c.course.scl_negatives); },
        [](RunConfig& c, const json& v) {
          c.course.scl_negatives = as_number<unsigned>(v, "train.scl_negatives");
        });
    add("train.lr_pretrain",
        [](const RunConfig& c) { return json(c.course.lr_pretrain); },
        [](RunConfig& c, const json& v) {
          c.course.lr_pretrain = as_number<double>(v, "train.lr_pretrain");
        });
    add("train.lr_finetune",
        [](const RunConfig& c) { return json(c.course.lr_finetune); },
        [](RunConfig& c, const json& v) {
          c.course.lr_finetune = as_number<double>(v, "train.lr_finetune");
        });
    add("train.epochs_elementary",
        [](const RunConfig& c) { return json(c.course.epochs_elementary); },
        [](RunConfig& c, const json& v) {
          c.course.epochs_elementary =
              as_number<unsigned>(v, "train.epochs_elementary");
        });
    add("train.epochs_advanced",
        [](const RunConfig& c) { return json(c.course.epochs_advanced); },
        [](RunConfig& c, const json& v) {
          c.course.epochs_advanced =
              as_number<unsigned>(v, "train.epochs_advanced");
        });
    add("train.epochs_finetune",
        [](const RunConfig& c) { return json(c.course.epochs_finetune); },
        [](RunConfig& c, const json& v) {
          c.course.epochs_finetune =
              as_number<unsigned>(v, "train.epochs_finetune");
        });
    add("train.patience",
        [](const RunConfig& c) { return json(c.course.patience); },
        [](RunConfig& c, const json& v) {
          c.course.patience = as_number<unsigned>(v, "train.patience");
        });
    add("train.mnp_literal",
        [](const RunConfig& c) { return json(c.course.mnp_literal); },
        [](RunConfig& c, const json& v) { c.course.mnp_literal = v.get<bool>(); });
    add("train.mode",
        [](const RunConfig& c) { return json(mode_name(c.course.mode)); },
        [](RunConfig& c, const json& v) {
          c.course.mode = mode_from_name(v.get<std::string>());
        });
    add("eval.n_neg", [](const RunConfig& c) { return json(c.eval_n_neg); },
        [](RunConfig& c, const json& v) {
          c.eval_n_neg = as_number<unsigned>(v, "eval.n_neg");
        });
    add("eval.valid_n_neg",
        [](const RunConfig& c) { return json(c.valid_n_neg); },
        [](RunConfig& c, const json& v) {
          c.valid_n_neg = as_number<unsigned>(v, "eval.valid_n_neg");
        });
    add("eval.cutoffs", [](const RunConfig& c) { return json(c.cutoffs); },
        [](RunConfig& c, const json& v) {
          c.cutoffs = v.get<std::vector<unsigned>>();
        });
    return b;
  }();
  return table;
}

}  // namespace detail

inline json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& b : detail::bindings()) out[b.key] = b.get(*this);
  return out;
}

inline RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    const detail::KeyBinding* found = nullptr;
    for (const auto& b : detail::bindings())
      if (b.key == key) {
        found = &b;
        break;
      }
    if (!found) {
      std::string keys;
      for (const auto& b : detail::bindings()) {
        if (!keys.empty()) keys += ", ";
        keys += b.key;
      }
      throw config_error("unknown config key \"" + key +
                         "\"; valid keys: " + keys);
    }
  }
  // apply in binding order so derived fields (sub-seeds) settle consistently
  for (const auto& b : detail::bindings())
    if (j.contains(b.key)) b.set(cfg, j.at(b.key));
  cfg.validate();
  return cfg;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("config parse failure in " + path + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset schema file: node types with counts, edge types with endpoints,
// symmetric flags and relation-file paths, the interaction relation, and an
// optional default meta-path list. Paths resolve relative to the schema file.
// ---------------------------------------------------------------------------

struct DatasetSchema {
  hin::Schema schema;
  std::vector<hin::RelationFile> relation_files;
  std::vector<std::string> metapaths;
};

inline DatasetSchema load_dataset_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open schema file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("schema parse failure in " + path + ": " + e.what());
  }
  DatasetSchema out;
  const auto dir = std::filesystem::path(path).parent_path();
  try {
    for (const auto& nt : j.at("node_types"))
      out.schema.node_types.push_back(
          {nt.at("name").get<std::string>(), nt.at("count").get<hin::NodeId>()});
    for (const auto& et : j.at("edge_types")) {
      hin::EdgeType e;
      e.name = et.at("name").get<std::string>();
      const int src = out.schema.type_index(et.at("src").get<std::string>());
      const int dst = out.schema.type_index(et.at("dst").get<std::string>());
      if (src < 0 || dst < 0)
        throw schema_error("edge type " + e.name + " references unknown types");
      e.src_type = static_cast<hin::TypeIdx>(src);
      e.dst_type = static_cast<hin::TypeIdx>(dst);
      e.symmetric = et.value("symmetric", false);
      out.schema.edge_types.push_back(e);
      if (et.contains("file"))
        out.relation_files.push_back(
            {e.name, (dir / et.at("file").get<std::string>()).string()});
    }
    const auto interaction = j.at("interaction").get<std::string>();
    const int ie = out.schema.edge_index(interaction);
    if (ie < 0)
      throw schema_error("interaction relation " + interaction +
                         " is not declared");
    out.schema.interaction_edge = static_cast<hin::EdgeIdx>(ie);
    if (j.contains("metapaths"))
      out.metapaths = j.at("metapaths").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw config_error("schema file " + path + ": " + e.what());
  }
  out.schema.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and stages.
// ---------------------------------------------------------------------------

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

struct StageRecord {
  std::string status;
  std::uint64_t config_hash = 0;
  std::string timestamp;
  std::vector<std::pair<std::string, std::uint32_t>> artifacts;  // path, crc
};

class RunManifest {
 public:
  explicit RunManifest(std::string out_dir) : out_dir_(std::move(out_dir)) {
    std::filesystem::create_directories(out_dir_);
    const auto path = file_path();
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      json j;
      in >> j;
      for (const auto& [stage, rec] : j.at("stages").items()) {
        StageRecord r;
        r.status = rec.at("status").get<std::string>();
        r.config_hash = std::stoull(rec.at("config_hash").get<std::string>(),
                                    nullptr, 16);
        r.timestamp = rec.at("timestamp").get<std::string>();
        for (const auto& a : rec.at("artifacts"))
          r.artifacts.emplace_back(a.at("path").get<std::string>(),
                                   a.at("crc32").get<std::uint32_t>());
        stages_[stage] = std::move(r);
      }
    }
  }

  const std::string& out_dir() const { return out_dir_; }
  std::string artifact(const std::string& name) const {
    return (std::filesystem::path(out_dir_) / name).string();
  }

  // Completed with this exact config and all artifacts intact?
  bool completed(const std::string& stage, std::uint64_t config_hash) const {
    auto it = stages_.find(stage);
    if (it == stages_.end() || it->second.status != "completed" ||
        it->second.config_hash != config_hash)
      return false;
    return artifacts_intact(it->second);
  }

  bool has_completed_any(const std::string& stage) const {
    auto it = stages_.find(stage);
    return it != stages_.end() && it->second.status == "completed" &&
           artifacts_intact(it->second);
  }

  void record(const std::string& stage, std::uint64_t config_hash,
              const std::vector<std::string>& artifact_names) {
    StageRecord rec;
    rec.status = "completed";
    rec.config_hash = config_hash;
    rec.timestamp = iso8601_now();
    for (const auto& name : artifact_names) {
      const auto path = artifact(name);
      const auto buf = io::read_file(path);
      rec.artifacts.emplace_back(name, io::crc32_of(buf.data(), buf.size()));
    }
    stages_[stage] = std::move(rec);
    save();
  }

  void save() const {
    json j;
    j["stages"] = json::object();
    for (const auto& [stage, rec] : stages_) {
      json r;
      r["status"] = rec.status;
      char hex[20];
      std::snprintf(hex, sizeof hex, "%016llx",
                    static_cast<unsigned long long>(rec.config_hash));
      r["config_hash"] = hex;
      r["timestamp"] = rec.timestamp;
      r["artifacts"] = json::array();
      for (const auto& [path, crc] : rec.artifacts)
        r["artifacts"].push_back({{"path", path}, {"crc32", crc}});
      j["stages"][stage] = std::move(r);
    }
    std::ofstream out(file_path(), std::ios::trunc);
    out << j.dump(2) << "\n";
  }

 private:
  bool artifacts_intact(const StageRecord& rec) const {
    for (const auto& [name, crc] : rec.artifacts) {
      const auto path = artifact(name);
      if (!std::filesystem::exists(path)) return false;
      const auto buf = io::read_file(path);
      if (io::crc32_of(buf.data(), buf.size()) != crc) return false;
    }
    return true;
  }

  std::string file_path() const {
    return (std::filesystem::path(out_dir_) / "manifest.json").string();
  }

  std::string out_dir_;
  std::map<std::string, StageRecord> stages_;
};

// One pipeline process per output directory.
class PipelineLock {
 public:
  explicit PipelineLock(const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    path_ = (std::filesystem::path(out_dir) / ".lock").string();
    if (std::filesystem::exists(path_))
      throw error("output directory is locked by another pipeline run (" +
                  path_ + "); remove the lock file if that run is gone");
    std::ofstream out(path_);
    out << "pid unknown, started " << iso8601_now() << "\n";
  }
  ~PipelineLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  PipelineLock(const PipelineLock&) = delete;

 private:
  std::string path_;
};

}  // namespace chest::pipeline
