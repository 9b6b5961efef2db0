#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chest/pipeline.hpp"

namespace chest::pipeline {

inline std::string format_epoch_log(const curriculum::EpochLog& log) {
  auto mean = [](double sum, std::size_t n) { return n ? sum / double(n) : 0.0; };
  std::ostringstream ss;
  ss << "course=" << log.course << " epoch=" << log.epoch << " loss="
     << log.losses.total;
  const auto& L = log.losses;
  if (L.n_mnp) ss << " mnp=" << mean(L.mnp, L.n_mnp);
  if (L.n_mep) ss << " mep=" << mean(L.mep, L.n_mep);
  if (L.n_mtp) ss << " mtp=" << mean(L.mtp, L.n_mtp);
  if (L.n_scl) ss << " scl=" << mean(L.scl, L.n_scl);
  if (L.n_rec) ss << " rec=" << mean(L.rec, L.n_rec);
  if (log.valid_hr >= 0) ss << " valid_hr10=" << log.valid_hr;
  ss << " wall_ms=" << log.wall_ms;
  return ss.str();
}

// Orchestrates the stage graph over one output directory. Shared inputs are
// loaded lazily and reused across stages within the process.
class StageRunner {
 public:
  StageRunner(RunManifest& manifest, RunConfig config,
              std::ostream& log = std::cout)
      : manifest_(manifest), cfg_(std::move(config)), log_(log) {
    cfg_.validate();
    if (cfg_.schema_path.empty())
      throw config_error("data.schema_path is required to run stages");
  }

  const RunConfig& config() const { return cfg_; }

  void run(const std::string& stage) {
    if (stage == "ingest") return ingest();
    if (stage == "embed") return embed_stage();
    if (stage == "build-subgraphs") return build_subgraphs();
    if (stage == "pretrain") return pretrain();
    if (stage == "finetune") return finetune();
    if (stage == "evaluate") return evaluate_stage();
    if (stage == "ablate") return ablate();
    if (stage == "all") {
      for (const char* s : {"ingest", "embed", "build-subgraphs", "pretrain",
                            "finetune", "evaluate"})
        run(s);
      return;
    }
    throw config_error("unknown stage: " + stage);
  }

 private:
  bool skip_if_completed(const std::string& stage) {
    if (manifest_.completed(stage, cfg_.hash())) {
      log_ << "[" << stage << "] up to date (config "
           << std::hex << cfg_.hash() << std::dec << "), skipping\n";
      return true;
    }
    return false;
  }

  void require(const std::string& stage, const std::string& prereq) {
    if (!manifest_.has_completed_any(prereq))
      throw dependency_error("stage \"" + stage + "\" requires stage \"" +
                             prereq + "\" to have completed in " +
                             manifest_.out_dir());
  }

  // ---- shared lazy inputs ----

  const DatasetSchema& dataset() {
    if (!dataset_) dataset_ = load_dataset_schema(cfg_.schema_path);
    return *dataset_;
  }

  const hin::Hin& graph() {
    if (!hin_) {
      hin::LoadReport report;
      hin_ = std::make_unique<hin::Hin>(
          hin::load_hin(dataset().relation_files, dataset().schema, &report));
      for (const auto& w : report.warnings) log_ << "warning: " << w << "\n";
      load_report_ = report;
    }
    return *hin_;
  }

  const hin::InteractionSplit& split() {
    if (!split_) {
      const auto path = manifest_.artifact("split.tsv");
      if (!std::filesystem::exists(path))
        throw dependency_error("split.tsv missing; run the ingest stage first");
      split_ = hin::load_split(
          path, graph().type_count(graph().schema().user_type()));
    }
    return *split_;
  }

  std::vector<hin::MetaPath> metapaths() {
    const auto& labels =
        cfg_.metapaths.empty() ? dataset().metapaths : cfg_.metapaths;
    if (labels.empty())
      throw config_error(
          "no meta-paths: set \"metapaths\" in the config or the schema file");
    std::vector<hin::MetaPath> out;
    for (const auto& l : labels)
      out.push_back(hin::MetaPath::parse(dataset().schema, l));
    return out;
  }

  embed::NodeVectors load_vectors() {
    return embed::NodeVectors::load(manifest_.artifact("vectors.bin"));
  }

  subgraph::SamplerConfig sampler_config() const {
    subgraph::SamplerConfig scfg;
    scfg.K = cfg_.K;
    scfg.pool_multiplier = cfg_.pool_multiplier;
    scfg.seed = rng::derive(cfg_.seed, "sample");
    return scfg;
  }

  // The CSV schema always reports @10 and @20; extra cutoffs ride along.
  std::vector<unsigned> eval_cutoffs() const {
    std::vector<unsigned> ks = cfg_.cutoffs;
    for (unsigned k : {10u, 20u})
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    std::sort(ks.begin(), ks.end());
    return ks;
  }

  model::ModelDims model_dims() {
    model::ModelDims dims;
    dims.n_nodes = static_cast<std::uint32_t>(graph().total_nodes());
    dims.n_types =
        static_cast<std::uint32_t>(graph().schema().node_types.size());
    dims.n_slots = cfg_.n_slots;
    dims.n_max = cfg_.n_max;
    dims.d = cfg_.d;
    dims.d_ff = cfg_.d_ff;
    dims.layers = cfg_.layers;
    dims.heads = cfg_.heads;
    dims.n_metapaths = static_cast<std::uint32_t>(metapaths().size());
    dims.layer_norm = cfg_.layer_norm;
    return dims;
  }

  curriculum::TrainHooks hooks_for(const subgraph::SubgraphProvider& provider,
                                   std::ofstream& log_file) {
    curriculum::TrainHooks hooks;
    hooks.on_epoch = [this, &log_file](const curriculum::EpochLog& log) {
      const auto line = format_epoch_log(log);
      log_file << line << "\n";
      log_file.flush();
      log_ << "  " << line << "\n";
    };
    hooks.validate = [this, &provider](const model::ModelParams<float>& p) {
      auto rep = eval::evaluate(p, provider, split().valid, {10},
                                cfg_.valid_n_neg,
                                rng::derive(cfg_.seed, "valid"),
                                cfg_.threads, cfg_.hash());
      return rep.hr_at(10);
    };
    return hooks;
  }

  // ---- stages ----

  void ingest() {
    if (skip_if_completed("ingest")) return;
    const auto& hin = graph();
    auto split = hin::split_leave_one_out(hin, rng::derive(cfg_.seed, "split"));
    hin::save_split(split, manifest_.artifact("split.tsv"));

    json report;
    report["dataset"] = cfg_.dataset_name;
    report["relations"] = json::array();
    for (const auto& [name, count] : load_report_.relation_counts)
      report["relations"].push_back({{"name", name}, {"edges", count}});
    report["warnings"] = load_report_.warnings;
    std::size_t evaluable = 0;
    for (auto f : split.user_evaluable) evaluable += f;
    report["users"] = hin.type_count(hin.schema().user_type());
    report["items"] = hin.type_count(hin.schema().item_type());
    report["evaluable_users"] = evaluable;
    report["train_pairs"] = split.train.size();
    std::ofstream out(manifest_.artifact("ingest_report.json"));
    out << report.dump(2) << "\n";
    out.close();

    for (const auto& mp : metapaths()) (void)mp;  // validate early
    manifest_.record("ingest", cfg_.hash(), {"split.tsv", "ingest_report.json"});
    log_ << "[ingest] " << report["train_pairs"] << " train pairs, "
         << evaluable << " evaluable users\n";
  }

  void embed_stage() {
    if (skip_if_completed("embed")) return;
    require("embed", "ingest");
    auto mps = metapaths();
    auto walks = embed::generate_walks(graph(), mps, cfg_.walks_per_node,
                                       cfg_.walk_length,
                                       rng::derive(cfg_.seed, "walks"));
    embed::SkipgramConfig sg = cfg_.sg;
    sg.seed = rng::derive(cfg_.seed, "embed");
    embed::SkipgramStats stats;
    auto vectors = embed::train_skipgram(graph(), walks, sg, &stats);
    vectors.save(manifest_.artifact("vectors.bin"));
    std::vector<std::string> type_names;
    for (const auto& nt : graph().schema().node_types)
      type_names.push_back(nt.name);
    vectors.export_text(manifest_.artifact("vectors.txt"), type_names);
    manifest_.record("embed", cfg_.hash(), {"vectors.bin", "vectors.txt"});
    log_ << "[embed] " << walks.size() << " walks";
    if (!stats.epoch_mean_loss.empty())
      log_ << ", sgns loss " << stats.epoch_mean_loss.front() << " -> "
           << stats.epoch_mean_loss.back();
    log_ << ", " << stats.unvisited_nodes << " unvisited nodes\n";
  }

  void build_subgraphs() {
    if (skip_if_completed("build-subgraphs")) return;
    require("build-subgraphs", "embed");
    auto vectors = load_vectors();
    auto mps = metapaths();
    subgraph::SubgraphProvider provider(graph(), vectors, mps,
                                        sampler_config());
    const auto& pairs = split().train;

    subgraph::SubgraphCorpus corpus;
    corpus.K = cfg_.K;
    corpus.seed = sampler_config().seed;
    for (const auto& mp : mps) corpus.metapath_labels.push_back(mp.label);

    std::vector<subgraph::CorpusEntry> entries(pairs.size());
    parallel_chunks(pairs.size(),
                    cfg_.threads ? cfg_.threads : default_threads(),
                    [&](std::size_t lo, std::size_t hi, unsigned) {
                      for (std::size_t k = lo; k < hi; ++k)
                        entries[k] =
                            provider.build(pairs[k].first, pairs[k].second);
                    });
    std::size_t with_paths = 0;
    for (auto& e : entries) {
      with_paths += e.selected.empty() ? 0 : 1;
      corpus.entries.emplace(std::make_pair(e.user, e.item), std::move(e));
    }
    subgraph::persist_corpus(corpus, manifest_.artifact("corpus.bin"));
    manifest_.record("build-subgraphs", cfg_.hash(), {"corpus.bin"});
    log_ << "[build-subgraphs] " << corpus.entries.size() << " entries, "
         << with_paths << " with connecting paths\n";
  }

  void pretrain() {
    if (skip_if_completed("pretrain")) return;
    require("pretrain", "build-subgraphs");
    auto vectors = load_vectors();
    auto mps = metapaths();
    subgraph::SubgraphProvider provider(graph(), vectors, mps,
                                        sampler_config());
    provider.seed_from_corpus(
        subgraph::load_corpus(manifest_.artifact("corpus.bin")));

    auto params =
        model::init_params<float>(model_dims(), rng::derive(cfg_.seed, "init"));
    std::ofstream log_file(manifest_.artifact("pretrain_log.txt"),
                           std::ios::trunc);
    auto course = cfg_.course;
    course.threads = cfg_.threads;
    curriculum::Trainer trainer(provider, split(), course);
    auto hooks = hooks_for(provider, log_file);
    hooks.validate = nullptr;  // no early stopping during pre-training
    try {
      trainer.run_pretrain(params, hooks);
    } catch (const numeric_fault&) {
      save_params(params, "checkpoint_aborted.bin", "pretrain-aborted");
      throw;
    }
    log_file.close();
    save_params(params, "checkpoint_pretrained.bin", "pretrained");
    manifest_.record("pretrain", cfg_.hash(),
                     {"checkpoint_pretrained.bin", "pretrain_log.txt"});
    log_ << "[pretrain] done\n";
  }

  void finetune() {
    if (skip_if_completed("finetune")) return;
    require("finetune", "pretrain");
    auto vectors = load_vectors();
    auto mps = metapaths();
    subgraph::SubgraphProvider provider(graph(), vectors, mps,
                                        sampler_config());
    provider.seed_from_corpus(
        subgraph::load_corpus(manifest_.artifact("corpus.bin")));

    model::CheckpointMeta meta;
    auto params = model::load_checkpoint<float>(
        manifest_.artifact("checkpoint_pretrained.bin"), &meta);
    if (!(params.dims == model_dims()))
      throw contract_error(
          "pretrained checkpoint dims do not match the current config");

    std::ofstream log_file(manifest_.artifact("finetune_log.txt"),
                           std::ios::trunc);
    auto course = cfg_.course;
    course.threads = cfg_.threads;
    curriculum::Trainer trainer(provider, split(), course);
    auto hooks = hooks_for(provider, log_file);
    if (split().valid.empty()) hooks.validate = nullptr;
    try {
      trainer.run_finetune(params, hooks);
    } catch (const numeric_fault&) {
      save_params(params, "checkpoint_aborted.bin", "finetune-aborted");
      throw;
    }
    log_file.close();
    save_params(params, "checkpoint_final.bin", "finetuned");
    manifest_.record("finetune", cfg_.hash(),
                     {"checkpoint_final.bin", "finetune_log.txt"});
    log_ << "[finetune] done\n";
  }

  void evaluate_stage() {
    if (skip_if_completed("evaluate")) return;
    require("evaluate", "finetune");
    auto rep = evaluate_checkpoint("checkpoint_final.bin");
    std::ofstream csv(manifest_.artifact("metrics.csv"), std::ios::trunc);
    csv << eval::metrics_csv_header() << "\n"
        << eval::metrics_csv_row(rep, cfg_.dataset_name, "full") << "\n";
    csv.close();
    std::ofstream txt(manifest_.artifact("metrics.txt"), std::ios::trunc);
    txt << eval::metrics_table(rep);
    txt.close();
    manifest_.record("evaluate", cfg_.hash(), {"metrics.csv", "metrics.txt"});
    log_ << "[evaluate] " << cfg_.dataset_name << " ("
         << rep.users << " users)\n" << eval::metrics_table(rep);
  }

  // The seven Table-style variants: the full model plus one-change ablations.
  void ablate() {
    if (skip_if_completed("ablate")) return;
    require("ablate", "build-subgraphs");
    auto vectors = load_vectors();
    auto mps = metapaths();
    subgraph::SubgraphProvider provider(graph(), vectors, mps,
                                        sampler_config());
    provider.seed_from_corpus(
        subgraph::load_corpus(manifest_.artifact("corpus.bin")));

    struct Variant {
      std::string name;
      std::function<void(curriculum::CourseConfig&)> tweak;
    };
    const std::vector<Variant> variants = {
        {"full", [](curriculum::CourseConfig&) {}},
        {"no-mnp", [](curriculum::CourseConfig& c) { c.w_mnp = 0; }},
        {"no-mep", [](curriculum::CourseConfig& c) { c.w_mep = 0; }},
        {"no-mtp", [](curriculum::CourseConfig& c) { c.w_mtp = 0; }},
        {"no-scl",
         [](curriculum::CourseConfig& c) { c.epochs_advanced = 0; }},
        {"multi-task",
         [](curriculum::CourseConfig& c) {
           c.mode = curriculum::CurriculumMode::multi_task;
         }},
        {"reverse-courses", [](curriculum::CourseConfig& c) {
           c.mode = curriculum::CurriculumMode::reverse_courses;
         }}};

    std::ofstream csv(manifest_.artifact("ablations.csv"), std::ios::trunc);
    csv << eval::metrics_csv_header() << "\n";
    std::ofstream log_file(manifest_.artifact("ablate_log.txt"),
                           std::ios::trunc);
    for (const auto& variant : variants) {
      auto course = cfg_.course;
      course.threads = cfg_.threads;
      variant.tweak(course);
      auto params = model::init_params<float>(
          model_dims(), rng::derive(cfg_.seed, "init"));
      curriculum::Trainer trainer(provider, split(), course);
      curriculum::TrainHooks hooks = hooks_for(provider, log_file);
      auto base_on_epoch = hooks.on_epoch;
      hooks.on_epoch = [&, base_on_epoch](const curriculum::EpochLog& el) {
        curriculum::EpochLog tagged = el;
        tagged.course = variant.name + ":" + el.course;
        base_on_epoch(tagged);
      };
      if (split().valid.empty()) hooks.validate = nullptr;
      auto pre_hooks = hooks;
      pre_hooks.validate = nullptr;
      trainer.run_pretrain(params, pre_hooks);
      trainer.run_finetune(params, hooks);
      auto rep = eval::evaluate(params, provider, split().test, eval_cutoffs(),
                                cfg_.eval_n_neg,
                                rng::derive(cfg_.seed, "eval"), cfg_.threads,
                                cfg_.hash());
      csv << eval::metrics_csv_row(rep, cfg_.dataset_name, variant.name)
          << "\n";
      csv.flush();
      log_ << "[ablate] " << variant.name << " hr@" << cfg_.cutoffs.back()
           << "=" << rep.hr.back() << "\n";
    }
    csv.close();
    log_file.close();
    manifest_.record("ablate", cfg_.hash(), {"ablations.csv", "ablate_log.txt"});
  }

  eval::MetricsReport evaluate_checkpoint(const std::string& name) {
    auto vectors = load_vectors();
    auto mps = metapaths();
    subgraph::SubgraphProvider provider(graph(), vectors, mps,
                                        sampler_config());
    model::CheckpointMeta meta;
    auto params =
        model::load_checkpoint<float>(manifest_.artifact(name), &meta);
    return eval::evaluate(params, provider, split().test, eval_cutoffs(),
                          cfg_.eval_n_neg, rng::derive(cfg_.seed, "eval"),
                          cfg_.threads, cfg_.hash());
  }

  void save_params(const model::ModelParams<float>& params,
                   const std::string& name, const std::string& course) {
    model::CheckpointMeta meta;
    meta.config_hash = cfg_.hash();
    meta.root_seed = cfg_.seed;
    meta.course = course;
    model::save_checkpoint(manifest_.artifact(name), params,
                           static_cast<model::AdamState<float>*>(nullptr),
                           meta);
  }

  RunManifest& manifest_;
  RunConfig cfg_;
  std::ostream& log_;
  std::optional<DatasetSchema> dataset_;
  std::unique_ptr<hin::Hin> hin_;
  hin::LoadReport load_report_;
  std::optional<hin::InteractionSplit> split_;
};

}  // namespace chest::pipeline
