#pragma once

// The `epcfusion` command line. Every command reads one RunConfig, writes its
// artifacts under the output directory and records them in manifest.json.
// Failures print one JSON object on stderr and map to a fixed exit code.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epcfusion/cli/config.hpp"
#include "epcfusion/datahub/ingest.hpp"
#include "epcfusion/explain/gate.hpp"
#include "epcfusion/explain/occlusion.hpp"
#include "epcfusion/explain/shapley.hpp"
#include "epcfusion/explain/spatial.hpp"
#include "epcfusion/retrofit/scenario.hpp"
#include "epcfusion/trainer/gradcheck_suite.hpp"
#include "epcfusion/trainer/report.hpp"

#ifndef EPCFUSION_VERSION
#define EPCFUSION_VERSION "0.0.0"
#endif

namespace epcfusion::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitDiverged = 4,
  kExitInternal = 5,
  kExitMissingFile = 6,
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return kExitConfig;
    case ErrorKind::TrainingDiverged: return kExitDiverged;
    case ErrorKind::MissingFile: return kExitMissingFile;
    case ErrorKind::Internal: return kExitInternal;
    default: return kExitData;
  }
}

inline int report_error(std::ostream& err, std::string_view kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

inline json versions() {
  return {{"epcfusion", EPCFUSION_VERSION},
          {"checkpoint_format", diffcore::kCheckpointVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

inline void require_file(const fs::path& path, std::string_view what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) fail(ErrorKind::MissingFile, std::string(what) + " not found: " + path.string());
}

inline std::ifstream open_input(const fs::path& path, std::string_view what) {
  require_file(path, what);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + std::string(what) + ": " + path.string());
  return in;
}

// Output files of one command, written whole and then listed in the manifest.
class Session {
 public:
  Session(const RunConfig& config, std::string command, std::ostream& out)
      : config_(config), command_(std::move(command)), out_(out), dir_(config.resolve(config.output_dir)) {}

  const RunConfig& config() const { return config_; }
  std::ostream& out() { return out_; }
  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, const std::function<void(std::ostream&)>& fill) {
    write_path(dir_ / name, fill);
  }

  void write_json(const std::string& name, const json& j) {
    write(name, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  }

  void write_path(const fs::path& path, const std::function<void(std::ostream&)>& fill) {
    std::ostringstream buf;
    fill(buf);
    const std::string bytes = buf.str();
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
      fail(ErrorKind::InvalidConfig, "cannot write " + path.string());
    }
    const fs::path rel = path.lexically_proximate(dir_);
    const std::string key = rel.empty() || *rel.begin() == ".." ? path.generic_string() : rel.generic_string();
    outputs_.push_back({{"path", key}, {"bytes", bytes.size()}, {"fnv1a64", explain::hex64(diffcore::fnv1a64(bytes))}});
  }

  // Merges this command's entry into manifest.json; other commands' entries stay.
  void finish() {
    const fs::path path = dir_ / "manifest.json";
    json manifest = json::object();
    if (std::ifstream in(path, std::ios::binary); in) {
      try {
        manifest = json::parse(in);
      } catch (const json::exception&) {
        manifest = json::object();
      }
      if (!manifest.is_object()) manifest = json::object();
    }
    manifest[command_] = {{"command", command_},      {"config_hash", config_.hash()}, {"seed", config_.seed},
                          {"versions", versions()}, {"outputs", outputs_}};
    std::error_code ec;
    fs::create_directories(dir_, ec);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!(f << manifest.dump(2) << '\n')) fail(ErrorKind::InvalidConfig, "cannot write " + path.string());
  }

 private:
  const RunConfig& config_;
  std::string command_;
  std::ostream& out_;
  fs::path dir_;
  json outputs_ = json::array();
};

struct LoadedData {
  datahub::Dataset dataset;
  datahub::IngestReport report;
};

inline void require_data_files(const RunConfig& c) {
  require_file(c.resolve(c.data.properties), "properties file");
  require_file(c.resolve(c.data.boundaries), "boundaries file");
  require_file(c.resolve(c.data.text_embeddings), "text embeddings file");
}

inline LoadedData load_data(const RunConfig& c, const fusionnet::ModelConfig& model,
                            std::optional<datahub::Schema> schema = std::nullopt) {
  datahub::IngestReport report;
  auto props = open_input(c.resolve(c.data.properties), "properties file");
  auto epc = datahub::read_properties_csv(props, report);
  auto bounds = open_input(c.resolve(c.data.boundaries), "boundaries file");
  const auto boundaries = datahub::read_boundaries_jsonl(bounds, report);
  auto emb = open_input(c.resolve(c.data.text_embeddings), "text embeddings file");
  const auto embeddings = datahub::read_text_embeddings_jsonl(emb, static_cast<std::size_t>(model.h), report);
  datahub::LinkOptions link;
  link.boundary_length = static_cast<std::size_t>(model.boundary_length);
  link.schema = std::move(schema);
  auto linked = datahub::link_records(std::move(epc), boundaries, embeddings, report, link);
  if (linked.dataset.empty()) fail(ErrorKind::EmptyInput, "no records survived linking");
  return {std::move(linked.dataset), std::move(linked.report)};
}

inline fs::path checkpoint_path(const RunConfig& c, const std::string& flag) {
  return flag.empty() ? c.resolve(c.output_dir) / "model.ckpt" : fs::path(flag);
}

inline fusionnet::ModelBundle load_bundle(const fs::path& path) {
  require_file(path, "checkpoint");
  return fusionnet::ModelBundle::from_checkpoint(diffcore::load_checkpoint(path.string()));
}

// The split a checkpoint was trained on: same ratios, its own seed and bands.
inline datahub::SplitIndices checkpoint_split(const RunConfig& c, const fusionnet::ModelBundle& bundle,
                                              const std::vector<datahub::PropertyRecord>& records) {
  return datahub::joint_stratified_split(records, bundle.bands, c.split, bundle.seed);
}

inline const std::vector<std::size_t>& evaluated_indices(const datahub::SplitIndices& split, std::string& name) {
  if (!split.test.empty()) {
    name = "test";
    return split.test;
  }
  name = "val";
  if (split.val.empty()) fail(ErrorKind::EmptyInput, "split has neither test nor validation rows");
  return split.val;
}

inline std::string file_safe(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return s;
}

inline void print_epoch(std::ostream& out, const std::string& label, const trainer::EpochRecord& e) {
  out << label << "epoch " << e.epoch << " train_loss=" << format_double(e.train_loss)
      << " val_loss=" << format_double(e.val_loss) << " val_r2_sap=" << trainer::metric_cell(e.val.target[0].r2)
      << " val_r2_ei=" << trainer::metric_cell(e.val.target[1].r2) << '\n';
}

// ---- commands --------------------------------------------------------------

inline int cmd_synth(Session& s) {
  const RunConfig& c = s.config();
  const datahub::SynthDataset data = datahub::generate_synthetic(c.synth);
  s.write_path(c.resolve(c.data.properties), [&](std::ostream& o) { datahub::write_properties_csv(o, data.epc); });
  s.write_path(c.resolve(c.data.boundaries), [&](std::ostream& o) { datahub::write_boundaries_jsonl(o, data.boundaries); });
  s.write_path(c.resolve(c.data.text_embeddings),
               [&](std::ostream& o) { datahub::write_text_embeddings_jsonl(o, data.embeddings); });
  s.write_path(c.resolve(c.data.mask_embeddings),
               [&](std::ostream& o) { datahub::write_mask_embeddings_jsonl(o, data.masks); });
  s.write_path(c.resolve(c.data.replacement_embeddings),
               [&](std::ostream& o) { datahub::write_replacement_embeddings_jsonl(o, data.replacements); });
  s.out() << "synth: " << data.epc.size() << " properties, " << data.boundaries.size() << " footprints, "
          << data.embeddings.size() << " text embeddings\n";
  return kExitOk;
}

inline int cmd_ingest(Session& s) {
  const RunConfig& c = s.config();
  require_data_files(c);
  const LoadedData data = load_data(c, c.model);
  json j = data.report.to_json();
  j["records"] = data.dataset.size();
  json vocab;
  for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
    vocab[std::string(datahub::kCategoricalFields[f])] = data.dataset.schema.vocabularies[f].size();
  }
  j["vocab_sizes"] = vocab;
  s.write_json("ingest_report.json", j);
  s.out() << "ingest: " << data.dataset.size() << " linked records of " << data.report.epc_rows << " EPC rows\n";
  return kExitOk;
}

inline int cmd_split(Session& s) {
  const RunConfig& c = s.config();
  require_data_files(c);
  const LoadedData data = load_data(c, c.model);
  const auto& records = data.dataset.records;
  const datahub::SplitIndices split = datahub::joint_stratified_split(records, c.bands, c.split, c.seed);
  auto uprns = [&](const std::vector<std::size_t>& idx) {
    json a = json::array();
    for (std::size_t i : idx) a.push_back(records[i].uprn);
    return a;
  };
  json j = {{"seed", c.seed},
            {"ratios", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
            {"counts", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}},
            {"train", uprns(split.train)},
            {"val", uprns(split.val)},
            {"test", uprns(split.test)}};
  s.write_json("split.json", j);
  s.out() << "split: train=" << split.train.size() << " val=" << split.val.size() << " test=" << split.test.size()
          << '\n';
  return kExitOk;
}

inline void write_evaluation_files(Session& s, const std::string& label, const trainer::RecordPtrs& rows,
                                   const std::vector<trainer::Scores>& pred, const trainer::EvalSummary& summary,
                                   const datahub::BandTable& bands) {
  s.write("predictions.csv", [&](std::ostream& o) { trainer::write_predictions_csv(o, rows, pred, bands); });
  s.write("confusion_" + label + ".csv", [&](std::ostream& o) { trainer::write_confusion_csv(o, summary); });
}

inline int cmd_train(Session& s) {
  const RunConfig& c = s.config();
  require_data_files(c);
  const LoadedData data = load_data(c, c.model);
  const auto& records = data.dataset.records;
  const datahub::SplitIndices split = datahub::joint_stratified_split(records, c.bands, c.split, c.seed);
  fusionnet::ModelBundle bundle =
      trainer::prepare_bundle(c.model, data.dataset.schema, records, split.train, c.bands, c.seed);
  const trainer::TrainReport report =
      trainer::train(bundle, records, split, c.train, c.seed,
                     [&](const trainer::EpochRecord& e) { print_epoch(s.out(), "", e); });

  s.write("model.ckpt", [&](std::ostream& o) { diffcore::write_checkpoint(o, bundle.to_checkpoint()); });
  s.write_json("metrics.json", report.to_json());
  std::string which;
  const trainer::RecordPtrs rows = trainer::select_ptrs(records, evaluated_indices(split, which));
  const auto pred = fusionnet::predict_scores(bundle, rows);
  write_evaluation_files(s, trainer::config_label(c.model.modalities), rows, pred,
                         trainer::summarize(pred, trainer::truth_of(rows), bundle.bands), bundle.bands);
  s.out() << "train: best epoch " << report.best_epoch << " of " << report.stopping_epoch << " (" << report.stop_reason
          << ")\n";
  return kExitOk;
}

inline int cmd_evaluate(Session& s, const std::string& ckpt_flag) {
  const RunConfig& c = s.config();
  const fs::path ckpt = checkpoint_path(c, ckpt_flag);
  require_file(ckpt, "checkpoint");
  require_data_files(c);
  const fusionnet::ModelBundle bundle = load_bundle(ckpt);
  const LoadedData data = load_data(c, bundle.config(), bundle.schema);
  const auto& records = data.dataset.records;
  const datahub::SplitIndices split = checkpoint_split(c, bundle, records);
  std::string which;
  const trainer::RecordPtrs rows = trainer::select_ptrs(records, evaluated_indices(split, which));
  const auto pred = fusionnet::predict_scores(bundle, rows);
  const auto summary = trainer::summarize(pred, trainer::truth_of(rows), bundle.bands);

  json j = {{"split", which}, {"n", rows.size()}, {"checkpoint", explain::checkpoint_hash(bundle)},
            {"modalities", bundle.config().modalities.name()}, {"metrics", summary.to_json()}};
  s.write_json("evaluation.json", j);
  write_evaluation_files(s, trainer::config_label(bundle.config().modalities), rows, pred, summary, bundle.bands);
  for (auto key : {trainer::SubgroupKey::PropertyType, trainer::SubgroupKey::BuiltForm, trainer::SubgroupKey::AgeBand}) {
    const auto groups = trainer::subgroup_report(rows, pred, key, bundle.bands);
    s.write("subgroup_" + std::string(trainer::to_string(key)) + ".csv",
            [&](std::ostream& o) { trainer::write_subgroup_csv(o, key, groups); });
  }
  const auto& m = summary.metrics;
  s.out() << "evaluate (" << which << ", n=" << rows.size() << "): mae_sap=" << format_double(m.target[0].mae)
          << " mae_ei=" << format_double(m.target[1].mae) << " r2_sap=" << trainer::metric_cell(m.target[0].r2)
          << " r2_ei=" << trainer::metric_cell(m.target[1].r2) << '\n';
  return kExitOk;
}

inline int cmd_ablate(Session& s) {
  const RunConfig& c = s.config();
  require_data_files(c);
  const LoadedData data = load_data(c, c.model);
  const auto& records = data.dataset.records;
  const datahub::SplitIndices split = datahub::joint_stratified_split(records, c.bands, c.split, c.seed);
  const trainer::AblationResult result =
      trainer::run_ablation(c.model, data.dataset.schema, records, split, c.bands, c.train, c.seed,
                            [&](const fusionnet::Modalities& m, const trainer::EpochRecord& e) {
                              print_epoch(s.out(), "[" + m.name() + "] ", e);
                            });
  s.write("ablation.csv", [&](std::ostream& o) { trainer::write_ablation_csv(o, result); });
  json rows = json::array();
  for (const auto& row : result.rows) {
    json r = {{"modalities", row.modalities.name()}, {"ok", row.ok()}};
    if (row.summary) r["summary"] = row.summary->to_json();
    if (row.report) r["report"] = row.report->to_json();
    if (!row.ok()) {
      r["error_kind"] = row.error_kind;
      r["error"] = row.error;
    }
    rows.push_back(r);
    if (row.summary) {
      s.write("confusion_" + trainer::config_label(row.modalities) + ".csv",
              [&](std::ostream& o) { trainer::write_confusion_csv(o, *row.summary); });
    }
  }
  s.write_json("ablation.json", {{"evaluated_split", result.evaluated_split}, {"rows", rows}});
  std::size_t failed = 0;
  for (const auto& row : result.rows) failed += row.ok() ? 0 : 1;
  s.out() << "ablate: " << result.rows.size() - failed << " of " << result.rows.size() << " configurations evaluated on "
          << result.evaluated_split << '\n';
  return kExitOk;
}

inline const std::vector<std::string>& explain_kinds() {
  static const std::vector<std::string> kinds = {"gate",     "shapley", "occlusion", "spatial",
                                                 "boundary", "saliency", "all"};
  return kinds;
}

inline int cmd_explain(Session& s, const std::string& kind, const std::string& ckpt_flag) {
  const RunConfig& c = s.config();
  const fs::path ckpt = checkpoint_path(c, ckpt_flag);
  require_file(ckpt, "checkpoint");
  require_data_files(c);
  const bool all = kind == "all";
  const fusionnet::ModelBundle bundle = load_bundle(ckpt);
  const fusionnet::Modalities& mods = bundle.config().modalities;
  if ((kind == "occlusion" || (all && mods.text))) require_file(c.resolve(c.data.mask_embeddings), "mask embeddings file");

  const LoadedData data = load_data(c, bundle.config(), bundle.schema);
  const auto& records = data.dataset.records;
  const datahub::SplitIndices split = checkpoint_split(c, bundle, records);
  std::string which;
  const trainer::RecordPtrs rows = trainer::select_ptrs(records, evaluated_indices(split, which));
  const std::string hash = explain::checkpoint_hash(bundle);
  auto prov = [&](std::string analysis, std::size_t n) {
    explain::Provenance p{std::move(analysis), c.seed, hash, n, {}};
    p.extra.emplace_back("split", which);
    return p;
  };

  if (kind == "gate" || all) {
    const auto stats = explain::gate_weight_stats(bundle, rows);
    const auto p = prov("gate", rows.size());
    s.write_json("gate_weights.json", stats.to_json(p));
    s.write("gate_weights.csv", [&](std::ostream& o) { explain::write_gate_csv(o, stats, p); });
    s.out() << "explain gate: " << rows.size() << " samples\n";
  }
  if (kind == "shapley" || (all && mods.tab)) {
    const trainer::RecordPtrs pool = trainer::select_ptrs(records, split.train);
    const trainer::RecordPtrs background = explain::select_background(pool, c.explain.background, c.seed);
    const std::size_t n = std::min(c.explain.samples, rows.size());
    const auto samples = std::span<const datahub::PropertyRecord* const>(rows).first(n);
    const auto result = explain::shapley_tabular(bundle, samples, background);
    auto p = prov("shapley", n);
    p.extra.emplace_back("background", "train_seeded_" + std::to_string(background.size()));
    s.write("shapley.csv", [&](std::ostream& o) { explain::write_shapley_csv(o, result, p); });
    double worst = 0.0;
    for (const auto& sample : result.samples) worst = std::max(worst, sample.efficiency_error());
    s.out() << "explain shapley: " << n << " samples, background " << background.size()
            << ", max efficiency error " << format_double(worst) << '\n';
  }
  if (kind == "occlusion" || (all && mods.text)) {
    auto in = open_input(c.resolve(c.data.mask_embeddings), "mask embeddings file");
    const auto masks = datahub::read_mask_embeddings_jsonl(in, static_cast<std::size_t>(bundle.config().h));
    const auto result = explain::text_field_occlusion(bundle, rows, masks);
    s.write("text_occlusion.csv",
            [&](std::ostream& o) { explain::write_occlusion_csv(o, result, prov("text_occlusion", rows.size())); });
    s.out() << "explain occlusion: " << result.fields.size() << " fields\n";
  }
  if (kind == "spatial" || (all && mods.spatial)) {
    std::vector<explain::SpatialPermutationResult> results;
    for (std::size_t f = 0; f < datahub::kNumSpatialNumeric; ++f) {
      results.push_back(explain::spatial_permutation(bundle, rows, f, c.seed));
    }
    s.write("spatial_permutation.csv", [&](std::ostream& o) {
      explain::write_spatial_permutation_csv(o, results, prov("spatial_permutation", rows.size()));
    });
    s.out() << "explain spatial: " << results.size() << " features\n";
  }
  if (kind == "boundary" || (all && mods.spatial)) {
    const auto result = explain::boundary_permutation(bundle, rows, c.seed);
    s.write_json("boundary_permutation.json", result.to_json(prov("boundary_permutation", rows.size())));
    s.out() << "explain boundary: delta_mae_sap="
            << format_double(result.permuted.target[0].mae - result.baseline.target[0].mae) << '\n';
  }
  if (kind == "saliency" || (all && mods.spatial)) {
    std::vector<const datahub::PropertyRecord*> targets;
    if (c.explain.saliency_uprns.empty()) {
      for (std::size_t i = 0; i < std::min(c.explain.saliency_count, rows.size()); ++i) targets.push_back(rows[i]);
    } else {
      for (const std::string& uprn : c.explain.saliency_uprns) {
        auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.uprn == uprn; });
        if (it == records.end()) fail(ErrorKind::InvalidConfig, "saliency uprn '" + uprn + "' is not in the dataset");
        targets.push_back(&*it);
      }
    }
    for (const auto* r : targets) {
      const auto sal = explain::point_saliency(bundle, *r);
      auto p = prov("saliency", 1);
      p.extra.emplace_back("uprn", r->uprn);
      s.write("saliency_" + file_safe(r->uprn) + ".csv", [&](std::ostream& o) { explain::write_saliency_csv(o, sal, p); });
    }
    s.out() << "explain saliency: " << targets.size() << " footprints\n";
  }
  return kExitOk;
}

inline int cmd_scenario(Session& s, const std::string& file, const std::string& ckpt_flag) {
  const RunConfig& c = s.config();
  const fs::path ckpt = checkpoint_path(c, ckpt_flag);
  const fs::path spec_path(file);
  require_file(spec_path, "scenario file");
  require_file(ckpt, "checkpoint");
  require_data_files(c);
  require_file(c.resolve(c.data.replacement_embeddings), "replacement embeddings file");

  json spec_json;
  {
    std::ifstream in(spec_path, std::ios::binary);
    try {
      spec_json = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidConfig, "scenario file " + file + ": " + e.what());
    }
  }
  const retrofit::ScenarioSpec spec = retrofit::ScenarioSpec::from_json(spec_json);
  const fusionnet::ModelBundle bundle = load_bundle(ckpt);
  const LoadedData data = load_data(c, bundle.config(), bundle.schema);
  auto rin = open_input(c.resolve(c.data.replacement_embeddings), "replacement embeddings file");
  const auto replacements = datahub::read_replacement_embeddings_jsonl(rin, static_cast<std::size_t>(bundle.config().h));

  const retrofit::ScenarioResult result = retrofit::evaluate_scenario(bundle, data.dataset.records, spec, replacements);
  s.write("scenario_report.csv", [&](std::ostream& o) { retrofit::write_scenario_csv(o, result); });
  s.write_json("scenario.geojson", retrofit::scenario_geojson(result, data.dataset.records));
  s.write_json("scenario_summary.json", {{"scenario", spec.to_json()},
                                         {"checkpoint", explain::checkpoint_hash(bundle)},
                                         {"aggregates", result.aggregates.to_json()},
                                         {"exceptions", result.exceptions}});
  const auto& a = result.aggregates;
  s.out() << "scenario " << spec.name << ": n_eligible=" << a.n_eligible << " n_exceptions=" << a.n_exceptions
          << " total_delta_cost=" << format_double(a.total_delta_cost)
          << " total_delta_eco2=" << format_double(a.total_delta_eco2) << '\n';
  return kExitOk;
}

inline int cmd_gradcheck(Session& s) {
  const trainer::GradCheckSuite suite = trainer::run_gradcheck_suite(s.config().seed);
  json j = suite.to_json();
  j.erase("seconds");  // keep the artifact reproducible
  j["tolerance"] = 1e-4;
  j["passed"] = suite.passed();
  s.write_json("gradcheck.json", j);
  s.out() << "max_rel_error " << format_double(suite.max_rel_error()) << " (" << suite.entries.size() << " checks, "
          << (suite.passed() ? "pass" : "FAIL") << ")\n";
  return suite.passed() ? kExitOk : kExitInternal;
}

// ---- entry point -----------------------------------------------------------

inline std::uint64_t parse_seed(const std::string& text, std::string_view source) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    fail(ErrorKind::InvalidConfig, std::string(source) + " is not a 64-bit unsigned integer: '" + text + "'");
  }
  return static_cast<std::uint64_t>(v);
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated multimodal EPC modelling: ingest, train, explain and project retrofits.", "epcfusion"};
  app.set_version_flag("--version", EPCFUSION_VERSION);
  app.require_subcommand(1, 1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::string seed_flag;
  std::string output_dir;
  std::string checkpoint;
  std::string explain_kind;
  std::string scenario_file;
  app.add_option("-c,--config", config_file, "TOML run configuration");
  app.add_option("--set", overrides, "Override a config value, section.key=value (repeatable)")
      ->type_size(1)
      ->allow_extra_args(false);
  app.add_option("--seed", seed_flag, "Seed (beats EPCFUSION_SEED and the config file)");
  app.add_option("-o,--output-dir", output_dir, "Output directory");

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"ingest", "Read and link the three sources; write ingest_report.json"},
      {"split", "Joint-stratified train/val/test split; write split.json"},
      {"train", "Train the configured model; write model.ckpt and metrics"},
      {"evaluate", "Evaluate a checkpoint on the held-out split"},
      {"ablate", "Train and evaluate all seven modality subsets"},
      {"explain", "Attribution analyses for a checkpoint"},
      {"scenario", "Project a retrofit scenario with a checkpoint"},
      {"gradcheck", "Compare analytic and numerical gradients"},
      {"synth", "Write the synthetic dataset to the configured data paths"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    subs[name] = sub;
  }
  for (const char* name : {"evaluate", "explain", "scenario"}) {
    subs[name]->add_option("--checkpoint", checkpoint, "Model checkpoint (default: <output_dir>/model.ckpt)");
  }
  subs["explain"]
      ->add_option("kind", explain_kind, "gate | shapley | occlusion | spatial | boundary | saliency | all")
      ->required()
      ->check(CLI::IsMember(explain_kinds()));
  subs["scenario"]->add_option("file", scenario_file, "Scenario JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << EPCFUSION_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "UsageError", e.what(), kExitConfig);
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }
  try {
    std::optional<fs::path> file;
    if (!config_file.empty()) file = fs::path(config_file);
    RunConfig config = load_config(file, overrides);
    if (const char* env = std::getenv("EPCFUSION_SEED"); env && *env) config.seed = parse_seed(env, "EPCFUSION_SEED");
    if (!seed_flag.empty()) config.seed = parse_seed(seed_flag, "--seed");
    config.synth.seed = config.seed;
    if (!output_dir.empty()) {
      config.output_dir = fs::absolute(output_dir).string();
    }

    std::string label = command;
    if (command == "explain") label += " " + explain_kind;
    Session session(config, label, out);
    int code = kExitOk;
    if (command == "synth") code = cmd_synth(session);
    else if (command == "ingest") code = cmd_ingest(session);
    else if (command == "split") code = cmd_split(session);
    else if (command == "train") code = cmd_train(session);
    else if (command == "evaluate") code = cmd_evaluate(session, checkpoint);
    else if (command == "ablate") code = cmd_ablate(session);
    else if (command == "explain") code = cmd_explain(session, explain_kind, checkpoint);
    else if (command == "scenario") code = cmd_scenario(session, scenario_file, checkpoint);
    else if (command == "gradcheck") code = cmd_gradcheck(session);
    else fail(ErrorKind::Internal, "unhandled command '" + command + "'");
    session.finish();
    return code;
  } catch (const Error& e) {
    std::string message = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    if (message.rfind(prefix, 0) == 0) message.erase(0, prefix.size());
    return report_error(err, to_string(e.kind()), message, exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report_error(err, "Internal", e.what(), kExitInternal);
  }
}

}  // namespace epcfusion::cli
