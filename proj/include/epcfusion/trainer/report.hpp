#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "epcfusion/datahub/records.hpp"
#include "epcfusion/format.hpp"
#include "epcfusion/trainer/metrics.hpp"
#include "epcfusion/trainer/train.hpp"

namespace epcfusion::trainer {

struct AblationRow {
  fusionnet::Modalities modalities;
  std::optional<TrainReport> report;
  std::optional<EvalSummary> summary;  // test split, or validation when there is no test split
  std::string error_kind;
  std::string error;

  bool ok() const { return summary.has_value(); }
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string evaluated_split;
};

using AblationCallback = std::function<void(const fusionnet::Modalities&, const EpochRecord&)>;

/// Trains and evaluates every non-empty modality subset on the same split,
/// scalers and settings. A failing configuration is recorded and the others
/// still run.
inline AblationResult run_ablation(const fusionnet::ModelConfig& base, const datahub::Schema& schema,
                                   const std::vector<PropertyRecord>& records, const datahub::SplitIndices& split,
                                   const datahub::BandTable& bands, const TrainConfig& cfg, std::uint64_t seed,
                                   const AblationCallback& on_epoch = {}) {
  AblationResult result;
  result.evaluated_split = split.test.empty() ? "val" : "test";
  for (const fusionnet::Modalities& m : fusionnet::Modalities::ablation_suite()) {
    AblationRow row;
    row.modalities = m;
    try {
      fusionnet::ModelConfig config = base;
      config.modalities = m;
      fusionnet::ModelBundle bundle = prepare_bundle(config, schema, records, split.train, bands, seed);
      EpochCallback cb;
      if (on_epoch) cb = [&](const EpochRecord& e) { on_epoch(m, e); };
      row.report = train(bundle, records, split, cfg, seed, cb);
      row.summary = split.test.empty() ? row.report->val : row.report->test;
    } catch (const Error& e) {
      row.error_kind = std::string(to_string(e.kind()));
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error_kind = "Internal";
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline std::string metric_cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline void write_ablation_csv(std::ostream& out, const AblationResult& result) {
  out << "config,status,split,r2_sap,r2_ei,band_acc_sap,band_acc_ei,mae_sap,mae_ei,rmse_sap,rmse_ei,mean_mae,"
         "best_epoch,stopping_epoch,error\n";
  for (const AblationRow& row : result.rows) {
    out << row.modalities.name() << ',' << (row.ok() ? "ok" : "failed") << ',' << result.evaluated_split;
    if (row.ok()) {
      const EvalSummary& s = *row.summary;
      out << ',' << metric_cell(s.metrics.target[0].r2) << ',' << metric_cell(s.metrics.target[1].r2) << ','
          << format_double(s.band_accuracy[0]) << ',' << format_double(s.band_accuracy[1]) << ','
          << format_double(s.metrics.target[0].mae) << ',' << format_double(s.metrics.target[1].mae) << ','
          << format_double(s.metrics.target[0].rmse) << ',' << format_double(s.metrics.target[1].rmse) << ','
          << format_double(s.metrics.mean_mae) << ',' << row.report->best_epoch << ',' << row.report->stopping_epoch
          << ",\n";
    } else {
      out << ",NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA," << csv_escape(row.error) << '\n';
    }
  }
}

// Merged-partition confusion matrices, SAP block then EI block.
inline void write_confusion_csv(std::ostream& out, const EvalSummary& summary) {
  out << "target,true";
  for (auto name : datahub::kPartitionNames) out << ",pred_" << name;
  out << '\n';
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t i = 0; i < datahub::kNumPartitions; ++i) {
      out << kTargetNames[t] << ',' << datahub::kPartitionNames[i];
      for (std::size_t j = 0; j < datahub::kNumPartitions; ++j) out << ',' << summary.confusion[t][i][j];
      out << '\n';
    }
  }
}

// File-name-safe configuration label, e.g. "tab_text".
inline std::string config_label(const fusionnet::Modalities& m) {
  std::string name = m.name();
  for (char& c : name) {
    if (c == '+') c = '_';
  }
  return name;
}

enum class SubgroupKey { PropertyType, BuiltForm, AgeBand };

inline std::string_view to_string(SubgroupKey key) {
  switch (key) {
    case SubgroupKey::PropertyType: return "property_type";
    case SubgroupKey::BuiltForm: return "built_form";
    case SubgroupKey::AgeBand: return "age_band";
  }
  return "property_type";
}

inline std::optional<SubgroupKey> parse_subgroup_key(std::string_view name) {
  if (name == "property_type") return SubgroupKey::PropertyType;
  if (name == "built_form") return SubgroupKey::BuiltForm;
  if (name == "age_band" || name == "construction_age_band") return SubgroupKey::AgeBand;
  return std::nullopt;
}

inline std::size_t categorical_field(SubgroupKey key) {
  switch (key) {
    case SubgroupKey::PropertyType: return 1;
    case SubgroupKey::BuiltForm: return 2;
    case SubgroupKey::AgeBand: return 0;
  }
  return 1;
}

struct SubgroupRow {
  std::string group;
  EvalSummary summary;
  bool below_min_size = false;

  std::size_t n() const { return summary.metrics.target[0].n; }
};

inline constexpr std::size_t kMinSubgroupSize = 30;

/// Metrics per category of `key`, groups in lexical order ("unknown" for a
/// missing category). Groups smaller than `min_size` are flagged, not dropped.
inline std::vector<SubgroupRow> subgroup_report(std::span<const PropertyRecord* const> rows,
                                                std::span<const Scores> pred, SubgroupKey key,
                                                const datahub::BandTable& bands,
                                                std::size_t min_size = kMinSubgroupSize) {
  if (rows.size() != pred.size()) fail(ErrorKind::ShapeError, "one prediction per record expected");
  const std::size_t field = categorical_field(key);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string& value = rows[i]->categorical_values[field];
    groups[value.empty() ? "unknown" : value].push_back(i);
  }
  std::vector<SubgroupRow> out;
  for (const auto& [name, members] : groups) {
    std::vector<Scores> p;
    std::vector<Scores> y;
    for (std::size_t i : members) {
      p.push_back(pred[i]);
      y.push_back({rows[i]->sap, rows[i]->ei});
    }
    out.push_back({name, summarize(p, y, bands), members.size() < min_size});
  }
  return out;
}

inline void write_subgroup_csv(std::ostream& out, SubgroupKey key, std::span<const SubgroupRow> rows) {
  out << to_string(key)
      << ",n,mae_sap,mae_ei,mean_mae,rmse_sap,rmse_ei,r2_sap,r2_ei,band_acc_sap,band_acc_ei,below_min_size\n";
  for (const SubgroupRow& r : rows) {
    const EvalMetrics& m = r.summary.metrics;
    out << csv_escape(r.group) << ',' << r.n() << ',' << format_double(m.target[0].mae) << ','
        << format_double(m.target[1].mae) << ',' << format_double(m.mean_mae) << ','
        << format_double(m.target[0].rmse) << ',' << format_double(m.target[1].rmse) << ','
        << metric_cell(m.target[0].r2) << ',' << metric_cell(m.target[1].r2) << ','
        << format_double(r.summary.band_accuracy[0]) << ',' << format_double(r.summary.band_accuracy[1]) << ','
        << (r.below_min_size ? "true" : "false") << '\n';
  }
}

/// Raw prediction dump for external metric checks.
inline void write_predictions_csv(std::ostream& out, std::span<const PropertyRecord* const> rows,
                                  std::span<const Scores> pred, const datahub::BandTable& bands) {
  out << "uprn,sap_true,ei_true,sap_pred,ei_pred,sap_band_true,sap_band_pred,ei_band_true,ei_band_pred\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const PropertyRecord& r = *rows[i];
    out << csv_escape(r.uprn) << ',' << format_double(r.sap) << ',' << format_double(r.ei) << ','
        << format_double(pred[i][0]) << ',' << format_double(pred[i][1]) << ','
        << datahub::kBandNames[static_cast<std::size_t>(bands.band(r.sap))] << ','
        << datahub::kBandNames[static_cast<std::size_t>(bands.band_clamped(pred[i][0]))] << ','
        << datahub::kBandNames[static_cast<std::size_t>(bands.band(r.ei))] << ','
        << datahub::kBandNames[static_cast<std::size_t>(bands.band_clamped(pred[i][1]))] << '\n';
  }
}

}  // namespace epcfusion::trainer
