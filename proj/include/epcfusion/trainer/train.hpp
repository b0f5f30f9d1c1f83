#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/datahub/sampler.hpp"
#include "epcfusion/datahub/scaling.hpp"
#include "epcfusion/datahub/split.hpp"
#include "epcfusion/diffcore/optim.hpp"
#include "epcfusion/fusionnet/batch.hpp"
#include "epcfusion/fusionnet/bundle.hpp"
#include "epcfusion/trainer/loss.hpp"
#include "epcfusion/trainer/metrics.hpp"

namespace epcfusion::trainer {

using datahub::PropertyRecord;
using RecordPtrs = std::vector<const PropertyRecord*>;

struct TrainConfig {
  std::size_t batch_size = 128;
  int max_epochs = 50;
  double lr = 1e-3;             // every group except the text projection
  double projection_lr = 1e-4;  // text projection on top of the frozen backbone
  double clip_norm = 1.0;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  int early_stop_patience = 10;
  // Optional: stop as soon as every target's validation R^2 reaches this.
  std::optional<double> target_val_r2;
  LossConfig loss;

  void validate() const {
    if (batch_size == 0) fail(ErrorKind::InvalidConfig, "batch_size must be > 0");
    if (max_epochs <= 0) fail(ErrorKind::InvalidConfig, "max_epochs must be > 0");
    if (!(lr > 0.0) || !(projection_lr > 0.0)) fail(ErrorKind::InvalidConfig, "learning rates must be > 0");
    if (!(clip_norm > 0.0)) fail(ErrorKind::InvalidConfig, "clip_norm must be > 0");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail(ErrorKind::InvalidConfig, "plateau_factor must be in (0, 1)");
    if (plateau_patience <= 0 || early_stop_patience <= 0) fail(ErrorKind::InvalidConfig, "patience must be > 0");
    if (target_val_r2 && !(*target_val_r2 <= 1.0)) fail(ErrorKind::InvalidConfig, "target_val_r2 must be <= 1");
    loss.validate();
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},     {"max_epochs", max_epochs},
            {"lr", lr},                     {"projection_lr", projection_lr},
            {"clip_norm", clip_norm},       {"plateau_factor", plateau_factor},
            {"plateau_patience", plateau_patience}, {"early_stop_patience", early_stop_patience},
            {"target_val_r2", target_val_r2 ? nlohmann::json(*target_val_r2) : nlohmann::json()},
            {"loss", loss.to_json()}};
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  EvalMetrics val;
  double lr = 0.0;
  double projection_lr = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss},
            {"val", val.to_json()}, {"lr", lr}, {"projection_lr", projection_lr}};
  }
};

struct LrEvent {
  int epoch = 0;
  double factor = 1.0;
  double lr = 0.0;
  double projection_lr = 0.0;
};

struct TrainReport {
  std::string modalities;
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  std::vector<EpochRecord> epochs;
  std::vector<LrEvent> lr_events;
  int best_epoch = 0;
  int stopping_epoch = 0;
  std::string stop_reason = "max_epochs";  // or early_stop, target_reached
  double best_val_loss = 0.0;
  std::optional<EvalSummary> val;   // restored model
  std::optional<EvalSummary> test;  // restored model

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["modalities"] = modalities;
    j["seed"] = seed;
    j["parameter_count"] = parameter_count;
    j["best_epoch"] = best_epoch;
    j["stopping_epoch"] = stopping_epoch;
    j["stop_reason"] = stop_reason;
    j["best_val_loss"] = best_val_loss;
    j["epochs"] = nlohmann::json::array();
    for (const EpochRecord& e : epochs) j["epochs"].push_back(e.to_json());
    j["lr_events"] = nlohmann::json::array();
    for (const LrEvent& e : lr_events) {
      j["lr_events"].push_back({{"epoch", e.epoch}, {"factor", e.factor}, {"lr", e.lr}, {"projection_lr", e.projection_lr}});
    }
    if (val) j["val"] = val->to_json();
    if (test) j["test"] = test->to_json();
    return j;
  }
};

inline RecordPtrs select_ptrs(const std::vector<PropertyRecord>& records, std::span<const std::size_t> indices) {
  return fusionnet::pointers(records, indices);
}

inline std::vector<Scores> truth_of(std::span<const PropertyRecord* const> rows) {
  std::vector<Scores> out;
  out.reserve(rows.size());
  for (const PropertyRecord* r : rows) out.push_back({r->sap, r->ei});
  return out;
}

/// Fresh model plus scalers fitted on the training indices only.
inline fusionnet::ModelBundle prepare_bundle(fusionnet::ModelConfig config, const datahub::Schema& schema,
                                             const std::vector<PropertyRecord>& records,
                                             std::span<const std::size_t> train, const datahub::BandTable& bands,
                                             std::uint64_t seed) {
  if (train.empty()) fail(ErrorKind::EmptyInput, "training split is empty");
  const std::vector<PropertyRecord> rows = datahub::select(records, {train.begin(), train.end()});
  config.vocab_sizes = schema.vocab_sizes();
  config.n_bands = static_cast<int>(datahub::kNumBands);
  return fusionnet::ModelBundle{fusionnet::FusionModel(std::move(config), seed), schema,
                                datahub::TargetScaler::fit(rows), datahub::FeatureScaler::fit(rows), bands, seed};
}

struct Evaluation {
  std::vector<Scores> pred;
  std::vector<Scores> truth;
  double loss = 0.0;
};

/// Eval-mode pass: de-normalized predictions and the mean total loss.
inline Evaluation evaluate(const fusionnet::ModelBundle& bundle, std::span<const PropertyRecord* const> rows,
                           const LossConfig& loss_cfg) {
  if (rows.empty()) fail(ErrorKind::EmptyInput, "nothing to evaluate");
  diffcore::NoGradGuard no_grad;
  Evaluation ev;
  ev.pred.reserve(rows.size());
  ev.truth = truth_of(rows);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += fusionnet::kEvalBatch) {
    const auto chunk = rows.subspan(start, std::min(fusionnet::kEvalBatch, rows.size() - start));
    const fusionnet::ModelInput in = fusionnet::make_batch(chunk, bundle.feature_scaler, bundle.model.config());
    const fusionnet::FusionOutput out = bundle.model.forward(in);
    const BatchTargets targets = make_targets(chunk, bundle.target_scaler, bundle.bands);
    loss_sum += total_loss(out, targets, bundle.config().n_bands, loss_cfg).item() * static_cast<double>(chunk.size());
    for (Index b = 0; b < out.y_hat.rows(); ++b) {
      ev.pred.push_back(bundle.target_scaler.denormalize({out.y_hat.value()(b, 0), out.y_hat.value()(b, 1)}));
    }
  }
  ev.loss = loss_sum / static_cast<double>(rows.size());
  return ev;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Partition-balanced mini-batch training with Adam (two learning-rate
/// groups), gradient clipping, a plateau scheduler on validation loss and
/// early stopping. The best-validation weights are restored before return.
inline TrainReport train(fusionnet::ModelBundle& bundle, const std::vector<PropertyRecord>& records,
                         const datahub::SplitIndices& split, const TrainConfig& cfg, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (split.train.empty()) fail(ErrorKind::EmptyInput, "training split is empty");
  if (split.val.empty()) fail(ErrorKind::EmptyInput, "validation split is empty");
  fusionnet::FusionModel& model = bundle.model;
  const int n_bands = model.config().n_bands;

  const RecordPtrs train_rows = select_ptrs(records, split.train);
  const RecordPtrs val_rows = select_ptrs(records, split.val);
  std::vector<int> labels;
  labels.reserve(train_rows.size());
  for (const PropertyRecord* r : train_rows) labels.push_back(datahub::joint_partition_label(*r, bundle.bands));
  const datahub::BalancedBatcher batcher(std::move(labels), cfg.batch_size, mix64(seed, 0xBA7C4ULL));

  diffcore::Adam adam(model.param_groups(cfg.lr, cfg.projection_lr));
  diffcore::PlateauScheduler scheduler(cfg.plateau_factor, cfg.plateau_patience);
  auto group_lr = [&](const char* name) {
    for (const auto& g : adam.groups()) {
      if (g.name == name) return g.lr;
    }
    return 0.0;
  };

  TrainReport report;
  report.modalities = model.config().modalities.name();
  report.seed = seed;
  report.parameter_count = model.parameter_count();
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_state = model.snapshot();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = batcher.epoch(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      RecordPtrs rows;
      rows.reserve(batches[bi].size());
      for (std::size_t pos : batches[bi]) rows.push_back(train_rows[pos]);
      const fusionnet::ModelInput in = fusionnet::make_batch(rows, bundle.feature_scaler, model.config());
      const BatchTargets targets = make_targets(rows, bundle.target_scaler, bundle.bands);
      diffcore::DropoutStream stream(mix64(seed, (static_cast<std::uint64_t>(epoch) << 32) | bi));
      fusionnet::ForwardContext ctx{true, &stream};
      const Tensor loss = total_loss(model.forward(in, ctx), targets, n_bands, cfg.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        fail(ErrorKind::TrainingDiverged,
             "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
      }
      adam.zero_grad();
      diffcore::backward(loss);
      adam.clip(cfg.clip_norm);
      adam.step();
      loss_sum += value * static_cast<double>(rows.size());
    }

    const Evaluation ev = evaluate(bundle, val_rows, cfg.loss);
    if (!std::isfinite(ev.loss)) {
      fail(ErrorKind::TrainingDiverged, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_rows.size());
    rec.val_loss = ev.loss;
    rec.val = compute_metrics(ev.pred, ev.truth);
    rec.lr = group_lr(fusionnet::kMainGroup);
    rec.projection_lr = group_lr(fusionnet::kProjectionGroup);
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (ev.loss < best) {
      best = ev.loss;
      report.best_epoch = epoch;
      best_state = model.snapshot();
    }
    const double factor = scheduler.step(ev.loss);
    if (factor != 1.0) {
      adam.scale_learning_rates(factor);
      report.lr_events.push_back({epoch, factor, group_lr(fusionnet::kMainGroup), group_lr(fusionnet::kProjectionGroup)});
    }
    report.stopping_epoch = epoch;
    if (cfg.target_val_r2 && rec.val.target[0].r2 && rec.val.target[1].r2 &&
        *rec.val.target[0].r2 >= *cfg.target_val_r2 && *rec.val.target[1].r2 >= *cfg.target_val_r2) {
      report.stop_reason = "target_reached";
      break;
    }
    if (epoch - report.best_epoch >= cfg.early_stop_patience) {
      report.stop_reason = "early_stop";
      break;
    }
  }

  model.restore(best_state);
  report.best_val_loss = best;
  const Evaluation val = evaluate(bundle, val_rows, cfg.loss);
  report.val = summarize(val.pred, val.truth, bundle.bands);
  if (!split.test.empty()) {
    const RecordPtrs test_rows = select_ptrs(records, split.test);
    const Evaluation test = evaluate(bundle, test_rows, cfg.loss);
    report.test = summarize(test.pred, test.truth, bundle.bands);
  }
  return report;
}

}  // namespace epcfusion::trainer
