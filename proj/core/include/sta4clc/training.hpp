#pragma once

// Feature assembly, stratified cross-validation, full-batch training,
// metrics and the M1-M8 ablation harness.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sta4clc/data.hpp"
#include "sta4clc/graph.hpp"
#include "sta4clc/model.hpp"
#include "sta4clc/resilience.hpp"

namespace sta4clc::training {

struct FeatureOptions {
  resilience::ResilienceConfig resilience;
  resilience::UndefinedFill fill = resilience::UndefinedFill::Zero;
  data::WeatherGapPolicy weather_gaps;
};

/// Unstandardized inputs for every node. Node n is block n % n_blocks of
/// period n / n_blocks (periods in dataset order).
struct NodeFeatures {
  std::size_t n_blocks = 0;
  std::size_t n_periods = 0;
  std::size_t weeks = 0;
  std::size_t attribute_dim = 0;
  std::vector<std::string> block_ids;  // per node
  std::vector<int> period_ids;         // per node
  std::vector<double> temporal;        // [N, T, 6]; undefined resilience is NaN
  std::vector<double> attributes;      // [N, d]
  std::vector<std::vector<resilience::Impulse>> impulses;
  std::vector<data::ChangeClass> labels;
  std::vector<double> delta;

  std::size_t n_nodes() const { return block_ids.size(); }
};

/// Requires every block to appear in every period.
NodeFeatures build_features(const data::Dataset& dataset, const FeatureOptions& options = {});

struct GraphOptions {
  std::size_t k = 10;
  graph::SectorOptions sectors;
};

/// Block-level multi-relational graph.
graph::MultiRelationalGraph build_block_graph(const data::Dataset& dataset, const GraphOptions& options = {});

/// Block graph replicated once per period so that it spans every node.
graph::MultiRelationalGraph node_graph(const graph::MultiRelationalGraph& block_graph, std::size_t n_periods);

/// Standardization statistics fitted on training nodes only.
struct FeatureScaling {
  data::Standardizer temporal;    // 6 columns over all weeks
  data::Standardizer attributes;  // d columns
};

void to_json(nlohmann::json& j, const FeatureScaling& s);
void from_json(const nlohmann::json& j, FeatureScaling& s);

FeatureScaling fit_scaling(const NodeFeatures& features, std::span<const std::size_t> train_nodes);
/// Standardized model inputs; undefined resilience becomes 0 afterwards.
model::ModelInputs make_inputs(const NodeFeatures& features, const FeatureScaling& scaling,
                               resilience::UndefinedFill fill = resilience::UndefinedFill::Zero);

struct Fold {
  std::vector<std::size_t> train;            // sorted
  std::vector<std::size_t> validation;       // sorted
  std::vector<std::size_t> train_resampled;  // class-balanced multiset
};

struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

void to_json(nlohmann::json& j, const FoldPlan& p);
void from_json(const nlohmann::json& j, FoldPlan& p);

/// Stratified, shuffled partition into k folds. Throws DataError if n < k.
FoldPlan kfold_split(std::span<const data::ChangeClass> labels, std::size_t k, std::uint64_t seed);

struct Metrics {
  std::size_t count = 0;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double accuracy = 0.0;
  std::array<std::array<std::size_t, 3>, 3> confusion{};  // rows true, columns predicted
};

void to_json(nlohmann::json& j, const Metrics& m);

/// Throws DataError for an empty split.
Metrics compute_metrics(std::span<const data::ChangeClass> truth, std::span<const data::ChangeClass> predicted);
Metrics compute_metrics(std::span<const data::ChangeClass> truth, std::span<const data::ChangeClass> predicted,
                        std::span<const std::size_t> subset);

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double diff = 0.0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
};

struct FoldResult {
  model::ModelParameters params;  // snapshot at the best validation epoch
  FeatureScaling scaling;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_loss = 0.0;  // minimum training loss over the history
  Metrics train_metrics;   // at the best epoch
  Metrics val_metrics;
  std::vector<double> delta_pred;               // every node, best epoch
  std::vector<data::ChangeClass> class_pred;
};

/// Full-batch Adam on one fold. Epoch 0 evaluates the initialization; each
/// later epoch follows one update. Throws NumericError on a non-finite loss.
FoldResult train_fold(const NodeFeatures& features, const model::GraphTensors& graph, const Fold& fold,
                      const model::ModelConfig& config, resilience::UndefinedFill fill = resilience::UndefinedFill::Zero);

struct CrossValidation {
  FoldPlan plan;
  model::ModelConfig config;
  std::vector<FoldResult> folds;
  // Out-of-fold predictions per node.
  std::vector<double> delta_pred;
  std::vector<data::ChangeClass> class_pred;

  /// Mean of per-fold scores; the confusion matrix is summed.
  Metrics mean_validation() const;
  Metrics mean_training() const;
  double mean_best_loss() const;
};

/// Runs the folds, up to `threads` at a time.
CrossValidation cross_validate(const NodeFeatures& features, const graph::MultiRelationalGraph& graph,
                               const FoldPlan& plan, const model::ModelConfig& config, unsigned threads = 1);

struct AblationVariant {
  std::string name;
  bool disaster = false;
  bool diffusion = false;
  bool multi_relation = false;
};

/// M1-M8 in table order.
const std::array<AblationVariant, 8>& ablation_grid();

struct AblationRow {
  AblationVariant variant;
  double train_loss = 0.0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
  double improvement = 0.0;  // val F1 / M1 val F1
};

/// Every variant uses the same folds and seed. `variants` defaults to the
/// full grid.
std::vector<AblationRow> ablate(const NodeFeatures& features, const graph::MultiRelationalGraph& graph,
                                const FoldPlan& plan, const model::ModelConfig& base, unsigned threads = 1,
                                std::vector<AblationVariant> variants = {});

// ---- run directory ---------------------------------------------------------

void write_history_csv(const std::filesystem::path& path, const CrossValidation& cv);
void write_predictions_csv(const std::filesystem::path& path, const NodeFeatures& features,
                           std::span<const double> delta_pred, std::span<const data::ChangeClass> class_pred);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
nlohmann::json metrics_json(const CrossValidation& cv);

/// params.bin (folds concatenated) plus model.json holding shapes, config,
/// fold plan and per-fold scaling.
void save_model(const std::filesystem::path& dir, const CrossValidation& cv, std::size_t attribute_dim,
                const std::vector<std::string>& relation_names);

struct SavedModel {
  model::ModelConfig config;
  FoldPlan plan;
  std::vector<FeatureScaling> scaling;
  std::vector<model::ModelParameters> params;
  std::vector<std::string> relation_names;
  std::size_t attribute_dim = 0;
};

SavedModel load_model(const std::filesystem::path& dir);

struct Prediction {
  std::vector<double> delta_pred;
  std::vector<data::ChangeClass> class_pred;
};

/// Each node is scored by the fold model that held it out.
Prediction predict_out_of_fold(const SavedModel& saved, const NodeFeatures& features,
                               const graph::MultiRelationalGraph& graph);

}  // namespace sta4clc::training
