#include "sta4clc/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "sta4clc/csv.hpp"
#include "sta4clc/error.hpp"
#include "sta4clc/optim.hpp"

namespace sta4clc::training {

using data::ChangeClass;
using model::kTemporalChannels;

NodeFeatures build_features(const data::Dataset& dataset, const FeatureOptions& options) {
  options.resilience.validate();
  NodeFeatures f;
  f.n_blocks = dataset.n_blocks();
  f.n_periods = dataset.periods.size();
  f.weeks = static_cast<std::size_t>(dataset.weeks_per_period);
  f.attribute_dim = dataset.attribute_dim();
  const std::size_t T = f.weeks, d = f.attribute_dim, N = f.n_blocks * f.n_periods;
  if (N == 0) throw DataError("dataset has no nodes");
  if (static_cast<int>(T) < options.resilience.window)
    throw DataError("period length " + std::to_string(T) + " is shorter than the resilience window");
  f.temporal.assign(N * T * kTemporalChannels, 0.0);
  f.attributes.assign(N * d, 0.0);

  for (std::size_t p = 0; p < f.n_periods; ++p) {
    const auto& window = dataset.periods[p];
    const auto recs = dataset.records_of_period(window.period_id);
    if (recs.size() != f.n_blocks)
      throw DataError("period " + std::to_string(window.period_id) + " covers " + std::to_string(recs.size()) +
                      " of " + std::to_string(f.n_blocks) + " blocks; every block needs a record in every period");
    for (std::size_t b = 0; b < f.n_blocks; ++b) {
      const auto& rec = dataset.records[recs[b]];
      const std::size_t node = p * f.n_blocks + b;
      f.block_ids.push_back(rec.block_id);
      f.period_ids.push_back(rec.period_id);
      f.labels.push_back(data::derive_label(rec.y_start, rec.y_end, dataset.label_config));
      f.delta.push_back(rec.delta());
      std::copy(rec.z.begin(), rec.z.end(), f.attributes.begin() + static_cast<std::ptrdiff_t>(node * d));

      const auto series = data::aggregate_block_series(dataset, rec.block_id, window.period_id);
      std::vector<double> v(series.visits.begin(), series.visits.end());
      const auto r = resilience::rolling_resilience(v, options.resilience);
      const auto weather = data::weekly_aggregate_weather(dataset.weather[b], static_cast<std::size_t>(window.start_week) * 7,
                                                          T, options.weather_gaps);
      for (std::size_t t = 0; t < T; ++t) {
        double* row = f.temporal.data() + (node * T + t) * kTemporalChannels;
        row[0] = v[t];
        row[1] = static_cast<double>(series.active_pois[t]);
        row[2] = r[t];
        row[3] = weather[t][0];
        row[4] = weather[t][1];
        row[5] = weather[t][2];
      }
      f.impulses.push_back(resilience::block_impulses(dataset.disasters, rec.block_id, window.start_week, T));
    }
  }
  return f;
}

graph::MultiRelationalGraph build_block_graph(const data::Dataset& dataset, const GraphOptions& options) {
  auto adjacency = graph::knn_adjacency(dataset.centroids, options.k, options.sectors.min_distance);
  const auto profiles = graph::sector_profiles(dataset);
  auto sectors = graph::sector_relations(dataset.centroids, profiles, options.sectors);
  return graph::build_multigraph(std::move(adjacency), std::move(sectors), dataset.n_blocks());
}

graph::MultiRelationalGraph node_graph(const graph::MultiRelationalGraph& block_graph, std::size_t n_periods) {
  return graph::replicate(block_graph, n_periods);
}

void to_json(nlohmann::json& j, const FeatureScaling& s) {
  j = {{"temporal", {{"mean", s.temporal.mean}, {"sd", s.temporal.sd}}},
       {"attributes", {{"mean", s.attributes.mean}, {"sd", s.attributes.sd}}}};
}

void from_json(const nlohmann::json& j, FeatureScaling& s) {
  j.at("temporal").at("mean").get_to(s.temporal.mean);
  j.at("temporal").at("sd").get_to(s.temporal.sd);
  j.at("attributes").at("mean").get_to(s.attributes.mean);
  j.at("attributes").at("sd").get_to(s.attributes.sd);
}

FeatureScaling fit_scaling(const NodeFeatures& features, std::span<const std::size_t> train_nodes) {
  const std::size_t T = features.weeks, N = features.n_nodes();
  FeatureScaling s;
  data::FeatureMatrix temporal{N * T, kTemporalChannels, features.temporal};
  std::vector<std::size_t> rows;
  rows.reserve(train_nodes.size() * T);
  for (std::size_t n : train_nodes)
    for (std::size_t t = 0; t < T; ++t) rows.push_back(n * T + t);
  s.temporal = data::Standardizer::fit(temporal, rows);
  data::FeatureMatrix attrs{N, features.attribute_dim, features.attributes};
  s.attributes = data::Standardizer::fit(attrs, train_nodes);
  return s;
}

model::ModelInputs make_inputs(const NodeFeatures& features, const FeatureScaling& scaling,
                               resilience::UndefinedFill fill) {
  const std::size_t N = features.n_nodes(), T = features.weeks, d = features.attribute_dim;
  if (scaling.temporal.mean.size() != kTemporalChannels || scaling.attributes.mean.size() != d)
    throw DataError("feature scaling does not match the feature layout");
  model::ModelInputs in;
  in.n_nodes = N;
  in.weeks = T;
  in.temporal = ad::Array({N, T, kTemporalChannels});
  for (std::size_t row = 0; row < N * T; ++row)
    for (std::size_t c = 0; c < kTemporalChannels; ++c)
      in.temporal[row * kTemporalChannels + c] =
          scaling.temporal.transform(c, features.temporal[row * kTemporalChannels + c]);
  // Undefined resilience is filled after standardization.
  std::vector<double> r(T);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < T; ++t) r[t] = in.temporal[(n * T + t) * kTemporalChannels + 2];
    resilience::fill_undefined(r, fill, 0.0);
    for (std::size_t t = 0; t < T; ++t) in.temporal[(n * T + t) * kTemporalChannels + 2] = r[t];
  }
  in.attributes = ad::Array({N, d});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < d; ++c) in.attributes.at(n, c) = scaling.attributes.transform(c, features.attributes[n * d + c]);
  in.impulses = features.impulses;
  return in;
}

void to_json(nlohmann::json& j, const FoldPlan& p) {
  j = {{"seed", p.seed}, {"folds", nlohmann::json::array()}};
  for (const auto& f : p.folds)
    j["folds"].push_back({{"train", f.train}, {"validation", f.validation}, {"train_resampled", f.train_resampled}});
}

void from_json(const nlohmann::json& j, FoldPlan& p) {
  j.at("seed").get_to(p.seed);
  p.folds.clear();
  for (const auto& f : j.at("folds")) {
    Fold fold;
    f.at("train").get_to(fold.train);
    f.at("validation").get_to(fold.validation);
    f.at("train_resampled").get_to(fold.train_resampled);
    p.folds.push_back(std::move(fold));
  }
}

FoldPlan kfold_split(std::span<const ChangeClass> labels, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw DataError("kfold_split: need at least 2 folds, got " + std::to_string(k));
  if (n < k) throw DataError("kfold_split: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, data::kNumClasses> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<int>(labels[i])].push_back(i);
  FoldPlan plan;
  plan.seed = seed;
  plan.folds.resize(k);
  // Deal each shuffled class round-robin; the cursor carries across classes
  // so fold sizes differ by at most one.
  std::size_t cursor = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) plan.folds[cursor++ % k].validation.push_back(i);
  }
  for (std::size_t f = 0; f < k; ++f) {
    auto& fold = plan.folds[f];
    std::sort(fold.validation.begin(), fold.validation.end());
    std::vector<unsigned char> held(n, 0);
    for (std::size_t i : fold.validation) held[i] = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (!held[i]) fold.train.push_back(i);
    fold.train_resampled = data::resample_balanced(fold.train, labels, seed + 1000003ULL * (f + 1));
  }
  return plan;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  j = {{"count", m.count},         {"macro_f1", m.macro_f1}, {"macro_precision", m.macro_precision},
       {"macro_recall", m.macro_recall}, {"accuracy", m.accuracy}, {"confusion", m.confusion}};
}

Metrics compute_metrics(std::span<const ChangeClass> truth, std::span<const ChangeClass> predicted,
                        std::span<const std::size_t> subset) {
  if (subset.empty()) throw DataError("evaluate: empty split");
  Metrics m;
  for (std::size_t i : subset) {
    if (i >= truth.size() || i >= predicted.size()) throw std::out_of_range("evaluate: index out of range");
    ++m.confusion[static_cast<int>(truth[i])][static_cast<int>(predicted[i])];
  }
  m.count = subset.size();
  std::size_t correct = 0;
  for (int c = 0; c < data::kNumClasses; ++c) {
    const double tp = static_cast<double>(m.confusion[c][c]);
    double pred = 0.0, actual = 0.0;
    for (int o = 0; o < data::kNumClasses; ++o) {
      pred += static_cast<double>(m.confusion[o][c]);
      actual += static_cast<double>(m.confusion[c][o]);
    }
    const double precision = pred > 0.0 ? tp / pred : 0.0;
    const double recall = actual > 0.0 ? tp / actual : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.macro_precision += precision / data::kNumClasses;
    m.macro_recall += recall / data::kNumClasses;
    m.macro_f1 += f1 / data::kNumClasses;
    correct += m.confusion[c][c];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  return m;
}

Metrics compute_metrics(std::span<const ChangeClass> truth, std::span<const ChangeClass> predicted) {
  if (truth.size() != predicted.size())
    throw std::invalid_argument("evaluate: " + std::to_string(truth.size()) + " labels vs " +
                                std::to_string(predicted.size()) + " predictions");
  std::vector<std::size_t> all(truth.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return compute_metrics(truth, predicted, all);
}

namespace {

model::Targets fold_targets(const NodeFeatures& features, const Fold& fold) {
  const std::size_t N = features.n_nodes();
  model::Targets t;
  t.labels = features.labels;
  t.delta = features.delta;
  t.weight.assign(N, 0.0);
  for (std::size_t i : fold.train_resampled) t.weight[i] += 1.0;
  return t;
}

std::string describe(const model::LossTerms& l) {
  std::ostringstream os;
  os << "L_total=" << l.total.value()[0] << " L_cls=" << l.cls << " L_reg=" << l.reg << " L_diff=" << l.diff;
  return os.str();
}

}  // namespace

FoldResult train_fold(const NodeFeatures& features, const model::GraphTensors& graph, const Fold& fold,
                      const model::ModelConfig& config, resilience::UndefinedFill fill) {
  config.validate();
  if (fold.train_resampled.empty() || fold.validation.empty()) throw DataError("train: empty fold");
  FoldResult result;
  result.scaling = fit_scaling(features, fold.train);
  const auto inputs = make_inputs(features, result.scaling, fill);
  const auto targets = fold_targets(features, fold);
  auto params = model::ModelParameters::init(config, features.attribute_dim, graph.relations.size());
  ad::Adam adam(params.all(), {.lr = config.lr});

  double best_f1 = -1.0;
  result.best_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch <= config.epochs; ++epoch) {
    const auto fwd = model::forward(inputs, graph, params, config);
    const auto loss = model::total_loss(fwd, targets, graph, params, config);
    const double total = loss.total.value()[0];
    if (!std::isfinite(total))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ": " + describe(loss));
    const auto classes = fwd.classes();
    const auto train_m = compute_metrics(features.labels, classes, fold.train);
    const auto val_m = compute_metrics(features.labels, classes, fold.validation);
    result.history.push_back({epoch, total, loss.cls, loss.reg, loss.diff, train_m.macro_f1, val_m.macro_f1});
    result.best_loss = std::min(result.best_loss, total);
    if (val_m.macro_f1 > best_f1) {
      best_f1 = val_m.macro_f1;
      result.best_epoch = epoch;
      result.params = params.clone();
      result.train_metrics = train_m;
      result.val_metrics = val_m;
      result.class_pred = classes;
      const auto& dv = fwd.delta_y.value();
      result.delta_pred.assign(dv.values().begin(), dv.values().end());
    }
    if (epoch == config.epochs) break;
    adam.zero_grad();
    ad::backward(loss.total);
    try {
      adam.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ": " + describe(loss));
    }
  }
  return result;
}

namespace {

Metrics mean_metrics(const std::vector<FoldResult>& folds, bool validation) {
  Metrics m;
  if (folds.empty()) return m;
  for (const auto& f : folds) {
    const Metrics& x = validation ? f.val_metrics : f.train_metrics;
    m.count += x.count;
    m.macro_f1 += x.macro_f1;
    m.macro_precision += x.macro_precision;
    m.macro_recall += x.macro_recall;
    m.accuracy += x.accuracy;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m.confusion[r][c] += x.confusion[r][c];
  }
  const double k = static_cast<double>(folds.size());
  m.macro_f1 /= k;
  m.macro_precision /= k;
  m.macro_recall /= k;
  m.accuracy /= k;
  return m;
}

template <class Fn>
void run_parallel(std::size_t jobs, unsigned threads, Fn&& fn) {
  threads = std::max(1u, threads);
  if (threads == 1 || jobs <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, jobs); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < jobs;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Metrics CrossValidation::mean_validation() const { return mean_metrics(folds, true); }
Metrics CrossValidation::mean_training() const { return mean_metrics(folds, false); }

double CrossValidation::mean_best_loss() const {
  double s = 0.0;
  for (const auto& f : folds) s += f.best_loss;
  return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
}

CrossValidation cross_validate(const NodeFeatures& features, const graph::MultiRelationalGraph& graph,
                               const FoldPlan& plan, const model::ModelConfig& config, unsigned threads) {
  if (graph.n_nodes != features.n_nodes())
    throw DataError("graph has " + std::to_string(graph.n_nodes) + " nodes but the data has " +
                    std::to_string(features.n_nodes()));
  const auto tensors = model::prepare_graph(graph);
  CrossValidation cv;
  cv.plan = plan;
  cv.config = config;
  cv.folds.resize(plan.folds.size());
  run_parallel(plan.folds.size(), threads,
               [&](std::size_t f) { cv.folds[f] = train_fold(features, tensors, plan.folds[f], config); });
  const std::size_t N = features.n_nodes();
  cv.delta_pred.assign(N, 0.0);
  cv.class_pred.assign(N, ChangeClass::NoChange);
  for (std::size_t f = 0; f < plan.folds.size(); ++f)
    for (std::size_t i : plan.folds[f].validation) {
      cv.delta_pred[i] = cv.folds[f].delta_pred[i];
      cv.class_pred[i] = cv.folds[f].class_pred[i];
    }
  return cv;
}

const std::array<AblationVariant, 8>& ablation_grid() {
  static const std::array<AblationVariant, 8> grid{{
      {"M1", false, false, false},
      {"M2", false, true, false},
      {"M3", false, false, true},
      {"M4", true, false, false},
      {"M5", false, true, true},
      {"M6", true, true, false},
      {"M7", true, false, true},
      {"M8", true, true, true},
  }};
  return grid;
}

std::vector<AblationRow> ablate(const NodeFeatures& features, const graph::MultiRelationalGraph& graph,
                                const FoldPlan& plan, const model::ModelConfig& base, unsigned threads,
                                std::vector<AblationVariant> variants) {
  if (variants.empty()) variants.assign(ablation_grid().begin(), ablation_grid().end());
  const auto tensors = model::prepare_graph(graph);
  const std::size_t K = plan.folds.size();
  std::vector<FoldResult> results(variants.size() * K);
  run_parallel(results.size(), threads, [&](std::size_t job) {
    const auto& v = variants[job / K];
    model::ModelConfig cfg = base;
    cfg.use_disaster_bias = v.disaster;
    cfg.use_diffusion_loss = v.diffusion;
    cfg.use_multi_relation = v.multi_relation;
    auto r = train_fold(features, tensors, plan.folds[job % K], cfg);
    // Only the summary survives; drop the heavy parts.
    r.params = {};
    r.delta_pred.clear();
    r.class_pred.clear();
    results[job] = std::move(r);
  });
  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<FoldResult> folds(std::make_move_iterator(results.begin() + static_cast<std::ptrdiff_t>(v * K)),
                                  std::make_move_iterator(results.begin() + static_cast<std::ptrdiff_t>((v + 1) * K)));
    AblationRow row;
    row.variant = variants[v];
    row.val_f1 = mean_metrics(folds, true).macro_f1;
    row.train_f1 = mean_metrics(folds, false).macro_f1;
    for (const auto& f : folds) row.train_loss += f.best_loss / static_cast<double>(K);
    rows.push_back(row);
  }
  const double baseline = rows.front().val_f1;
  for (auto& r : rows) r.improvement = baseline > 0.0 ? r.val_f1 / baseline : std::numeric_limits<double>::quiet_NaN();
  return rows;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

const char* yes_no(bool b) { return b ? "Yes" : "No"; }

}  // namespace

void write_history_csv(const std::filesystem::path& path, const CrossValidation& cv) {
  auto out = open_out(path);
  out << "fold,epoch,L_total,L_cls,L_reg,L_diff,train_f1,val_f1\n";
  for (std::size_t f = 0; f < cv.folds.size(); ++f)
    for (const auto& e : cv.folds[f].history)
      out << f << ',' << e.epoch << ',' << csv::format_double(e.total) << ',' << csv::format_double(e.cls) << ','
          << csv::format_double(e.reg) << ',' << csv::format_double(e.diff) << ',' << csv::format_double(e.train_f1)
          << ',' << csv::format_double(e.val_f1) << '\n';
}

void write_predictions_csv(const std::filesystem::path& path, const NodeFeatures& features,
                           std::span<const double> delta_pred, std::span<const ChangeClass> class_pred) {
  auto out = open_out(path);
  out << "block_id,period_id,delta_y_hat,class_true,class_pred\n";
  for (std::size_t i = 0; i < features.n_nodes(); ++i)
    out << features.block_ids[i] << ',' << features.period_ids[i] << ',' << csv::format_double(delta_pred[i]) << ','
        << data::class_name(features.labels[i]) << ',' << data::class_name(class_pred[i]) << '\n';
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  auto out = open_out(path);
  out << "model,train_loss,train_f1,val_f1,improvement,disaster_impact,diffusion_constraint,multi_relation_network\n";
  for (const auto& r : rows)
    out << r.variant.name << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.train_f1) << ','
        << csv::format_double(r.val_f1) << ',' << csv::format_double(r.improvement) << ',' << yes_no(r.variant.disaster)
        << ',' << yes_no(r.variant.diffusion) << ',' << yes_no(r.variant.multi_relation) << '\n';
}

nlohmann::json metrics_json(const CrossValidation& cv) {
  nlohmann::json j;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : cv.folds)
    j["folds"].push_back({{"best_epoch", f.best_epoch},
                          {"best_loss", f.best_loss},
                          {"alpha", f.params.alpha()},
                          {"a_plus", f.params.a_plus.value()[0]},
                          {"a_minus", f.params.a_minus.value()[0]},
                          {"train", f.train_metrics},
                          {"validation", f.val_metrics}});
  j["mean"] = {{"best_loss", cv.mean_best_loss()}, {"train", cv.mean_training()}, {"validation", cv.mean_validation()}};
  return j;
}

void save_model(const std::filesystem::path& dir, const CrossValidation& cv, std::size_t attribute_dim,
                const std::vector<std::string>& relation_names) {
  {
    auto out = open_out(dir / "params.bin");
    for (const auto& f : cv.folds) f.params.write_binary(out);
    if (!out) throw DataError("failed writing " + (dir / "params.bin").string());
  }
  nlohmann::json j;
  j["config"] = cv.config;
  j["attribute_dim"] = attribute_dim;
  j["relations"] = relation_names;
  j["parameters"] = cv.folds.empty() ? nlohmann::json::array() : cv.folds.front().params.manifest();
  j["plan"] = cv.plan;
  j["scaling"] = nlohmann::json::array();
  for (const auto& f : cv.folds) j["scaling"].push_back(f.scaling);
  auto out = open_out(dir / "model.json");
  out << j.dump(1) << '\n';
}

SavedModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw DataError("cannot open " + (dir / "model.json").string());
  SavedModel s;
  try {
    nlohmann::json j;
    in >> j;
    j.at("config").get_to(s.config);
    j.at("attribute_dim").get_to(s.attribute_dim);
    j.at("relations").get_to(s.relation_names);
    j.at("plan").get_to(s.plan);
    j.at("scaling").get_to(s.scaling);
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw DataError("cannot open " + (dir / "params.bin").string());
    for (std::size_t f = 0; f < s.plan.folds.size(); ++f) {
      auto p = model::ModelParameters::init(s.config, s.attribute_dim, s.relation_names.size());
      p.read_binary(bin);
      s.params.push_back(std::move(p));
    }
    if (bin.peek() != std::char_traits<char>::eof()) throw DataError("params.bin has trailing data");
    const auto expected = s.params.empty() ? nlohmann::json::array() : s.params.front().manifest();
    if (j.at("parameters") != expected) throw DataError("params.bin layout does not match model.json");
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "model.json").string() + ": " + e.what());
  }
  if (s.scaling.size() != s.plan.folds.size()) throw DataError("model.json: one scaling entry per fold expected");
  return s;
}

Prediction predict_out_of_fold(const SavedModel& saved, const NodeFeatures& features,
                               const graph::MultiRelationalGraph& graph) {
  if (graph.relations.size() != saved.relation_names.size())
    throw DataError("graph has " + std::to_string(graph.relations.size()) + " relations, the model was trained on " +
                    std::to_string(saved.relation_names.size()));
  for (std::size_t r = 0; r < graph.relations.size(); ++r)
    if (graph.relations[r].name != saved.relation_names[r])
      throw DataError("relation " + std::to_string(r) + " is '" + graph.relations[r].name + "', expected '" +
                      saved.relation_names[r] + "'");
  if (features.attribute_dim != saved.attribute_dim) throw DataError("attribute dimension differs from the trained model");
  const auto tensors = model::prepare_graph(graph);
  Prediction p;
  p.delta_pred.assign(features.n_nodes(), 0.0);
  p.class_pred.assign(features.n_nodes(), ChangeClass::NoChange);
  std::vector<unsigned char> covered(features.n_nodes(), 0);
  for (std::size_t f = 0; f < saved.plan.folds.size(); ++f) {
    const auto inputs = make_inputs(features, saved.scaling[f]);
    const auto fwd = model::forward(inputs, tensors, saved.params[f], saved.config);
    const auto classes = fwd.classes();
    for (std::size_t i : saved.plan.folds[f].validation) {
      if (i >= features.n_nodes()) throw DataError("fold plan references node beyond the data");
      p.delta_pred[i] = fwd.delta_y.value()[i];
      p.class_pred[i] = classes[i];
      covered[i] = 1;
    }
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end())
    throw DataError("fold plan does not cover every node");
  return p;
}

}  // namespace sta4clc::training
