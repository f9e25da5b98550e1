#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "sta4clc/csv.hpp"
#include "sta4clc/data.hpp"
#include "sta4clc/error.hpp"
#include "sta4clc/graph.hpp"
#include "sta4clc/resilience.hpp"
#include "sta4clc/synth.hpp"
#include "sta4clc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sta4clc;

namespace {

constexpr const char* kVersion = STA4CLC_VERSION;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  fs::path data;
  fs::path graph;
  fs::path config;
  fs::path out;
  fs::path model;
  fs::path overrides;
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::size_t folds = 5;
  int window = 26;
  int bins = 20;
  std::size_t k = 10;
  std::size_t min_sector_blocks = 20;
  int weeks = 104;
  int stride = 52;
  int weather_gap = 0;
  std::string variants;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0)
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

unsigned thread_count() {
  const char* s = std::getenv("STA4CLC_THREADS");
  if (s == nullptr || *s == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(s, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw UsageError(std::string("STA4CLC_THREADS must be a positive integer, got '") + s + "'");
  return static_cast<unsigned>(n);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

/// A file when `out` names one (it has an extension), otherwise `out/name`.
fs::path output_file(const fs::path& out, const char* name) {
  if (out.has_extension()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    return out;
  }
  fs::create_directories(out);
  return out / name;
}

fs::path manifest_path(const fs::path& out) {
  if (out.has_extension()) return out.parent_path() / (out.stem().string() + ".manifest.json");
  return out / "manifest.json";
}

class Manifest {
 public:
  explicit Manifest(std::string subcommand)
      : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& name, const fs::path& path) {
    if (fs::is_directory(path)) {
      for (const char* f : {"blocks.csv", "pois.csv", "weather.csv", "disasters.csv"})
        if (fs::exists(path / f)) inputs_[name + "/" + f] = {{"path", (path / f).string()}, {"sha256", sha256_file(path / f)}};
    } else {
      inputs_[name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
    }
  }

  json config = json::object();
  std::uint64_t seed = 0;

  void write(const fs::path& path) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json(path, {{"subcommand", subcommand_},
                      {"tool_version", kVersion},
                      {"seed", seed},
                      {"config", config},
                      {"inputs", inputs_},
                      {"wall_time_s", wall}});
  }

 private:
  std::string subcommand_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::object();
};

data::DatasetOptions dataset_options(const Options& o) {
  data::DatasetOptions d;
  d.weeks_per_period = o.weeks;
  d.period_stride_weeks = o.stride;
  d.weather_gaps.max_interpolated_run = o.weather_gap;
  return d;
}

data::Dataset load_data(const Options& o, Manifest& m) {
  m.input("data", o.data);
  return data::load_dataset(data::DatasetPaths::in_directory(o.data), dataset_options(o));
}

resilience::ResilienceConfig resilience_config(const Options& o) {
  resilience::ResilienceConfig c;
  c.window = o.window;
  c.bins = o.bins;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

training::FeatureOptions feature_options(const Options& o) {
  training::FeatureOptions f;
  f.resilience = resilience_config(o);
  f.weather_gaps.max_interpolated_run = o.weather_gap;
  return f;
}

graph::MultiRelationalGraph block_graph(const Options& o, const data::Dataset& ds, Manifest& m) {
  if (!o.graph.empty()) {
    m.input("graph", o.graph);
    auto g = graph::read_graph_json(o.graph);
    if (g.n_nodes != ds.n_blocks())
      throw DataError(o.graph.string() + ": graph has " + std::to_string(g.n_nodes) + " nodes but the data has " +
                      std::to_string(ds.n_blocks()) + " blocks");
    return g;
  }
  training::GraphOptions opts;
  opts.k = o.k;
  opts.sectors.min_blocks = o.min_sector_blocks;
  return training::build_block_graph(ds, opts);
}

std::vector<std::string> relation_names(const graph::MultiRelationalGraph& g) {
  std::vector<std::string> names;
  for (const auto& r : g.relations) names.push_back(r.name);
  return names;
}

model::ModelConfig model_config(const Options& o, Manifest& m) {
  model::ModelConfig cfg;
  if (!o.config.empty()) {
    m.input("config", o.config);
    cfg = read_json(o.config).get<model::ModelConfig>();
  }
  if (o.seed_given) cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

json run_config(const Options& o, const model::ModelConfig& cfg) {
  return {{"model", cfg},
          {"folds", o.folds},
          {"seed", cfg.seed},
          {"features", {{"window", o.window}, {"bins", o.bins}, {"max_weather_gap", o.weather_gap}}},
          {"periods", {{"weeks", o.weeks}, {"stride", o.stride}}},
          {"graph", {{"k", o.k}, {"min_sector_blocks", o.min_sector_blocks}}}};
}

// Restores the data and feature settings a run was trained with.
void adopt_run_config(const fs::path& run, Options& o) {
  const json j = read_json(run / "config.json");
  try {
    o.window = j.at("features").at("window").get<int>();
    o.bins = j.at("features").at("bins").get<int>();
    o.weather_gap = j.at("features").at("max_weather_gap").get<int>();
    o.weeks = j.at("periods").at("weeks").get<int>();
    o.stride = j.at("periods").at("stride").get<int>();
  } catch (const json::exception& e) {
    throw DataError((run / "config.json").string() + ": " + e.what());
  }
}

std::size_t attribute_column(const std::string& field, std::size_t dim) {
  if (field.size() > 2 && field.compare(0, 2, "z_") == 0 &&
      std::all_of(field.begin() + 2, field.end(), [](char c) { return c >= '0' && c <= '9'; }) && field.size() < 12) {
    const std::size_t k = std::stoul(field.substr(2));
    if (k < dim) return k;
  }
  return dim;
}

// Rows: kind,block_id,field,value[,period_id]. kind "attribute" sets column
// `field` (z_k) of the block, in every period unless period_id is given.
// kind "disaster" adds an event at global week `field` with severity `value`
// for the block; rows sharing a week form one event.
void apply_overrides(data::Dataset& ds, const fs::path& path) {
  const auto t = csv::Table::read(path);
  const std::size_t c_kind = t.column("kind"), c_block = t.column("block_id"), c_field = t.column("field"),
                    c_value = t.column("value");
  const bool has_period = t.has_column("period_id");
  std::map<int, data::DisasterEvent> added;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::string& kind = t.cell(r, c_kind);
    const std::string& block = t.cell(r, c_block);
    const std::string& field = t.cell(r, c_field);
    try {
      ds.block_index(block);
    } catch (const DataError&) {
      throw DataError(t.where(r) + "unknown block '" + block + "'");
    }
    const double value = t.number(r, c_value);
    if (kind == "attribute") {
      const std::size_t k = attribute_column(field, ds.attribute_dim());
      if (k == ds.attribute_dim()) throw DataError(t.where(r) + "unknown attribute column '" + field + "'");
      std::optional<int> period;
      if (has_period && !t.cell(r, t.column("period_id")).empty()) {
        period = static_cast<int>(t.integer(r, t.column("period_id")));
        ds.period(*period);
      }
      for (auto& rec : ds.records)
        if (rec.block_id == block && (!period || rec.period_id == *period)) rec.z[k] = value;
    } else if (kind == "disaster") {
      char* end = nullptr;
      const long week = std::strtol(field.c_str(), &end, 10);
      if (field.empty() || *end != '\0' || week < 0 || week >= ds.total_weeks)
        throw DataError(t.where(r) + "disaster week '" + field + "' is outside the record");
      if (!(value > 0.0)) throw DataError(t.where(r) + "disaster severity must be positive");
      auto& ev = added[static_cast<int>(week)];
      ev.event_id = "override_w" + std::to_string(week);
      ev.week = static_cast<int>(week);
      if (!ev.severity_by_block.emplace(block, value).second)
        throw DataError(t.where(r) + "duplicate disaster row for block '" + block + "'");
    } else {
      throw DataError(t.where(r) + "unknown override kind '" + kind + "'");
    }
  }
  for (auto& [week, ev] : added) ds.disasters.push_back(std::move(ev));
  ds.finalize();
}

// ---- subcommands -----------------------------------------------------------

void run_synth(const Options& o) {
  Manifest m("synth");
  synth::ScenarioConfig cfg = synth::ScenarioConfig::reference();
  if (!o.config.empty()) {
    m.input("config", o.config);
    json patch = json(cfg);
    patch.merge_patch(read_json(o.config));
    cfg = patch.get<synth::ScenarioConfig>();
  }
  if (o.seed_given) cfg.seed = o.seed;
  cfg.validate();
  const auto scenario = synth::generate(cfg);
  fs::create_directories(o.out);
  synth::write_scenario(scenario, o.out);
  m.config = cfg;
  m.seed = cfg.seed;
  m.write(o.out / "manifest.json");
  std::cout << "wrote " << scenario.dataset.n_blocks() << " blocks, " << scenario.dataset.records.size()
            << " block-periods to " << o.out.string() << '\n';
}

void run_resilience(const Options& o) {
  Manifest m("resilience");
  const auto cfg = resilience_config(o);
  const auto ds = load_data(o, m);
  const fs::path path = output_file(o.out, "resilience.csv");
  std::ofstream out(path);
  out << "block_id,period_id,week,r_value\n";
  for (const auto& window : ds.periods)
    for (const auto& block : ds.block_ids) {
      const auto series = data::aggregate_block_series(ds, block, window.period_id);
      const std::vector<double> v(series.visits.begin(), series.visits.end());
      const auto r = resilience::rolling_resilience(v, cfg);
      for (std::size_t t = 0; t < r.size(); ++t) {
        out << block << ',' << window.period_id << ',' << window.start_week + static_cast<int>(t) << ',';
        if (!std::isnan(r[t])) out << csv::format_double(r[t]);
        out << '\n';
      }
    }
  if (!out) throw DataError("failed writing " + path.string());
  m.config = {{"window", cfg.window}, {"bins", cfg.bins}, {"periods", {{"weeks", o.weeks}, {"stride", o.stride}}}};
  m.write(manifest_path(o.out));
}

void run_graph(const Options& o) {
  Manifest m("graph");
  const auto ds = load_data(o, m);
  Options opts = o;
  opts.graph.clear();
  const auto g = block_graph(opts, ds, m);
  graph::write_graph_json(g, output_file(o.out, "graph.json"));
  m.config = {{"k", o.k}, {"min_sector_blocks", o.min_sector_blocks}};
  m.write(manifest_path(o.out));
  std::cout << "graph: " << g.n_nodes << " nodes, " << g.relation_count() << " relations\n";
}

void run_train(const Options& o) {
  Manifest m("train");
  const auto cfg = model_config(o, m);
  const auto fopts = feature_options(o);
  const auto ds = load_data(o, m);
  const auto features = training::build_features(ds, fopts);
  const auto bg = block_graph(o, ds, m);
  const auto plan = training::kfold_split(features.labels, o.folds, cfg.seed);
  const auto cv = training::cross_validate(features, training::node_graph(bg, features.n_periods), plan, cfg,
                                           thread_count());
  fs::create_directories(o.out);
  const json echo = run_config(o, cfg);
  write_json(o.out / "config.json", echo);
  graph::write_graph_json(bg, o.out / "graph.json");
  training::save_model(o.out, cv, features.attribute_dim, relation_names(bg));
  training::write_history_csv(o.out / "history.csv", cv);
  write_json(o.out / "metrics.json", training::metrics_json(cv));
  training::write_predictions_csv(o.out / "predictions.csv", features, cv.delta_pred, cv.class_pred);
  m.config = echo;
  m.seed = cfg.seed;
  m.write(o.out / "manifest.json");
  const auto val = cv.mean_validation();
  std::cout << "mean validation macro F1 " << val.macro_f1 << " (precision " << val.macro_precision << ", recall "
            << val.macro_recall << ")\n";
}

struct LoadedRun {
  training::SavedModel saved;
  training::NodeFeatures features;
  graph::MultiRelationalGraph graph;
};

LoadedRun load_run(Options o, Manifest& m, bool with_overrides) {
  adopt_run_config(o.model, o);
  m.input("model/params.bin", o.model / "params.bin");
  LoadedRun run;
  run.saved = training::load_model(o.model);
  auto ds = load_data(o, m);
  if (with_overrides && !o.overrides.empty()) {
    m.input("overrides", o.overrides);
    apply_overrides(ds, o.overrides);
  }
  if (ds.attribute_dim() != run.saved.attribute_dim)
    throw DataError("data has " + std::to_string(ds.attribute_dim()) + " attribute columns, the model expects " +
                    std::to_string(run.saved.attribute_dim));
  run.features = training::build_features(ds, feature_options(o));
  o.graph = o.graph.empty() ? o.model / "graph.json" : o.graph;
  const auto bg = block_graph(o, ds, m);
  if (relation_names(bg) != run.saved.relation_names)
    throw DataError("graph relations do not match the ones the model was trained with");
  run.graph = training::node_graph(bg, run.features.n_periods);
  m.config = read_json(o.model / "config.json");
  m.seed = run.saved.config.seed;
  return run;
}

void run_evaluate(const Options& o) {
  Manifest m("evaluate");
  const auto run = load_run(o, m, false);
  const auto pred = training::predict_out_of_fold(run.saved, run.features, run.graph);
  json j;
  j["folds"] = json::array();
  double sum = 0.0;
  for (const auto& fold : run.saved.plan.folds) {
    const auto metrics = training::compute_metrics(run.features.labels, pred.class_pred, fold.validation);
    sum += metrics.macro_f1;
    j["folds"].push_back({{"validation", metrics}});
  }
  j["mean_validation_macro_f1"] = sum / static_cast<double>(run.saved.plan.folds.size());
  j["out_of_fold"] = training::compute_metrics(run.features.labels, pred.class_pred);
  fs::create_directories(o.out);
  write_json(o.out / "metrics.json", j);
  training::write_predictions_csv(o.out / "predictions.csv", run.features, pred.delta_pred, pred.class_pred);
  m.write(o.out / "manifest.json");
  std::cout << "mean validation macro F1 " << j["mean_validation_macro_f1"].get<double>() << '\n';
}

void run_predict(const Options& o) {
  if (fs::exists(o.out) && fs::equivalent(o.out, o.model))
    throw UsageError("--out must differ from the trained run directory");
  Manifest m("predict");
  const auto run = load_run(o, m, true);
  const auto pred = training::predict_out_of_fold(run.saved, run.features, run.graph);
  fs::create_directories(o.out);
  training::write_predictions_csv(o.out / "predictions.csv", run.features, pred.delta_pred, pred.class_pred);
  m.write(o.out / "manifest.json");
}

void run_ablate(const Options& o) {
  Manifest m("ablate");
  const auto cfg = model_config(o, m);
  const auto fopts = feature_options(o);
  std::vector<training::AblationVariant> variants;
  if (!o.variants.empty()) {
    std::stringstream ss(o.variants);
    for (std::string name; std::getline(ss, name, ',');) {
      const auto& grid = training::ablation_grid();
      auto it = std::find_if(grid.begin(), grid.end(), [&](const auto& v) { return v.name == name; });
      if (it == grid.end()) throw UsageError("unknown variant '" + name + "'");
      variants.push_back(*it);
    }
  }
  const auto ds = load_data(o, m);
  const auto features = training::build_features(ds, fopts);
  const auto bg = block_graph(o, ds, m);
  const auto plan = training::kfold_split(features.labels, o.folds, cfg.seed);
  const auto rows = training::ablate(features, training::node_graph(bg, features.n_periods), plan, cfg,
                                     thread_count(), variants);
  const fs::path path = output_file(o.out, "ablation.csv");
  training::write_ablation_csv(path, rows);
  m.config = run_config(o, cfg);
  m.seed = cfg.seed;
  m.write(manifest_path(o.out));
  for (const auto& r : rows) std::cout << r.variant.name << " validation macro F1 " << r.val_f1 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal attention model for post-disaster commercial land use change"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          o.seed = s;
          o.seed_given = true;
        },
        "Random seed (overrides the config)");
  };
  auto periods = [&](CLI::App* sub) {
    sub->add_option("--weeks", o.weeks, "Weeks per period")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--stride", o.stride, "Weeks between period starts")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--weather-gap", o.weather_gap, "Longest run of missing weather days to interpolate")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
  };
  auto features = [&](CLI::App* sub) {
    sub->add_option("--window", o.window, "Rolling resilience window (weeks)")->capture_default_str();
    sub->add_option("--bins", o.bins, "Resilience drift bins")->capture_default_str();
  };
  auto graph_opts = [&](CLI::App* sub) {
    sub->add_option("--k", o.k, "Nearest neighbours in the adjacency relation")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--min-sector-blocks", o.min_sector_blocks, "A sector needs more blocks than this")
        ->capture_default_str();
  };
  auto training_opts = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--graph", o.graph, "graph.json (built from the data when absent)")->check(CLI::ExistingFile);
    sub->add_option("--config", o.config, "Model config JSON")->check(CLI::ExistingFile);
    sub->add_option("--folds", o.folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 100));
    sub->add_option("--out", o.out, "Output directory")->required();
    seed(sub);
    features(sub);
    graph_opts(sub);
    periods(sub);
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario");
  synth->add_option("--config", o.config, "Scenario config JSON (merged over the reference)")->check(CLI::ExistingFile);
  synth->add_option("--out", o.out, "Output directory")->required();
  seed(synth);

  auto* resil = app.add_subcommand("resilience", "Rolling resilience per block and week");
  resil->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  resil->add_option("--out", o.out, "Output CSV or directory")->required();
  features(resil);
  periods(resil);

  auto* graph = app.add_subcommand("graph", "Build the multi-relational block graph");
  graph->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  graph->add_option("--out", o.out, "Output JSON or directory")->required();
  graph_opts(graph);
  periods(graph);

  auto* train = app.add_subcommand("train", "Cross-validated training into a run directory");
  training_opts(train);

  auto* ablate = app.add_subcommand("ablate", "Train the M1-M8 module grid");
  training_opts(ablate);
  ablate->add_option("--variants", o.variants, "Comma-separated subset, e.g. M1,M8");

  auto* evaluate = app.add_subcommand("evaluate", "Score a trained run on a dataset");
  evaluate->add_option("--model", o.model, "Run directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--graph", o.graph, "graph.json (the run's graph when absent)")->check(CLI::ExistingFile);
  evaluate->add_option("--out", o.out, "Output directory")->required();

  auto* predict = app.add_subcommand("predict", "What-if predictions with attribute or disaster overrides");
  predict->add_option("--model", o.model, "Run directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--graph", o.graph, "graph.json (the run's graph when absent)")->check(CLI::ExistingFile);
  predict->add_option("--overrides", o.overrides, "CSV: kind,block_id,field,value[,period_id]")->check(CLI::ExistingFile);
  predict->add_option("--out", o.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    const auto chosen = app.get_subcommands();
    std::cerr << "error: " << e.what() << "\n\n" << (chosen.empty() ? app.help() : chosen.front()->help());
    return 1;
  }

  try {
    if (*synth) run_synth(o);
    else if (*resil) run_resilience(o);
    else if (*graph) run_graph(o);
    else if (*train) run_train(o);
    else if (*ablate) run_ablate(o);
    else if (*evaluate) run_evaluate(o);
    else if (*predict) run_predict(o);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
}
