#pragma once

// Deterministic synthetic scenario generator. Visitation, weather and
// land-use change are driven by exponentially decaying disaster impacts,
// gravity-weighted competition between same-sector blocks and neighbour
// diffusion, so the model has recoverable signal.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sta4clc/data.hpp"

namespace sta4clc::synth {

struct DisasterSpec {
  int week = 0;  // global week
  double severity = 1.0;
  double radius_m = 1200.0;  // footprint vanishes beyond 1.5 * radius
  std::optional<double> x;   // epicentre; random when absent
  std::optional<double> y;
};

struct ScenarioConfig {
  std::size_t n_blocks = 300;
  double extent_m = 6000.0;
  std::size_t n_clusters = 6;
  double cluster_fraction = 0.6;  // share of blocks drawn around cluster centres
  double cluster_sd_m = 450.0;
  std::size_t n_sectors = 8;
  int pois_per_block_min = 2;
  int pois_per_block_max = 7;
  std::size_t attribute_dim = 4;
  int weeks_per_period = 104;
  std::size_t n_periods = 2;
  int period_stride_weeks = 52;
  std::vector<DisasterSpec> disasters;
  double footprint_sharpness = 8.0;  // severity falls as exp(-(r/radius)^p / 2)
  double alpha = 0.12;   // true decay rate per week
  double a_plus = 0.2;  // true diffusion strengths
  double a_minus = 0.2;
  double impact_strength = 0.1;      // visit loss per unit of D
  double competition_strength = 0.8;  // label weight of competitor impact
  double visit_noise = 0.25;          // log-normal sd of weekly visits
  double confounder_rate = 1.0;       // disaster-like visit dips per block and year
  double label_noise = 0.01;
  double weather_noise = 1.0;
  std::array<double, 3> class_proportions{0.25, 0.5, 0.25};  // increase, no change, decrease
  std::uint64_t seed = 42;

  /// Throws std::invalid_argument for non-positive sizes, bad proportions or
  /// disasters outside the record.
  void validate() const;
  int total_weeks() const;
  /// 300 blocks, 8 sectors, 2 periods, 3 disasters, seed 42.
  static ScenarioConfig reference();
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

struct NodeTruth {
  std::string block_id;
  int period_id = 0;
  double impact = 0.0;       // mean of the true decay sequence over the period
  double competition = 0.0;  // gravity-weighted impact of same-sector peers
  double driver = 0.0;       // latent change score after diffusion
  data::ChangeClass intended = data::ChangeClass::NoChange;
};

struct Truth {
  double alpha = 0.0;
  double a_plus = 0.0;
  double a_minus = 0.0;
  double decrease_threshold = 0.0;  // driver <= threshold -> Decrease
  double increase_threshold = 0.0;  // driver >= threshold -> Increase
  std::vector<NodeTruth> nodes;     // period-major, block order
};

void to_json(nlohmann::json& j, const Truth& t);

struct Scenario {
  data::Dataset dataset;
  Truth truth;
};

/// Throws DataError when the class proportions cannot be met.
Scenario generate(const ScenarioConfig& config);

/// blocks.csv, pois.csv, weather.csv, disasters.csv and truth.json.
void write_scenario(const Scenario& scenario, const std::filesystem::path& dir);

}  // namespace sta4clc::synth
