#pragma once

// Block/POI/weather/disaster data model, CSV ingestion and the per-block
// preprocessing steps that precede feature assembly.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sta4clc::data {

enum class ChangeClass : int { Increase = 0, NoChange = 1, Decrease = 2 };
inline constexpr int kNumClasses = 3;

const char* class_name(ChangeClass c);

struct LabelConfig {
  double epsilon = 1e-5;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// One block observed over one period.
struct BlockRecord {
  std::string block_id;
  Point centroid;
  std::vector<double> z;
  int period_id = 0;
  double y_start = 0.0;
  double y_end = 0.0;

  double delta() const { return y_end - y_start; }
};

struct PoiRecord {
  std::string poi_id;
  std::string block_id;
  int sector = 0;  // 3-digit NAICS
  std::vector<std::int64_t> visits;  // one entry per global week
};

struct DailyWeather {
  double precip = 0.0;
  double wind = 0.0;
  double pressure = 0.0;
};

/// Weekly weather: precipitation sum, wind max, pressure mean.
using WeeklyWeather = std::array<double, 3>;

struct DisasterEvent {
  std::string event_id;
  int week = 0;  // global week index
  std::map<std::string, double> severity_by_block;
};

struct PeriodWindow {
  int period_id = 0;
  int start_week = 0;  // global week index of local week 0
};

struct WeatherGapPolicy {
  /// Longest run of consecutive missing days repaired by linear
  /// interpolation; 0 rejects any gap.
  int max_interpolated_run = 0;
};

struct DatasetOptions {
  LabelConfig labels;
  int weeks_per_period = 104;
  int period_stride_weeks = 52;
  WeatherGapPolicy weather_gaps;
};

class Dataset {
 public:
  LabelConfig label_config;
  int weeks_per_period = 104;
  int total_weeks = 0;
  std::vector<std::string> block_ids;  // unique, in first-appearance order
  std::vector<Point> centroids;        // per unique block
  std::vector<BlockRecord> records;    // one per (block, period)
  std::vector<PoiRecord> pois;
  std::vector<DisasterEvent> disasters;
  std::vector<PeriodWindow> periods;
  /// Daily weather per unique block over the global record (7 * total_weeks
  /// days); absent days hold NaN.
  std::vector<std::vector<DailyWeather>> weather;

  std::size_t n_blocks() const { return block_ids.size(); }
  std::size_t attribute_dim() const { return records.empty() ? 0 : records.front().z.size(); }
  /// Throws DataError for unknown ids.
  std::size_t block_index(const std::string& block_id) const;
  const PeriodWindow& period(int period_id) const;
  /// Indices into records for the given period, in block order.
  std::vector<std::size_t> records_of_period(int period_id) const;
  /// POI indices per unique block.
  const std::vector<std::vector<std::size_t>>& pois_by_block() const { return pois_by_block_; }

  /// Builds lookup indices and checks cross references. Called by loaders.
  void finalize();

 private:
  std::unordered_map<std::string, std::size_t> block_index_;
  std::vector<std::vector<std::size_t>> pois_by_block_;
};

/// Input file set; any path left empty resolves to <dir>/<name>.csv.
struct DatasetPaths {
  std::filesystem::path blocks;
  std::filesystem::path pois;
  std::filesystem::path weather;
  std::filesystem::path disasters;

  static DatasetPaths in_directory(const std::filesystem::path& dir);
};

Dataset load_dataset(const DatasetPaths& paths, const DatasetOptions& options = {});

struct BlockSeries {
  std::vector<std::int64_t> visits;       // v[t]
  std::vector<std::int64_t> active_pois;  // p[t]
};

/// Weekly visit totals and active-POI counts of one block within a period.
BlockSeries aggregate_block_series(const Dataset& dataset, const std::string& block_id, int period_id);

/// Aggregates 7 * weeks days starting at first_day. Missing days are NaN.
std::vector<WeeklyWeather> weekly_aggregate_weather(std::span<const DailyWeather> daily, std::size_t first_day,
                                                    std::size_t weeks, const WeatherGapPolicy& policy = {});

ChangeClass derive_label(double y_start, double y_end, const LabelConfig& config);

/// Row-major numeric matrix used for feature columns.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Per-column z-score parameters (population standard deviation).
/// Non-finite entries are ignored when fitting and left untouched on apply.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> sd;

  static Standardizer fit(const FeatureMatrix& m, std::span<const std::size_t> train_rows);
  /// Zero-variance columns map to 0.
  void apply(FeatureMatrix& m) const;
  double transform(std::size_t col, double value) const;
};

/// Oversamples every class with replacement up to the majority count.
/// Throws DataError when a class has no members among indices.
std::vector<std::size_t> resample_balanced(std::span<const std::size_t> indices, std::span<const ChangeClass> labels,
                                           std::uint64_t seed);

}  // namespace sta4clc::data
