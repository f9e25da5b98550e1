#include "sta4clc/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <set>

#include "sta4clc/csv.hpp"
#include "sta4clc/error.hpp"

namespace sta4clc::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Collects "<prefix><k>" columns, requiring k = 0..n-1 without gaps.
std::vector<std::size_t> indexed_columns(const csv::Table& t, const std::string& prefix) {
  std::map<int, std::size_t> found;
  for (std::size_t c = 0; c < t.header().size(); ++c) {
    const std::string& h = t.header()[c];
    if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string rest = h.substr(prefix.size());
    if (!std::all_of(rest.begin(), rest.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) continue;
    found.emplace(std::stoi(rest), c);
  }
  std::vector<std::size_t> cols;
  int expect = 0;
  for (auto [k, c] : found) {
    if (k != expect) throw DataError(t.source() + ": column " + prefix + std::to_string(expect) + " missing");
    cols.push_back(c);
    ++expect;
  }
  return cols;
}

double clamp_share(double y, const csv::Table& t, std::size_t row, const char* what) {
  if (y < 0.0 || y > 1.0) {
    std::cerr << "warning: " << t.where(row) << what << " = " << y << " clamped to [0, 1]\n";
    return std::clamp(y, 0.0, 1.0);
  }
  return y;
}

}  // namespace

const char* class_name(ChangeClass c) {
  switch (c) {
    case ChangeClass::Increase: return "Increase";
    case ChangeClass::NoChange: return "NoChange";
    case ChangeClass::Decrease: return "Decrease";
  }
  return "?";
}

std::size_t Dataset::block_index(const std::string& block_id) const {
  auto it = block_index_.find(block_id);
  if (it == block_index_.end()) throw DataError("unknown block '" + block_id + "'");
  return it->second;
}

const PeriodWindow& Dataset::period(int period_id) const {
  for (const auto& p : periods)
    if (p.period_id == period_id) return p;
  throw DataError("unknown period " + std::to_string(period_id));
}

std::vector<std::size_t> Dataset::records_of_period(int period_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].period_id == period_id) out.push_back(i);
  std::sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
    return block_index_.at(records[a].block_id) < block_index_.at(records[b].block_id);
  });
  return out;
}

void Dataset::finalize() {
  block_index_.clear();
  for (std::size_t i = 0; i < block_ids.size(); ++i)
    if (!block_index_.emplace(block_ids[i], i).second) throw DataError("duplicate block id '" + block_ids[i] + "'");
  pois_by_block_.assign(block_ids.size(), {});
  for (std::size_t j = 0; j < pois.size(); ++j) {
    const auto& poi = pois[j];
    auto it = block_index_.find(poi.block_id);
    if (it == block_index_.end())
      throw DataError("POI '" + poi.poi_id + "' references unknown block '" + poi.block_id + "'");
    if (poi.visits.size() != static_cast<std::size_t>(total_weeks))
      throw DataError("POI '" + poi.poi_id + "' has " + std::to_string(poi.visits.size()) + " weeks, expected " +
                      std::to_string(total_weeks));
    pois_by_block_[it->second].push_back(j);
  }
  for (const auto& r : records)
    if (!block_index_.count(r.block_id)) throw DataError("record references unknown block '" + r.block_id + "'");
  for (const auto& e : disasters)
    for (const auto& [b, s] : e.severity_by_block)
      if (!block_index_.count(b)) throw DataError("disaster '" + e.event_id + "' references unknown block '" + b + "'");
  std::sort(periods.begin(), periods.end(),
            [](const PeriodWindow& a, const PeriodWindow& b) { return a.period_id < b.period_id; });
}

DatasetPaths DatasetPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "blocks.csv", dir / "pois.csv", dir / "weather.csv", dir / "disasters.csv"};
}

Dataset load_dataset(const DatasetPaths& paths, const DatasetOptions& options) {
  Dataset ds;
  ds.label_config = options.labels;
  ds.weeks_per_period = options.weeks_per_period;

  // blocks.csv
  const csv::Table blocks = csv::Table::read(paths.blocks);
  const std::size_t c_id = blocks.column("block_id"), c_x = blocks.column("cx"), c_y = blocks.column("cy");
  const std::size_t c_period = blocks.column("period_id"), c_ys = blocks.column("y_start"),
                    c_ye = blocks.column("y_end");
  const auto z_cols = indexed_columns(blocks, "z_");
  std::unordered_map<std::string, std::size_t> seen_block;
  std::set<std::pair<std::string, int>> seen_record;
  std::set<int> period_ids;
  for (std::size_t r = 0; r < blocks.rows(); ++r) {
    BlockRecord rec;
    rec.block_id = blocks.cell(r, c_id);
    if (rec.block_id.empty()) throw DataError(blocks.where(r) + "empty block_id");
    rec.centroid = {blocks.number(r, c_x), blocks.number(r, c_y)};
    for (auto c : z_cols) rec.z.push_back(blocks.number(r, c));
    const long long pid = blocks.integer(r, c_period);
    if (pid < 0) throw DataError(blocks.where(r) + "negative period_id");
    rec.period_id = static_cast<int>(pid);
    rec.y_start = clamp_share(blocks.number(r, c_ys), blocks, r, "y_start");
    rec.y_end = clamp_share(blocks.number(r, c_ye), blocks, r, "y_end");
    if (!seen_record.emplace(rec.block_id, rec.period_id).second)
      throw DataError(blocks.where(r) + "duplicate row for block '" + rec.block_id + "' period " + std::to_string(pid));
    auto [it, fresh] = seen_block.emplace(rec.block_id, ds.block_ids.size());
    if (fresh) {
      ds.block_ids.push_back(rec.block_id);
      ds.centroids.push_back(rec.centroid);
    } else {
      const Point& p = ds.centroids[it->second];
      if (std::abs(p.x - rec.centroid.x) > 1e-6 || std::abs(p.y - rec.centroid.y) > 1e-6)
        throw DataError(blocks.where(r) + "centroid of block '" + rec.block_id + "' differs between periods");
    }
    period_ids.insert(rec.period_id);
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw DataError(blocks.source() + ": no data rows");
  for (int pid : period_ids) ds.periods.push_back({pid, pid * options.period_stride_weeks});
  ds.total_weeks = ds.periods.back().start_week + ds.weeks_per_period;

  // pois.csv
  const csv::Table pois = csv::Table::read(paths.pois);
  const std::size_t p_id = pois.column("poi_id"), p_block = pois.column("block_id"), p_naics = pois.column("naics3");
  const auto w_cols = indexed_columns(pois, "w");
  if (w_cols.size() != static_cast<std::size_t>(ds.total_weeks))
    throw DataError(pois.source() + ": visit series has " + std::to_string(w_cols.size()) + " weeks, expected " +
                    std::to_string(ds.total_weeks) + " (" + std::to_string(ds.periods.size()) + " period(s) of " +
                    std::to_string(ds.weeks_per_period) + " weeks)");
  for (std::size_t r = 0; r < pois.rows(); ++r) {
    PoiRecord poi;
    poi.poi_id = pois.cell(r, p_id);
    poi.block_id = pois.cell(r, p_block);
    if (!seen_block.count(poi.block_id))
      throw DataError(pois.where(r) + "unknown block_id '" + poi.block_id + "'");
    const long long naics = pois.integer(r, p_naics);
    if (naics < 100 || naics > 999) throw DataError(pois.where(r) + "naics3 out of range: " + std::to_string(naics));
    poi.sector = static_cast<int>(naics);
    poi.visits.reserve(w_cols.size());
    for (auto c : w_cols) {
      const long long v = pois.integer(r, c);
      if (v < 0) throw DataError(pois.where(r) + "negative visit count in " + pois.header()[c]);
      poi.visits.push_back(v);
    }
    ds.pois.push_back(std::move(poi));
  }

  // weather.csv
  const std::size_t n_days = static_cast<std::size_t>(ds.total_weeks) * 7;
  ds.weather.assign(ds.block_ids.size(), std::vector<DailyWeather>(n_days, {kNaN, kNaN, kNaN}));
  const csv::Table weather = csv::Table::read(paths.weather);
  const std::size_t w_block = weather.column("block_id"), w_day = weather.column("day_index"),
                    w_pr = weather.column("precip"), w_wind = weather.column("wind"),
                    w_pres = weather.column("pressure");
  for (std::size_t r = 0; r < weather.rows(); ++r) {
    auto it = seen_block.find(weather.cell(r, w_block));
    if (it == seen_block.end())
      throw DataError(weather.where(r) + "unknown block_id '" + weather.cell(r, w_block) + "'");
    const long long day = weather.integer(r, w_day);
    if (day < 0 || static_cast<std::size_t>(day) >= n_days)
      throw DataError(weather.where(r) + "day_index " + std::to_string(day) + " outside [0, " + std::to_string(n_days) +
                      ")");
    DailyWeather& slot = ds.weather[it->second][static_cast<std::size_t>(day)];
    if (!std::isnan(slot.precip)) throw DataError(weather.where(r) + "duplicate day " + std::to_string(day));
    slot = {weather.number(r, w_pr), weather.number(r, w_wind), weather.number(r, w_pres)};
  }

  // disasters.csv
  const csv::Table dis = csv::Table::read(paths.disasters);
  const std::size_t d_id = dis.column("event_id"), d_week = dis.column("week"), d_block = dis.column("block_id"),
                    d_sev = dis.column("severity");
  std::map<std::string, std::size_t> event_slot;
  for (std::size_t r = 0; r < dis.rows(); ++r) {
    const std::string& id = dis.cell(r, d_id);
    const long long week = dis.integer(r, d_week);
    if (week < 0 || week >= ds.total_weeks)
      throw DataError(dis.where(r) + "week " + std::to_string(week) + " outside [0, " + std::to_string(ds.total_weeks) +
                      ")");
    const std::string& block = dis.cell(r, d_block);
    if (!seen_block.count(block)) throw DataError(dis.where(r) + "unknown block_id '" + block + "'");
    const double sev = dis.number(r, d_sev);
    if (sev < 0.0) throw DataError(dis.where(r) + "negative severity");
    auto [it, fresh] = event_slot.emplace(id, ds.disasters.size());
    if (fresh) ds.disasters.push_back({id, static_cast<int>(week), {}});
    DisasterEvent& ev = ds.disasters[it->second];
    if (ev.week != week) throw DataError(dis.where(r) + "event '" + id + "' has inconsistent week");
    if (!ev.severity_by_block.emplace(block, sev).second)
      throw DataError(dis.where(r) + "duplicate severity for block '" + block + "' in event '" + id + "'");
  }

  ds.finalize();
  return ds;
}

BlockSeries aggregate_block_series(const Dataset& dataset, const std::string& block_id, int period_id) {
  const std::size_t b = dataset.block_index(block_id);
  const PeriodWindow& period = dataset.period(period_id);
  const std::size_t T = static_cast<std::size_t>(dataset.weeks_per_period);
  BlockSeries out{std::vector<std::int64_t>(T, 0), std::vector<std::int64_t>(T, 0)};
  for (std::size_t j : dataset.pois_by_block()[b]) {
    const auto& visits = dataset.pois[j].visits;
    for (std::size_t t = 0; t < T; ++t) {
      const std::int64_t v = visits[static_cast<std::size_t>(period.start_week) + t];
      out.visits[t] += v;
      out.active_pois[t] += v >= 1 ? 1 : 0;
    }
  }
  return out;
}

std::vector<WeeklyWeather> weekly_aggregate_weather(std::span<const DailyWeather> daily, std::size_t first_day,
                                                    std::size_t weeks, const WeatherGapPolicy& policy) {
  const std::size_t n = weeks * 7;
  if (first_day + n > daily.size())
    throw DataError("weather record covers " + std::to_string(daily.size()) + " days, need days [" +
                    std::to_string(first_day) + ", " + std::to_string(first_day + n) + ")");
  std::vector<DailyWeather> days(daily.begin() + static_cast<std::ptrdiff_t>(first_day),
                                 daily.begin() + static_cast<std::ptrdiff_t>(first_day + n));
  auto missing = [](const DailyWeather& d) {
    return !std::isfinite(d.precip) || !std::isfinite(d.wind) || !std::isfinite(d.pressure);
  };
  for (std::size_t i = 0; i < n;) {
    if (!missing(days[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && missing(days[j])) ++j;
    const std::size_t run = j - i;
    if (run > static_cast<std::size_t>(policy.max_interpolated_run) || i == 0 || j == n)
      throw DataError("weather gap of " + std::to_string(run) + " day(s) starting at day " +
                      std::to_string(first_day + i));
    const DailyWeather a = days[i - 1], b = days[j];
    for (std::size_t k = i; k < j; ++k) {
      const double f = static_cast<double>(k - i + 1) / static_cast<double>(run + 1);
      days[k] = {a.precip + f * (b.precip - a.precip), a.wind + f * (b.wind - a.wind),
                 a.pressure + f * (b.pressure - a.pressure)};
    }
    i = j;
  }
  std::vector<WeeklyWeather> out(weeks);
  for (std::size_t w = 0; w < weeks; ++w) {
    double precip = 0.0, wind = -std::numeric_limits<double>::infinity(), pressure = 0.0;
    for (std::size_t d = 0; d < 7; ++d) {
      const DailyWeather& day = days[w * 7 + d];
      precip += day.precip;
      wind = std::max(wind, day.wind);
      pressure += day.pressure;
    }
    out[w] = {precip, wind, pressure / 7.0};
  }
  return out;
}

ChangeClass derive_label(double y_start, double y_end, const LabelConfig& config) {
  const double delta = y_end - y_start;
  if (delta > config.epsilon) return ChangeClass::Increase;
  if (delta < -config.epsilon) return ChangeClass::Decrease;
  return ChangeClass::NoChange;
}

Standardizer Standardizer::fit(const FeatureMatrix& m, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw DataError("standardizer: empty training split");
  Standardizer s;
  s.mean.assign(m.cols, 0.0);
  s.sd.assign(m.cols, 0.0);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r : train_rows) {
      const double v = m.at(r, c);
      if (!std::isfinite(v)) continue;
      sum += v;
      ++count;
    }
    if (count == 0) continue;
    const double mu = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t r : train_rows) {
      const double v = m.at(r, c);
      if (std::isfinite(v)) ss += (v - mu) * (v - mu);
    }
    s.mean[c] = mu;
    s.sd[c] = std::sqrt(ss / static_cast<double>(count));
  }
  return s;
}

double Standardizer::transform(std::size_t col, double value) const {
  if (!std::isfinite(value)) return value;
  if (!(sd[col] > 0.0)) return 0.0;
  return (value - mean[col]) / sd[col];
}

void Standardizer::apply(FeatureMatrix& m) const {
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = transform(c, m.at(r, c));
}

std::vector<std::size_t> resample_balanced(std::span<const std::size_t> indices, std::span<const ChangeClass> labels,
                                           std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i : indices) members[static_cast<int>(labels[i])].push_back(i);
  std::size_t majority = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (members[c].empty())
      throw DataError(std::string("resample_balanced: class ") + class_name(static_cast<ChangeClass>(c)) +
                      " has no samples");
    majority = std::max(majority, members[c].size());
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(majority * kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = members[c];
    out.insert(out.end(), m.begin(), m.end());
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    for (std::size_t k = m.size(); k < majority; ++k) out.push_back(m[pick(rng)]);
  }
  return out;
}

}  // namespace sta4clc::data
