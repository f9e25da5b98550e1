#include "sta4clc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sta4clc/csv.hpp"
#include "sta4clc/error.hpp"
#include "sta4clc/graph.hpp"
#include "sta4clc/resilience.hpp"

namespace sta4clc::synth {

using data::ChangeClass;

namespace {

constexpr int kSectorCodes[] = {722, 445, 448, 452, 812, 811, 441, 713, 444, 446, 451, 453, 454, 721, 621, 531,
                                522, 611, 623, 624, 711, 532, 485, 488, 493, 517, 524, 541, 561, 562};
constexpr std::size_t kMaxSectors = std::size(kSectorCodes);
constexpr std::size_t kNeighbours = 10;
constexpr std::size_t kCompetitors = 15;

// Keeps the weather file compact.
double round2(double v) { return std::round(v * 100.0) / 100.0; }

double dist(const data::Point& a, const data::Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string block_name(std::size_t b) {
  std::string digits = std::to_string(b);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "B" + digits;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(footprint_sharpness > 0.0)) throw std::invalid_argument("scenario: footprint_sharpness must be positive");
  if (n_blocks < 2) throw std::invalid_argument("scenario: need at least 2 blocks");
  if (!(extent_m > 0.0)) throw std::invalid_argument("scenario: extent must be positive");
  if (n_clusters == 0 && cluster_fraction > 0.0) throw std::invalid_argument("scenario: clusters required");
  if (cluster_fraction < 0.0 || cluster_fraction > 1.0) throw std::invalid_argument("scenario: cluster_fraction in [0,1]");
  if (n_sectors == 0 || n_sectors > kMaxSectors)
    throw std::invalid_argument("scenario: n_sectors must be in [1, " + std::to_string(kMaxSectors) + "]");
  if (pois_per_block_min < 0 || pois_per_block_max < pois_per_block_min)
    throw std::invalid_argument("scenario: bad POI count range");
  if (weeks_per_period < 8 || n_periods == 0 || period_stride_weeks <= 0)
    throw std::invalid_argument("scenario: bad period layout");
  if (!(alpha > 0.0)) throw std::invalid_argument("scenario: alpha must be positive");
  if (a_plus < 0.0 || a_minus < 0.0 || a_plus >= 1.0 || a_minus >= 1.0)
    throw std::invalid_argument("scenario: diffusion strengths must lie in [0, 1)");
  if (impact_strength < 0.0 || competition_strength < 0.0 || visit_noise < 0.0 || confounder_rate < 0.0 ||
      label_noise < 0.0 || weather_noise < 0.0)
    throw std::invalid_argument("scenario: strengths and noise levels must be non-negative");
  double sum = 0.0;
  for (double p : class_proportions) {
    if (p < 0.0) throw std::invalid_argument("scenario: negative class proportion");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("scenario: class proportions must sum to 1");
  for (const auto& d : disasters) {
    if (d.week < 0 || d.week >= total_weeks())
      throw std::invalid_argument("scenario: disaster week " + std::to_string(d.week) + " outside the record");
    if (d.severity < 0.0 || !(d.radius_m > 0.0)) throw std::invalid_argument("scenario: bad disaster footprint");
  }
}

int ScenarioConfig::total_weeks() const {
  return period_stride_weeks * static_cast<int>(n_periods - 1) + weeks_per_period;
}

ScenarioConfig ScenarioConfig::reference() {
  ScenarioConfig c;
  c.disasters = {{30, 6.0, 1300.0, 1800.0, 2000.0}, {70, 4.8, 1300.0, 4300.0, 3800.0}, {120, 6.0, 1300.0, 2500.0, 4500.0}};
  return c;
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  nlohmann::json dis = nlohmann::json::array();
  for (const auto& d : c.disasters) {
    nlohmann::json e{{"week", d.week}, {"severity", d.severity}, {"radius_m", d.radius_m}};
    if (d.x) e["x"] = *d.x;
    if (d.y) e["y"] = *d.y;
    dis.push_back(e);
  }
  j = {{"n_blocks", c.n_blocks},
       {"extent_m", c.extent_m},
       {"n_clusters", c.n_clusters},
       {"cluster_fraction", c.cluster_fraction},
       {"cluster_sd_m", c.cluster_sd_m},
       {"n_sectors", c.n_sectors},
       {"pois_per_block_min", c.pois_per_block_min},
       {"pois_per_block_max", c.pois_per_block_max},
       {"attribute_dim", c.attribute_dim},
       {"weeks_per_period", c.weeks_per_period},
       {"n_periods", c.n_periods},
       {"period_stride_weeks", c.period_stride_weeks},
       {"disasters", dis},
       {"footprint_sharpness", c.footprint_sharpness},
       {"alpha", c.alpha},
       {"a_plus", c.a_plus},
       {"a_minus", c.a_minus},
       {"impact_strength", c.impact_strength},
       {"competition_strength", c.competition_strength},
       {"visit_noise", c.visit_noise},
       {"confounder_rate", c.confounder_rate},
       {"label_noise", c.label_noise},
       {"weather_noise", c.weather_noise},
       {"class_proportions",
        {{"increase", c.class_proportions[0]}, {"no_change", c.class_proportions[1]}, {"decrease", c.class_proportions[2]}}},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_blocks", c.n_blocks);
  get("extent_m", c.extent_m);
  get("n_clusters", c.n_clusters);
  get("cluster_fraction", c.cluster_fraction);
  get("cluster_sd_m", c.cluster_sd_m);
  get("n_sectors", c.n_sectors);
  get("pois_per_block_min", c.pois_per_block_min);
  get("pois_per_block_max", c.pois_per_block_max);
  get("attribute_dim", c.attribute_dim);
  get("weeks_per_period", c.weeks_per_period);
  get("n_periods", c.n_periods);
  get("period_stride_weeks", c.period_stride_weeks);
  get("footprint_sharpness", c.footprint_sharpness);
  get("alpha", c.alpha);
  get("a_plus", c.a_plus);
  get("a_minus", c.a_minus);
  get("impact_strength", c.impact_strength);
  get("competition_strength", c.competition_strength);
  get("visit_noise", c.visit_noise);
  get("confounder_rate", c.confounder_rate);
  get("label_noise", c.label_noise);
  get("weather_noise", c.weather_noise);
  get("seed", c.seed);
  if (j.contains("disasters")) {
    c.disasters.clear();
    for (const auto& e : j.at("disasters")) {
      DisasterSpec d;
      e.at("week").get_to(d.week);
      if (e.contains("severity")) e.at("severity").get_to(d.severity);
      if (e.contains("radius_m")) e.at("radius_m").get_to(d.radius_m);
      if (e.contains("x")) d.x = e.at("x").get<double>();
      if (e.contains("y")) d.y = e.at("y").get<double>();
      c.disasters.push_back(d);
    }
  }
  if (j.contains("class_proportions")) {
    const auto& p = j.at("class_proportions");
    p.at("increase").get_to(c.class_proportions[0]);
    p.at("no_change").get_to(c.class_proportions[1]);
    p.at("decrease").get_to(c.class_proportions[2]);
  }
}

void to_json(nlohmann::json& j, const Truth& t) {
  j = {{"alpha", t.alpha},
       {"a_plus", t.a_plus},
       {"a_minus", t.a_minus},
       {"decrease_threshold", t.decrease_threshold},
       {"increase_threshold", t.increase_threshold},
       {"nodes", nlohmann::json::array()}};
  for (const auto& n : t.nodes)
    j["nodes"].push_back({{"block_id", n.block_id},
                          {"period_id", n.period_id},
                          {"impact", n.impact},
                          {"competition", n.competition},
                          {"driver", n.driver},
                          {"intended_class", data::class_name(n.intended)}});
}

Scenario generate(const ScenarioConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = config.n_blocks, G = static_cast<std::size_t>(config.total_weeks());
  const std::size_t T = static_cast<std::size_t>(config.weeks_per_period);
  const double L = config.extent_m;

  Scenario sc;
  data::Dataset& ds = sc.dataset;
  ds.weeks_per_period = config.weeks_per_period;
  ds.total_weeks = static_cast<int>(G);

  // Block layout: clustered plus uniform background.
  std::vector<data::Point> centres(config.n_clusters);
  for (auto& c : centres) c = {L * (0.15 + 0.7 * unit(rng)), L * (0.15 + 0.7 * unit(rng))};
  const std::size_t n_clustered = static_cast<std::size_t>(std::round(config.cluster_fraction * static_cast<double>(n)));
  for (std::size_t b = 0; b < n; ++b) {
    data::Point p;
    if (b < n_clustered) {
      const auto& c = centres[b % centres.size()];
      p = {std::clamp(c.x + config.cluster_sd_m * normal(rng), 0.0, L),
           std::clamp(c.y + config.cluster_sd_m * normal(rng), 0.0, L)};
    } else {
      p = {L * unit(rng), L * unit(rng)};
    }
    ds.block_ids.push_back(block_name(b));
    ds.centroids.push_back(p);
  }

  // Static attributes; z_0 drives vulnerability to disaster impact.
  std::vector<std::vector<double>> z(n, std::vector<double>(config.attribute_dim));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < config.attribute_dim; ++k) z[b][k] = normal(rng);
  std::vector<double> vulnerability(n, 1.0);
  if (config.attribute_dim > 0)
    for (std::size_t b = 0; b < n; ++b) vulnerability[b] = 1.0 + 0.6 * std::tanh(z[b][0]);

  // Sector mix: every block has a dominant sector and a few other POIs.
  std::vector<std::size_t> dominant(n);
  std::vector<double> phase(config.n_sectors);
  for (auto& ph : phase) ph = 2.0 * std::numbers::pi * unit(rng);
  struct PoiDraw {
    std::size_t block, sector;
    double base, closure;
  };
  std::vector<PoiDraw> draws;
  std::uniform_int_distribution<std::size_t> pick_sector(0, config.n_sectors - 1);
  std::uniform_int_distribution<int> poi_count(config.pois_per_block_min, config.pois_per_block_max);
  for (std::size_t b = 0; b < n; ++b) {
    dominant[b] = pick_sector(rng);
    const int count = poi_count(rng);
    for (int k = 0; k < count; ++k) {
      const std::size_t s = (k == 0 || unit(rng) < 0.5) ? dominant[b] : pick_sector(rng);
      draws.push_back({b, s, std::exp(3.5 + 0.6 * normal(rng)), 0.35 + 0.65 * unit(rng)});
    }
  }

  // Disaster footprints.
  std::vector<std::vector<double>> severity(config.disasters.size(), std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < config.disasters.size(); ++k) {
    const auto& d = config.disasters[k];
    const data::Point epi{d.x ? *d.x : L * (0.2 + 0.6 * unit(rng)), d.y ? *d.y : L * (0.2 + 0.6 * unit(rng))};
    data::DisasterEvent ev;
    ev.event_id = "E" + std::to_string(k + 1);
    ev.week = d.week;
    for (std::size_t b = 0; b < n; ++b) {
      const double r = dist(ds.centroids[b], epi);
      if (r > 1.5 * d.radius_m || d.severity == 0.0) continue;
      const double s = d.severity * std::exp(-0.5 * std::pow(r / d.radius_m, config.footprint_sharpness));
      severity[k][b] = s;
      ev.severity_by_block.emplace(ds.block_ids[b], s);
    }
    ds.disasters.push_back(std::move(ev));
  }

  // Local dips unrelated to any disaster (closures, road works). They shape
  // visits like a disaster would but never reach the labels.
  std::vector<std::vector<double>> confounder(n);
  std::poisson_distribution<int> dips(std::max(1e-12, config.confounder_rate * static_cast<double>(G) / 52.0));
  std::uniform_int_distribution<int> dip_week(0, static_cast<int>(G) - 1);
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<resilience::Impulse> imp;
    const int count = config.confounder_rate > 0.0 ? dips(rng) : 0;
    for (int k = 0; k < count; ++k) imp.push_back({dip_week(rng), 0.5 + 0.5 * unit(rng)});
    confounder[b] = resilience::decay_sequence(imp, config.alpha, G);
  }

  // True decay over the whole record.
  std::vector<std::vector<double>> decay(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<resilience::Impulse> imp;
    for (std::size_t k = 0; k < config.disasters.size(); ++k)
      if (severity[k][b] > 0.0) imp.push_back({config.disasters[k].week, severity[k][b]});
    decay[b] = resilience::decay_sequence(imp, config.alpha, G);
  }

  // Shared-demand pools: a block competes in every sector it has POIs in,
  // against its strongest same-sector peers by gravity over base demand.
  const std::size_t S = config.n_sectors;
  std::vector<std::vector<double>> demand(n, std::vector<double>(S, 0.0));
  for (const auto& p : draws) demand[p.block][p.sector] += p.base;
  std::vector<std::vector<double>> share(n, std::vector<double>(S, 0.0));
  for (std::size_t b = 0; b < n; ++b) {
    const double total = std::accumulate(demand[b].begin(), demand[b].end(), 0.0);
    for (std::size_t k = 0; k < S; ++k) share[b][k] = total > 0.0 ? demand[b][k] / total : 0.0;
  }
  using Pool = std::vector<std::pair<std::size_t, double>>;
  std::vector<std::vector<Pool>> pools(n, std::vector<Pool>(S));
  for (std::size_t k = 0; k < S; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      if (demand[i][k] == 0.0) continue;
      std::vector<std::pair<double, std::size_t>> cand;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && demand[j][k] > 0.0)
          cand.emplace_back(graph::gravity_weight(demand[i][k], demand[j][k], dist(ds.centroids[i], ds.centroids[j])), j);
      const std::size_t m = std::min(kCompetitors, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(m), cand.end(),
                        [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      double total = 0.0;
      for (std::size_t r = 0; r < m; ++r) total += cand[r].first;
      for (std::size_t r = 0; r < m && total > 0.0; ++r) pools[i][k].emplace_back(cand[r].second, cand[r].first / total);
    }

  // Weekly visits: seasonal base, disaster loss, demand shifted from hit
  // competitors, closures, log-normal noise, Poisson counts.
  const double sv = config.visit_noise;
  std::vector<std::size_t> poi_counter(n, 0);
  for (const auto& p : draws) {
    data::PoiRecord rec;
    rec.block_id = ds.block_ids[p.block];
    rec.poi_id = rec.block_id + "-P" + std::to_string(++poi_counter[p.block]);
    rec.sector = kSectorCodes[p.sector];
    rec.visits.resize(G);
    for (std::size_t t = 0; t < G; ++t) {
      const double d = vulnerability[p.block] * decay[p.block][t] + confounder[p.block][t];
      // Half of the demand lost by pool peers comes here.
      double shift = 0.0;
      for (auto [j, w] : pools[p.block][p.sector])
        shift += w * std::min(1.0, config.impact_strength * vulnerability[j] * decay[j][t]);
      const double season = 1.0 + 0.25 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 52.0 + phase[p.sector]);
      double mean = p.base * season * std::max(0.0, 1.0 - config.impact_strength * d) * (1.0 + 0.5 * shift);
      const double noise = sv > 0.0 ? std::exp(sv * normal(rng) - 0.5 * sv * sv) : 1.0;
      if (config.impact_strength * d > p.closure) mean = 0.0;
      mean *= noise;
      std::int64_t count = 0;
      if (mean > 0.0) {
        if (sv > 0.0) {
          std::poisson_distribution<std::int64_t> pois(mean);
          count = pois(rng);
        } else {
          count = static_cast<std::int64_t>(std::llround(mean));
        }
      }
      rec.visits[t] = count;
    }
    ds.pois.push_back(std::move(rec));
  }

  // Regional daily weather with storm signatures, plus per-block jitter.
  const std::size_t days = 7 * G;
  std::vector<data::DailyWeather> region(days);
  std::exponential_distribution<double> rain(1.0 / 3.0);
  for (std::size_t d = 0; d < days; ++d)
    region[d] = {rain(rng), 12.0 + 3.0 * normal(rng), 1013.0 + 4.0 * normal(rng)};
  for (const auto& dsp : config.disasters)
    for (std::size_t d = 0; d < 3; ++d) {
      auto& w = region[static_cast<std::size_t>(dsp.week) * 7 + d];
      w.precip += 60.0 * dsp.severity;
      w.wind += 50.0 * dsp.severity;
      w.pressure -= 25.0 * dsp.severity;
    }
  const double wn = config.weather_noise;
  ds.weather.assign(n, std::vector<data::DailyWeather>(days));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t d = 0; d < days; ++d) {
      const auto& r = region[d];
      ds.weather[b][d] = {round2(std::max(0.0, r.precip + 0.3 * wn * normal(rng))),
                          round2(std::max(0.0, r.wind + wn * normal(rng))), round2(r.pressure + 0.5 * wn * normal(rng))};
    }

  // Latent change score per (block, period).
  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    const std::size_t m = std::min(kNeighbours, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = dist(ds.centroids[i], ds.centroids[a]), db = dist(ds.centroids[i], ds.centroids[b]);
                        return da != db ? da < db : a < b;
                      });
    neighbours[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  }
  const std::size_t N = n * config.n_periods;
  std::vector<double> impact(N), competition(N), driver(N);
  for (std::size_t p = 0; p < config.n_periods; ++p) {
    const int start = static_cast<int>(p) * config.period_stride_weeks;
    const std::size_t base = p * n;
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<resilience::Impulse> imp;
      for (std::size_t k = 0; k < config.disasters.size(); ++k) {
        const int w = config.disasters[k].week - start;
        if (severity[k][b] > 0.0 && w >= 0 && w < static_cast<int>(T)) imp.push_back({w, severity[k][b]});
      }
      double cum = 0.0;
      for (double v : resilience::decay_sequence(imp, config.alpha, T)) cum += v;
      impact[base + b] = config.alpha * cum;
    }
    std::vector<double> g0(n);
    for (std::size_t b = 0; b < n; ++b) {
      double c = 0.0;
      for (std::size_t k = 0; k < S; ++k)
        for (auto [j, w] : pools[b][k]) c += share[b][k] * w * impact[base + j];
      competition[base + b] = c;
      g0[b] = -vulnerability[b] * impact[base + b] + config.competition_strength * c + config.label_noise * normal(rng);
    }
    std::vector<double> g = g0, next(n);
    for (int it = 0; it < 30; ++it) {
      for (std::size_t b = 0; b < n; ++b) {
        double up = 0.0, down = 0.0;
        for (std::size_t j : neighbours[b]) {
          up += std::max(g[j], 0.0);
          down += std::min(g[j], 0.0);
        }
        const double k = static_cast<double>(std::max<std::size_t>(neighbours[b].size(), 1));
        next[b] = g0[b] + config.a_plus * up / k + config.a_minus * down / k;
      }
      g.swap(next);
    }
    std::copy(g.begin(), g.end(), driver.begin() + static_cast<std::ptrdiff_t>(base));
  }

  // Quantile thresholds reproduce the target class mix.
  Truth& truth = sc.truth;
  truth.alpha = config.alpha;
  truth.a_plus = config.a_plus;
  truth.a_minus = config.a_minus;
  std::vector<ChangeClass> cls(N, ChangeClass::NoChange);
  const auto [lo, hi] = std::minmax_element(driver.begin(), driver.end());
  const bool flat = *hi - *lo <= 1e-12 * (1.0 + std::max(std::abs(*lo), std::abs(*hi)));
  if (!flat) {
    std::vector<double> sorted = driver;
    std::sort(sorted.begin(), sorted.end());
    const auto n_inc = static_cast<std::size_t>(std::round(config.class_proportions[0] * static_cast<double>(N)));
    const auto n_dec = static_cast<std::size_t>(std::round(config.class_proportions[2] * static_cast<double>(N)));
    truth.decrease_threshold = n_dec > 0 ? sorted[n_dec - 1] : -std::numeric_limits<double>::infinity();
    truth.increase_threshold = n_inc > 0 ? sorted[N - n_inc] : std::numeric_limits<double>::infinity();
    std::array<std::size_t, 3> counts{};
    for (std::size_t i = 0; i < N; ++i) {
      if (driver[i] <= truth.decrease_threshold)
        cls[i] = ChangeClass::Decrease;
      else if (driver[i] >= truth.increase_threshold)
        cls[i] = ChangeClass::Increase;
      ++counts[static_cast<int>(cls[i])];
    }
    for (int c = 0; c < 3; ++c)
      if (std::abs(static_cast<double>(counts[c]) / static_cast<double>(N) - config.class_proportions[c]) > 0.03)
        throw DataError("synth: class proportions are infeasible under the generative rule (tied change scores); "
                        "raise label_noise or widen the disaster footprints");
  }

  // Shares: magnitude follows the driver, with a margin well above epsilon.
  const double mid = 0.5 * (truth.decrease_threshold + truth.increase_threshold);
  double spread = 0.0;
  for (double g : driver) spread = std::max(spread, std::abs(g - (flat ? g : mid)));
  const double scale = spread > 0.0 ? 0.25 / spread : 0.0;
  for (std::size_t p = 0; p < config.n_periods; ++p)
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t i = p * n + b;
      data::BlockRecord rec;
      rec.block_id = ds.block_ids[b];
      rec.centroid = ds.centroids[b];
      rec.z = z[b];
      rec.period_id = static_cast<int>(p);
      rec.y_start = 0.28 + 0.42 * unit(rng);
      double delta = 0.0;
      if (cls[i] == ChangeClass::Increase) delta = std::max(0.002, scale * (driver[i] - mid));
      if (cls[i] == ChangeClass::Decrease) delta = std::min(-0.002, scale * (driver[i] - mid));
      rec.y_end = rec.y_start + delta;
      if (data::derive_label(rec.y_start, rec.y_end, ds.label_config) != cls[i])
        throw DataError("synth: share margin lost for block " + rec.block_id);
      ds.records.push_back(std::move(rec));
      truth.nodes.push_back({ds.block_ids[b], static_cast<int>(p), impact[i], competition[i], driver[i], cls[i]});
    }

  for (std::size_t p = 0; p < config.n_periods; ++p)
    ds.periods.push_back({static_cast<int>(p), static_cast<int>(p) * config.period_stride_weeks});
  ds.finalize();
  return sc;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_scenario(const Scenario& scenario, const std::filesystem::path& dir) {
  using csv::format_double;
  std::filesystem::create_directories(dir);
  const auto& ds = scenario.dataset;
  {
    auto out = open_csv(dir / "blocks.csv");
    out << "block_id,cx,cy";
    for (std::size_t k = 0; k < ds.attribute_dim(); ++k) out << ",z_" << k;
    out << ",period_id,y_start,y_end\n";
    for (const auto& r : ds.records) {
      out << r.block_id << ',' << format_double(r.centroid.x) << ',' << format_double(r.centroid.y);
      for (double v : r.z) out << ',' << format_double(v);
      out << ',' << r.period_id << ',' << format_double(r.y_start) << ',' << format_double(r.y_end) << '\n';
    }
  }
  {
    auto out = open_csv(dir / "pois.csv");
    out << "poi_id,block_id,naics3";
    for (int t = 0; t < ds.total_weeks; ++t) out << ",w" << t;
    out << '\n';
    for (const auto& p : ds.pois) {
      out << p.poi_id << ',' << p.block_id << ',' << p.sector;
      for (auto v : p.visits) out << ',' << v;
      out << '\n';
    }
  }
  {
    auto out = open_csv(dir / "weather.csv");
    out << "block_id,day_index,precip,wind,pressure\n";
    for (std::size_t b = 0; b < ds.n_blocks(); ++b)
      for (std::size_t d = 0; d < ds.weather[b].size(); ++d) {
        const auto& w = ds.weather[b][d];
        out << ds.block_ids[b] << ',' << d << ',' << format_double(w.precip) << ',' << format_double(w.wind) << ','
            << format_double(w.pressure) << '\n';
      }
  }
  {
    auto out = open_csv(dir / "disasters.csv");
    out << "event_id,week,block_id,severity\n";
    for (const auto& e : ds.disasters)
      for (const auto& [b, s] : e.severity_by_block)
        out << e.event_id << ',' << e.week << ',' << b << ',' << format_double(s) << '\n';
  }
  auto out = open_csv(dir / "truth.json");
  nlohmann::json j = scenario.truth;
  out << j.dump(1) << '\n';
}

}  // namespace sta4clc::synth
