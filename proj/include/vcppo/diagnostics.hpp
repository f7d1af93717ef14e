#pragma once

// Measurement layer: explained variance, advantage-vs-position statistics, length statistics and
// the metric sink. Variances use the population (divide-by-N) convention throughout.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vcppo/errors.hpp"

namespace vcppo {

inline constexpr double kExplainedVarianceFloor = -10.0;

inline double population_variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return var / static_cast<double>(xs.size());
}

/// 1 - Var(targets - predictions) / Var(targets), floored at -10. Returns 1 when both variances
/// are below 1e-12.
inline double explained_variance(std::span<const double> targets, std::span<const double> predictions) {
  if (targets.size() != predictions.size()) throw UsageError("explained_variance: length mismatch");
  if (targets.size() < 2) throw UsageError("explained_variance: need at least 2 samples");
  std::vector<double> resid(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) resid[i] = targets[i] - predictions[i];
  const double vt = population_variance(targets);
  const double vr = population_variance(resid);
  if (vt < 1e-12) return vr < 1e-12 ? 1.0 : kExplainedVarianceFloor;
  return std::max(kExplainedVarianceFloor, 1.0 - vr / vt);
}

struct PositionBucket {
  double mean_advantage = 0.0;
  std::size_t count = 0;
};

struct PositionAdvantageStats {
  double pearson_r = 0.0;
  bool degenerate = false;
  std::map<int, PositionBucket> per_position;
};

namespace detail {

inline double pearson(std::vector<std::pair<double, double>> xy, bool& degenerate) {
  // Sorting first makes the floating-point reduction order independent of the input order.
  std::sort(xy.begin(), xy.end());
  const double n = static_cast<double>(xy.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& [x, y] : xy) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx / n < 1e-12 || syy / n < 1e-12) {
    degenerate = true;
    return 0.0;
  }
  degenerate = false;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

/// Pearson correlation between token position and advantage, plus mean advantage per position.
/// Fewer than two distinct positions, or constant advantages, report r = 0 with `degenerate` set.
inline PositionAdvantageStats position_advantage_stats(std::span<const std::pair<int, double>> batch) {
  PositionAdvantageStats out;
  if (batch.empty()) {
    out.degenerate = true;
    return out;
  }
  std::vector<std::pair<double, double>> xy;
  xy.reserve(batch.size());
  std::map<int, std::vector<double>> buckets;
  for (const auto& [pos, adv] : batch) {
    xy.emplace_back(static_cast<double>(pos), adv);
    buckets[pos].push_back(adv);
  }
  out.pearson_r = detail::pearson(std::move(xy), out.degenerate);
  for (auto& [pos, advs] : buckets) {
    std::sort(advs.begin(), advs.end());
    double s = 0.0;
    for (double a : advs) s += a;
    out.per_position[pos] = PositionBucket{s / static_cast<double>(advs.size()), advs.size()};
  }
  return out;
}

/// Same correlation with position normalized by trajectory length (position / length).
inline double position_frac_correlation(std::span<const std::pair<double, double>> frac_adv, bool& degenerate) {
  if (frac_adv.empty()) {
    degenerate = true;
    return 0.0;
  }
  return detail::pearson(std::vector<std::pair<double, double>>(frac_adv.begin(), frac_adv.end()), degenerate);
}

struct LengthStats {
  double mean = 0.0;
  double p10 = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
};

/// Nearest-rank percentile: the value at rank ceil(p/100 * N) of the sorted sample.
inline double nearest_rank(std::span<const double> sorted, double p) {
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline LengthStats length_stats(std::span<const double> lengths) {
  if (lengths.empty()) throw UsageError("length_stats: empty batch");
  std::vector<double> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  LengthStats s;
  for (double l : sorted) s.mean += l;
  s.mean /= static_cast<double>(sorted.size());
  s.p10 = nearest_rank(sorted, 10);
  s.p50 = nearest_rank(sorted, 50);
  s.p90 = nearest_rank(sorted, 90);
  return s;
}

struct MetricRecord {
  std::string run_id;
  long long step = 0;
  std::string name;
  double value = 0.0;
};

/// Shortest round-trip decimal for a double (%.17g), so CSVs reproduce values bit-exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Append-only metric store. Appends are serialized; (run_id, step, name) must be unique and the
/// value finite.
class MetricSink {
 public:
  MetricSink() = default;
  MetricSink(const MetricSink& other) {
    std::lock_guard lock(other.mu_);
    records_ = other.records_;
    keys_ = other.keys_;
  }
  MetricSink(MetricSink&& other) noexcept : MetricSink(static_cast<const MetricSink&>(other)) {}
  MetricSink& operator=(const MetricSink& other) {
    if (this != &other) {
      std::scoped_lock lock(mu_, other.mu_);
      records_ = other.records_;
      keys_ = other.keys_;
    }
    return *this;
  }

  void append(const std::string& run_id, long long step, const std::string& name, double value) {
    if (!std::isfinite(value))
      throw UsageError("metric '" + name + "' at step " + std::to_string(step) + " is not finite");
    std::lock_guard lock(mu_);
    auto key = std::make_tuple(run_id, step, name);
    if (!keys_.insert(key).second)
      throw UsageError("duplicate metric (" + run_id + ", " + std::to_string(step) + ", " + name + ")");
    records_.push_back(MetricRecord{run_id, step, name, value});
  }

  std::vector<MetricRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  /// Values of one metric in append order.
  std::vector<std::pair<long long, double>> series(const std::string& run_id, const std::string& name) const {
    std::lock_guard lock(mu_);
    std::vector<std::pair<long long, double>> out;
    for (const auto& r : records_)
      if (r.run_id == run_id && r.name == name) out.emplace_back(r.step, r.value);
    return out;
  }

  std::optional<double> find(const std::string& run_id, long long step, const std::string& name) const {
    std::lock_guard lock(mu_);
    for (const auto& r : records_)
      if (r.run_id == run_id && r.step == step && r.name == name) return r.value;
    return std::nullopt;
  }

  std::string to_csv() const {
    std::lock_guard lock(mu_);
    std::ostringstream os;
    os << "run_id,step,name,value\n";
    for (const auto& r : records_) os << r.run_id << ',' << r.step << ',' << r.name << ',' << format_double(r.value) << '\n';
    return os.str();
  }

  std::string to_jsonl() const {
    std::lock_guard lock(mu_);
    std::ostringstream os;
    for (const auto& r : records_) {
      nlohmann::ordered_json j;
      j["run_id"] = r.run_id;
      j["step"] = r.step;
      j["name"] = r.name;
      j["value"] = r.value;
      os << j.dump() << '\n';
    }
    return os.str();
  }

 private:
  mutable std::mutex mu_;
  std::vector<MetricRecord> records_;
  std::set<std::tuple<std::string, long long, std::string>> keys_;
};

}  // namespace vcppo
