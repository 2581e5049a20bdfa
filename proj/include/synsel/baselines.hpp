#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "synsel/errors.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/numkit/rng.hpp"

namespace synsel::baselines {

using numkit::Matrix;
using numkit::RngStream;

// Selected candidate indices per class.
struct SelectionMask {
  std::vector<std::vector<std::size_t>> per_class;
  std::string method;
  double ratio = 0.0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& c : per_class) n += c.size();
    return n;
  }

  void validate(const CandidatePool& pool) const {
    if (per_class.size() != pool.class_count()) throw ValidationError("mask class count != pool class count");
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      std::set<std::size_t> seen;
      for (auto i : per_class[c]) {
        if (i >= pool.class_size(c)) {
          throw ValidationError("mask index " + std::to_string(i) + " out of range for class " + std::to_string(c));
        }
        if (!seen.insert(i).second) {
          throw ValidationError("duplicate mask index " + std::to_string(i) + " in class " + std::to_string(c));
        }
      }
    }
  }

  std::size_t corrupted_count(const CandidatePool& pool) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c)
      for (auto i : per_class[c]) n += pool.is_corrupted(c, i);
    return n;
  }
};

inline nlohmann::ordered_json to_json(const SelectionMask& m) {
  nlohmann::ordered_json j;
  j["method"] = m.method;
  j["ratio"] = m.ratio;
  j["per_class"] = m.per_class;
  return j;
}

inline SelectionMask mask_from_json(const nlohmann::json& j) {
  SelectionMask m;
  m.method = j.at("method").get<std::string>();
  m.ratio = j.at("ratio").get<double>();
  m.per_class = j.at("per_class").get<std::vector<std::vector<std::size_t>>>();
  return m;
}

// Masked candidates as a labeled feature set (label = pool class).
inline FeatureSet selected_features(const CandidatePool& pool, const SelectionMask& mask) {
  FeatureSet fs;
  fs.class_count = pool.class_count();
  fs.features = Matrix(mask.total(), pool.dim());
  std::size_t r = 0;
  for (std::size_t c = 0; c < mask.per_class.size(); ++c) {
    for (auto i : mask.per_class[c]) {
      auto src = pool.per_class[c].row(i);
      std::copy(src.begin(), src.end(), fs.features.row(r++).begin());
      fs.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return fs;
}

// ceil(ratio * original class size), capped at the pool size of that class.
inline std::vector<std::size_t> requested_counts(const CandidatePool& pool,
                                                 const std::vector<std::size_t>& train_counts, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("augmentation ratio must lie in (0, 1], got " + std::to_string(ratio));
  if (train_counts.size() != pool.class_count()) throw ValidationError("train class counts do not match pool classes");
  std::vector<std::size_t> out(train_counts.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    const auto want = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(train_counts[c]) - 1e-12));
    out[c] = std::min(want, pool.class_size(c));
  }
  return out;
}

inline SelectionMask select_random(const CandidatePool& pool, const std::vector<std::size_t>& train_counts,
                                   double ratio, RngStream& rng) {
  const auto want = requested_counts(pool, train_counts, ratio);
  SelectionMask mask{{}, "random", ratio};
  for (std::size_t c = 0; c < pool.class_count(); ++c) {
    std::vector<std::size_t> idx(pool.class_size(c));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first want[c] slots are a uniform sample.
    for (std::size_t i = 0; i < want[c]; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(want[c]);
    std::sort(idx.begin(), idx.end());
    mask.per_class.push_back(std::move(idx));
  }
  return mask;
}

struct PercentileBand {
  double low = 10.0;
  double high = 90.0;
};

enum class FillOrder { NearestFirst, BandCenterFirst };

// Linear-interpolation percentile of sorted values (p in [0, 100]).
inline double percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw ValidationError("percentile of an empty set");
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Drops candidates outside the [p_low, p_high] distance percentiles of their
// class, then fills the request from the surviving band.
inline SelectionMask select_by_centroid_distance(const CandidatePool& pool, const ClassCentroids& centroids,
                                                 const std::vector<std::size_t>& requested, PercentileBand band,
                                                 FillOrder fill = FillOrder::NearestFirst) {
  if (!(band.low >= 0.0 && band.low < band.high && band.high <= 100.0)) {
    throw ConfigError("percentile band must satisfy 0 <= low < high <= 100");
  }
  if (requested.size() != pool.class_count()) throw ValidationError("request counts do not match pool classes");
  SelectionMask mask{{}, "centroid-distance", 0.0};
  for (std::size_t c = 0; c < pool.class_count(); ++c) {
    if (requested[c] == 0) {
      mask.per_class.emplace_back();
      continue;
    }
    const auto dist = centroid_distances(pool, centroids, c);
    std::vector<double> sorted = dist;
    std::sort(sorted.begin(), sorted.end());
    const double lo = percentile(sorted, band.low);
    const double hi = percentile(sorted, band.high);
    const double mid = 0.5 * (lo + hi);
    std::vector<std::size_t> keep;
    for (auto i : sorted_by_distance(dist))
      if (dist[i] >= lo && dist[i] <= hi) keep.push_back(i);
    if (keep.empty()) {
      throw ValidationError("percentile band (" + std::to_string(band.low) + ", " + std::to_string(band.high) +
                            ") leaves no candidates in class " + std::to_string(c) + "; widen the band");
    }
    if (fill == FillOrder::BandCenterFirst) {
      std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
        const double da = std::abs(dist[a] - mid), db = std::abs(dist[b] - mid);
        if (da != db) return da < db;
        return a < b;
      });
    }
    keep.resize(std::min(keep.size(), requested[c]));
    mask.per_class.push_back(std::move(keep));
  }
  return mask;
}

inline SelectionMask select_by_centroid_distance(const CandidatePool& pool, const ClassCentroids& centroids,
                                                 const std::vector<std::size_t>& train_counts, double ratio,
                                                 PercentileBand band, FillOrder fill = FillOrder::NearestFirst) {
  auto mask = select_by_centroid_distance(pool, centroids, requested_counts(pool, train_counts, ratio), band, fill);
  mask.ratio = ratio;
  return mask;
}

// Benchmark upper bound: clean candidates only, nearest to the centroid first.
inline SelectionMask select_oracle(const CandidatePool& pool, const ClassCentroids& centroids,
                                   const std::vector<std::size_t>& train_counts, double ratio) {
  if (!pool.truth) throw ValidationError("oracle selection requires truth flags on the candidate pool");
  const auto want = requested_counts(pool, train_counts, ratio);
  SelectionMask mask{{}, "oracle", ratio};
  for (std::size_t c = 0; c < pool.class_count(); ++c) {
    std::vector<std::size_t> keep;
    for (auto i : sorted_by_distance(centroid_distances(pool, centroids, c))) {
      if (keep.size() == want[c]) break;
      if (!pool.is_corrupted(c, i)) keep.push_back(i);
    }
    mask.per_class.push_back(std::move(keep));
  }
  return mask;
}

}  // namespace synsel::baselines
