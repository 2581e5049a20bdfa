#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "synsel/errors.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/numkit/rng.hpp"

namespace synsel::harness {

using numkit::Matrix;
using numkit::RngStream;

enum class CorruptionModel { LabelFlip, MeanShift, NoiseInflation };

inline const char* to_string(CorruptionModel m) {
  switch (m) {
    case CorruptionModel::LabelFlip: return "label-flip";
    case CorruptionModel::MeanShift: return "mean-shift";
    case CorruptionModel::NoiseInflation: return "noise-inflation";
  }
  return "unknown";
}

inline CorruptionModel corruption_from_string(const std::string& s) {
  if (s == "label-flip") return CorruptionModel::LabelFlip;
  if (s == "mean-shift") return CorruptionModel::MeanShift;
  if (s == "noise-inflation") return CorruptionModel::NoiseInflation;
  throw ConfigError("unknown corruption model '" + s + "' (label-flip | mean-shift | noise-inflation)");
}

struct TaskConfig {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t train_per_class = 60;
  std::size_t val_per_class = 20;
  std::size_t test_per_class = 100;
  double separation = 2.5;  // pairwise distance between class means; 2.5 puts the baseline near 0.75
  double within_std = 1.0;
  std::size_t pool_per_class = 256;
  double corruption_rate = 0.5;
  CorruptionModel corruption = CorruptionModel::LabelFlip;
  double mean_shift = 2.0;       // distance of mean-shift corruption from the class mean
  double noise_inflation = 3.0;  // std multiplier of noise-inflation corruption
  std::uint64_t master_seed = 2024;

  void validate() const {
    if (classes < 2) throw ConfigError("task needs at least two classes");
    if (dim == 0 || train_per_class == 0 || val_per_class == 0 || test_per_class == 0 || pool_per_class == 0) {
      throw ConfigError("task counts and dimension must be positive");
    }
    if (classes > dim + 1) {
      throw ConfigError("cannot place " + std::to_string(classes) + " equidistant means in " + std::to_string(dim) +
                        " dimensions (need classes <= dim + 1)");
    }
    if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) throw ConfigError("corruption_rate must lie in [0, 1]");
    if (separation < 0.0 || !(within_std > 0.0)) throw ConfigError("separation must be >= 0 and within_std > 0");
    if (mean_shift < 0.0 || !(noise_inflation > 0.0)) throw ConfigError("corruption magnitudes out of range");
  }
};

struct Task {
  FeatureSet train, val, test;
  CandidatePool pool;
  Matrix means;  // k x d, for reference

  // FNV-1a over every feature, label and truth flag.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix_bytes = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (const FeatureSet* fs : {&train, &val, &test}) {
      mix_bytes(fs->features.data(), fs->features.size() * sizeof(double));
      mix_bytes(fs->labels.data(), fs->labels.size() * sizeof(std::uint32_t));
    }
    for (const auto& m : pool.per_class) mix_bytes(m.data(), m.size() * sizeof(double));
    if (pool.truth)
      for (const auto& cls : *pool.truth) mix_bytes(cls.data(), cls.size());
    return h;
  }
};

// Vertices of a regular simplex with pairwise distance `separation`, centred
// at the origin and embedded in the first k-1 coordinates via the Helmert basis.
inline Matrix simplex_means(std::size_t k, std::size_t d, double separation) {
  if (k > d + 1) throw ConfigError("simplex layout needs classes <= dim + 1");
  Matrix means(k, d);
  const double s = separation / std::sqrt(2.0);
  for (std::size_t j = 1; j < k; ++j) {
    const double norm = std::sqrt(static_cast<double>(j * (j + 1)));
    for (std::size_t i = 0; i < k; ++i) {
      double h = 0.0;
      if (i < j) h = 1.0 / norm;
      else if (i == j) h = -static_cast<double>(j) / norm;
      means(i, j - 1) = s * h;
    }
  }
  return means;
}

namespace detail {

inline void gaussian_row(std::span<double> out, std::span<const double> mean, double stddev, RngStream& rng) {
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = mean[j] + stddev * rng.normal();
}

inline FeatureSet gaussian_split(const Matrix& means, std::size_t per_class, double stddev, SplitRole role,
                                 RngStream& rng) {
  const std::size_t k = means.rows(), d = means.cols();
  FeatureSet fs;
  fs.class_count = k;
  fs.role = role;
  fs.features = Matrix(k * per_class, d);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      gaussian_row(fs.features.row(c * per_class + i), means.row(c), stddev, rng);
      fs.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return fs;
}

}  // namespace detail

// Real splits are class Gaussians N(mu_c, sigma^2 I). Candidates of class c
// are clean draws from the same Gaussian, except for round(rate * m) of them
// (positions chosen uniformly) which follow the corruption model.
inline Task generate_synthetic_task(const TaskConfig& cfg, RngStream& rng) {
  cfg.validate();
  Task task;
  task.means = simplex_means(cfg.classes, cfg.dim, cfg.separation);
  task.train = detail::gaussian_split(task.means, cfg.train_per_class, cfg.within_std, SplitRole::Train, rng);
  task.val = detail::gaussian_split(task.means, cfg.val_per_class, cfg.within_std, SplitRole::Validation, rng);
  task.test = detail::gaussian_split(task.means, cfg.test_per_class, cfg.within_std, SplitRole::Test, rng);

  const std::size_t k = cfg.classes, d = cfg.dim, m = cfg.pool_per_class;
  // One fixed random direction per class for mean-shift corruption.
  Matrix shift_dirs(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    for (double& v : shift_dirs.row(c)) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : shift_dirs.row(c)) v /= std::sqrt(norm);
  }

  task.pool.provenance = Provenance::SyntheticBenchmark;
  task.pool.truth.emplace();
  const auto bad_count = static_cast<std::size_t>(std::llround(cfg.corruption_rate * static_cast<double>(m)));
  std::vector<double> mean(d);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<Quality> flags(m, Quality::Clean);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < bad_count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
      std::swap(idx[i], idx[j]);
      flags[idx[i]] = Quality::Corrupted;
    }
    Matrix feats(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      auto mu = task.means.row(c);
      double stddev = cfg.within_std;
      std::copy(mu.begin(), mu.end(), mean.begin());
      if (flags[i] == Quality::Corrupted) {
        switch (cfg.corruption) {
          case CorruptionModel::LabelFlip: {
            const auto other = (c + 1 + rng.below(k - 1)) % k;
            auto mo = task.means.row(other);
            std::copy(mo.begin(), mo.end(), mean.begin());
            break;
          }
          case CorruptionModel::MeanShift:
            for (std::size_t j = 0; j < d; ++j) mean[j] += cfg.mean_shift * shift_dirs(c, j);
            break;
          case CorruptionModel::NoiseInflation:
            stddev *= cfg.noise_inflation;
            break;
        }
      }
      detail::gaussian_row(feats.row(i), mean, stddev, rng);
    }
    task.pool.per_class.push_back(std::move(feats));
    task.pool.truth->push_back(std::move(flags));
  }
  task.pool.validate(d);
  return task;
}

}  // namespace synsel::harness
