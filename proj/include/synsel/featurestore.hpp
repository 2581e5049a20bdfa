#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "synsel/errors.hpp"
#include "synsel/numkit/matrix.hpp"

namespace synsel {

using numkit::Matrix;

enum class SplitRole { Train, Validation, Test };

inline const char* to_string(SplitRole r) {
  switch (r) {
    case SplitRole::Train: return "train";
    case SplitRole::Validation: return "validation";
    case SplitRole::Test: return "test";
  }
  return "unknown";
}

// Labeled feature vectors for one split.
struct FeatureSet {
  Matrix features;                    // n x d
  std::vector<std::uint32_t> labels;  // length n
  std::size_t class_count = 0;
  SplitRole role = SplitRole::Train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (auto l : labels) ++counts[l];
    return counts;
  }

  void validate() const {
    if (labels.empty() || features.rows() == 0) throw ValidationError("feature set is empty (n = 0)");
    if (features.cols() == 0) throw ValidationError("feature set has zero dimensions");
    if (features.rows() != labels.size()) {
      throw ValidationError("feature rows (" + std::to_string(features.rows()) +
                            ") != label count (" + std::to_string(labels.size()) + ")");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_count) {
        throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " is not below class count " +
                              std::to_string(class_count));
      }
    }
    if (!numkit::all_finite(features)) throw ValidationError("feature set contains non-finite values");
  }
};

enum class Quality : std::uint8_t { Clean = 0, Corrupted = 1 };
enum class Provenance { Ingested, SyntheticBenchmark };

// Synthetic candidates grouped by class. Truth flags exist only for the
// synthetic benchmark, where the generator knows which samples it corrupted.
struct CandidatePool {
  std::vector<Matrix> per_class;  // class id -> m_c x d
  std::optional<std::vector<std::vector<Quality>>> truth;
  Provenance provenance = Provenance::Ingested;

  std::size_t class_count() const noexcept { return per_class.size(); }
  std::size_t class_size(std::size_t c) const { return per_class.at(c).rows(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& m : per_class) n += m.rows();
    return n;
  }
  std::size_t dim() const {
    for (const auto& m : per_class)
      if (m.rows() > 0) return m.cols();
    return 0;
  }
  bool is_corrupted(std::size_t c, std::size_t i) const {
    return truth && (*truth)[c][i] == Quality::Corrupted;
  }
  double corrupted_fraction() const {
    if (!truth) throw ValidationError("candidate pool carries no truth flags");
    std::size_t bad = 0, all = 0;
    for (const auto& cls : *truth) {
      for (auto q : cls) bad += q == Quality::Corrupted;
      all += cls.size();
    }
    return all == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(all);
  }

  void validate(std::size_t expected_dim) const {
    if (per_class.empty()) throw ValidationError("candidate pool has no classes");
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      if (per_class[c].rows() > 0 && per_class[c].cols() != expected_dim) {
        throw ValidationError("candidate pool class " + std::to_string(c) + " has dimension " +
                              std::to_string(per_class[c].cols()) + ", expected " +
                              std::to_string(expected_dim));
      }
    }
    const bool synthetic = provenance == Provenance::SyntheticBenchmark;
    if (truth.has_value() != synthetic) {
      throw ValidationError("truth flags must be present iff the pool is a synthetic benchmark");
    }
    if (truth) {
      if (truth->size() != per_class.size()) throw ValidationError("truth flag class count mismatch");
      for (std::size_t c = 0; c < per_class.size(); ++c)
        if ((*truth)[c].size() != per_class[c].rows())
          throw ValidationError("truth flag count mismatch in class " + std::to_string(c));
    }
  }
};

struct ClassCentroids {
  Matrix means;  // k x d
  std::vector<std::size_t> counts;
};

struct BatchEntry {
  std::size_t class_id = 0;
  std::size_t candidate = 0;
  double distance = 0.0;
  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct BatchPlan {
  std::vector<std::vector<BatchEntry>> batches;
  std::size_t batch_count() const noexcept { return batches.size(); }
};

enum class SortOrder { NearToFar, FarToNear };

inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_distance: lengths " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw NumericError("cosine_distance of a zero-norm vector");
  const double sim = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(1.0 - sim, 0.0, 2.0);
}

inline ClassCentroids compute_centroids(const FeatureSet& train) {
  const std::size_t k = train.class_count, d = train.dim();
  ClassCentroids out{Matrix(k, d), std::vector<std::size_t>(k, 0)};
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = train.labels[i];
    ++out.counts[c];
    auto dst = out.means.row(c);
    auto src = train.features.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  std::string empty;
  for (std::size_t c = 0; c < k; ++c) {
    if (out.counts[c] == 0) {
      empty += (empty.empty() ? "" : ", ") + std::to_string(c);
      continue;
    }
    for (double& v : out.means.row(c)) v /= static_cast<double>(out.counts[c]);
  }
  if (!empty.empty()) throw ValidationError("no training samples for class(es): " + empty);
  return out;
}

// Distance of every candidate of class c to centroid c.
inline std::vector<double> centroid_distances(const CandidatePool& pool,
                                              const ClassCentroids& centroids, std::size_t c) {
  const Matrix& m = pool.per_class.at(c);
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = cosine_distance(m.row(i), centroids.means.row(c));
  return out;
}

// Candidate indices of one class ordered by (distance, index).
inline std::vector<std::size_t> sorted_by_distance(const std::vector<double>& dist,
                                                   SortOrder order = SortOrder::NearToFar) {
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return order == SortOrder::NearToFar ? dist[a] < dist[b] : dist[a] > dist[b];
    return a < b;
  });
  return idx;
}

// Sorts each class by centroid distance and cuts it into batch_count
// contiguous chunks of equal size; the remainder goes to the last chunk.
// Inside a batch, classes are interleaved round-robin in class-id order.
inline BatchPlan build_batches(const CandidatePool& pool, const ClassCentroids& centroids,
                               std::size_t batch_count, SortOrder order = SortOrder::NearToFar) {
  if (batch_count == 0) throw ValidationError("batch count must be at least 1");
  const std::size_t k = pool.class_count();
  if (centroids.means.rows() != k) {
    throw DimensionError("centroid count " + std::to_string(centroids.means.rows()) +
                         " != pool class count " + std::to_string(k));
  }
  std::vector<std::vector<std::vector<BatchEntry>>> chunks(k);  // class -> batch -> entries
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t m = pool.class_size(c);
    if (m < batch_count) {
      throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(m) +
                            " candidates, fewer than batch count " + std::to_string(batch_count));
    }
    const auto dist = centroid_distances(pool, centroids, c);
    const auto order_idx = sorted_by_distance(dist, order);
    const std::size_t per = m / batch_count;
    chunks[c].resize(batch_count);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t b = std::min(r / per, batch_count - 1);
      chunks[c][b].push_back(BatchEntry{c, order_idx[r], dist[order_idx[r]]});
    }
  }
  BatchPlan plan;
  plan.batches.resize(batch_count);
  for (std::size_t b = 0; b < batch_count; ++b) {
    std::size_t longest = 0;
    for (std::size_t c = 0; c < k; ++c) longest = std::max(longest, chunks[c][b].size());
    for (std::size_t r = 0; r < longest; ++r)
      for (std::size_t c = 0; c < k; ++c)
        if (r < chunks[c][b].size()) plan.batches[b].push_back(chunks[c][b][r]);
  }
  return plan;
}

// Stacks the candidate feature rows of one batch into a sequence matrix.
inline Matrix batch_features(const CandidatePool& pool, const std::vector<BatchEntry>& batch) {
  const std::size_t d = pool.dim();
  Matrix seq(batch.size(), d);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    auto src = pool.per_class[batch[r].class_id].row(batch[r].candidate);
    std::copy(src.begin(), src.end(), seq.row(r).begin());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Feature files.
//
// Binary layout (little-endian): "FSEL", u32 version = 1, u32 n, u32 d,
// u32 k, n x u32 labels, n*d x f32 features (row-major).
// CSV layout: header "label,f0,...,f{d-1}", one sample per line.
// ---------------------------------------------------------------------------

namespace io_detail {

inline constexpr char kMagic[4] = {'F', 'S', 'E', 'L'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw IoError("truncated feature file while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline bool has_csv_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".csv";
}

}  // namespace io_detail

inline void save_features_binary(const FeatureSet& fs, const std::filesystem::path& path) {
  fs.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(io_detail::kMagic, 4);
  io_detail::put_le<std::uint32_t>(out, io_detail::kVersion);
  io_detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.size()));
  io_detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.dim()));
  io_detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.class_count));
  for (auto l : fs.labels) io_detail::put_le<std::uint32_t>(out, l);
  for (double v : fs.features.values()) io_detail::put_le<float>(out, static_cast<float>(v));
  if (!out) throw IoError("write failed for " + path.string());
}

inline FeatureSet load_features_binary(const std::filesystem::path& path,
                                       SplitRole role = SplitRole::Train) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw IoError("truncated feature file: " + path.string());
  if (std::memcmp(magic, io_detail::kMagic, 4) != 0) {
    throw FormatError("bad magic in " + path.string() + " (expected FSEL)");
  }
  const auto version = io_detail::get_le<std::uint32_t>(in, "version");
  if (version != io_detail::kVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version));
  }
  const auto n = io_detail::get_le<std::uint32_t>(in, "n");
  const auto d = io_detail::get_le<std::uint32_t>(in, "d");
  const auto k = io_detail::get_le<std::uint32_t>(in, "k");
  if (n == 0) throw ValidationError("feature file " + path.string() + " holds no samples (n = 0)");
  if (d == 0) throw ValidationError("feature file " + path.string() + " has d = 0");
  FeatureSet fs;
  fs.class_count = k;
  fs.role = role;
  fs.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) fs.labels[i] = io_detail::get_le<std::uint32_t>(in, "labels");
  fs.features = Matrix(n, d);
  for (double& v : fs.features.values()) v = io_detail::get_le<float>(in, "features");
  fs.validate();
  return fs;
}

inline void save_features_csv(const FeatureSet& fs, const std::filesystem::path& path) {
  fs.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "label";
  for (std::size_t j = 0; j < fs.dim(); ++j) out << ",f" << j;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    out << fs.labels[i];
    for (double v : fs.features.row(i)) out << ',' << v;
    out << '\n';
  }
}

// Class count defaults to max(label) + 1 when not given.
inline FeatureSet load_features_csv(const std::filesystem::path& path,
                                    SplitRole role = SplitRole::Train,
                                    std::optional<std::size_t> class_count = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("feature CSV " + path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "label") {
    throw FormatError("feature CSV header must be label,f0,...; got '" + line + "'");
  }
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 1)) {
      throw FormatError("feature CSV header column " + std::to_string(j) + " should be f" +
                        std::to_string(j - 1));
    }
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 1) {
      throw FormatError("feature CSV row " + std::to_string(row) + " has " +
                        std::to_string(cells.size() - 1) + " feature columns, header declares " +
                        std::to_string(d));
    }
    try {
      std::size_t used = 0;
      const long long lbl = std::stoll(cells[0], &used);
      if (used != cells[0].size() || lbl < 0) throw std::invalid_argument("label");
      labels.push_back(static_cast<std::uint32_t>(lbl));
      for (std::size_t j = 1; j <= d; ++j) {
        values.push_back(std::stod(cells[j], &used));
        if (used != cells[j].size()) throw std::invalid_argument("value");
      }
    } catch (const std::logic_error&) {
      throw FormatError("feature CSV row " + std::to_string(row) + " has an unparsable value");
    }
  }
  if (labels.empty()) throw ValidationError("feature CSV " + path.string() + " holds no samples (n = 0)");
  FeatureSet fs;
  fs.role = role;
  fs.class_count = class_count.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  fs.features = Matrix(labels.size(), d, std::move(values));
  fs.labels = std::move(labels);
  fs.validate();
  return fs;
}

inline void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
  if (io_detail::has_csv_extension(path)) save_features_csv(fs, path);
  else save_features_binary(fs, path);
}

inline FeatureSet load_features(const std::filesystem::path& path, SplitRole role = SplitRole::Train) {
  if (io_detail::has_csv_extension(path)) return load_features_csv(path, role);
  return load_features_binary(path, role);
}

// A pool round-trips through a feature file whose labels are the class ids,
// plus an optional truth CSV (class,index,flag).
inline FeatureSet pool_as_feature_set(const CandidatePool& pool) {
  FeatureSet fs;
  fs.class_count = pool.class_count();
  fs.features = Matrix(pool.total(), pool.dim());
  std::size_t r = 0;
  for (std::size_t c = 0; c < pool.class_count(); ++c) {
    for (std::size_t i = 0; i < pool.class_size(c); ++i, ++r) {
      auto src = pool.per_class[c].row(i);
      std::copy(src.begin(), src.end(), fs.features.row(r).begin());
      fs.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return fs;
}

inline CandidatePool pool_from_feature_set(const FeatureSet& fs) {
  CandidatePool pool;
  const auto counts = fs.class_counts();
  pool.per_class.reserve(fs.class_count);
  for (std::size_t c = 0; c < fs.class_count; ++c) pool.per_class.emplace_back(counts[c], fs.dim());
  std::vector<std::size_t> fill(fs.class_count, 0);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto c = fs.labels[i];
    auto src = fs.features.row(i);
    std::copy(src.begin(), src.end(), pool.per_class[c].row(fill[c]++).begin());
  }
  return pool;
}

inline void save_truth_csv(const CandidatePool& pool, const std::filesystem::path& path) {
  if (!pool.truth) throw ValidationError("pool carries no truth flags to save");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "class,index,flag\n";
  for (std::size_t c = 0; c < pool.truth->size(); ++c)
    for (std::size_t i = 0; i < (*pool.truth)[c].size(); ++i)
      out << c << ',' << i << ',' << ((*pool.truth)[c][i] == Quality::Clean ? "clean" : "corrupted")
          << '\n';
}

}  // namespace synsel
