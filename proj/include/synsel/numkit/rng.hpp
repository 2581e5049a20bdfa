#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace synsel::numkit {

enum class StreamId : std::uint64_t {
  DataGen = 1,
  ControllerInit = 2,
  ActionSample = 3,
  Classifier = 4,
};

constexpr std::string_view to_string(StreamId id) {
  switch (id) {
    case StreamId::DataGen: return "data-gen";
    case StreamId::ControllerInit: return "controller-init";
    case StreamId::ActionSample: return "action-sample";
    case StreamId::Classifier: return "classifier";
  }
  return "unknown";
}

// Deterministic random stream keyed by (seed, stream-id, substream). Streams
// with the same key replay bit-identically; distinct keys are decorrelated by
// a splitmix64 pass over the key before seeding the engine.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, StreamId id, std::uint64_t substream = 0)
      : seed_(seed), id_(id), substream_(substream), engine_(derive(seed, id, substream)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  StreamId id() const noexcept { return id_; }
  std::uint64_t substream() const noexcept { return substream_; }

  // Child stream sharing seed and id, for per-run or per-arm separation.
  RngStream fork(std::uint64_t substream) const { return RngStream(seed_, id_, substream); }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  static std::uint64_t derive(std::uint64_t seed, StreamId id, std::uint64_t sub) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(id));
    return splitmix64(h ^ sub);
  }

  std::uint64_t seed_;
  StreamId id_;
  std::uint64_t substream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace synsel::numkit
