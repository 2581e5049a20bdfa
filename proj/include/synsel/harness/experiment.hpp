#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "synsel/baselines.hpp"
#include "synsel/controller.hpp"
#include "synsel/evaluator.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/harness/config.hpp"
#include "synsel/harness/task.hpp"
#include "synsel/numkit/rng.hpp"
#include "synsel/policy.hpp"

namespace synsel::harness {

using baselines::SelectionMask;
using numkit::StreamId;

// Each seed draws its own task from the master seed; every arm of that seed
// sees the same instance.
inline Task task_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  RngStream rng(cfg.task.master_seed, StreamId::DataGen, seed);
  return generate_synthetic_task(cfg.task, rng);
}

// Classifier stream used for every reward and every final evaluation of a
// seed, so differences between selections are not masked by init noise.
inline RngStream classifier_stream(std::uint64_t seed, std::uint64_t sub) {
  return RngStream(seed, StreamId::Classifier, sub);
}

struct RunResult {
  SelectionMask mask;
  std::vector<double> reward_trace;        // last raw reward of each episode
  std::vector<std::size_t> selected_trace;  // selection size at the end of each episode
  std::vector<double> corrupted_trace;      // corrupted share of that selection (truth flags only)
  std::vector<std::string> log_lines;       // JSON lines, one per step and one per update
  policy::Trajectory first_trajectory;
  double first_update_max_ratio_dev = 0.0;
  double keep_rate = 0.0;  // greedy pass: kept / pool size
  controller::ControllerParams params;
};

namespace detail {

inline SelectionMask empty_mask(const CandidatePool& pool, std::string method) {
  SelectionMask m;
  m.per_class.resize(pool.class_count());
  m.method = std::move(method);
  return m;
}

inline void sort_mask(SelectionMask& m) {
  for (auto& c : m.per_class) std::sort(c.begin(), c.end());
}

inline std::string method_name(const ExperimentConfig& cfg) {
  return std::string("rl-") + to_string(cfg.algorithm) + "-" + controller::to_string(cfg.controller.variant);
}

}  // namespace detail

// Scores a selection; defaults to the validation reward of a freshly trained
// classifier. Tests substitute cheap closed-form rewards.
using RewardFn = std::function<double(const SelectionMask&)>;

// One full RL run on a given task. Each episode resets the selection, walks
// the batch plan once, scores the cumulative selection after every batch and
// then updates the controller once. The returned mask comes from a greedy
// pass of the final controller.
inline RunResult run_experiment(const ExperimentConfig& cfg, const Task& task, std::uint64_t seed,
                                RewardFn reward = {}) {
  cfg.validate();
  const auto ccfg = cfg.resolved_controller();
  const auto& pool = task.pool;
  const auto centroids = compute_centroids(task.train);
  const auto plan = build_batches(pool, centroids, cfg.batch_count, cfg.sort_order);

  RngStream init_rng(seed, StreamId::ControllerInit);
  RngStream action_rng(seed, StreamId::ActionSample, 0);
  RngStream shuffle_rng(seed, StreamId::ActionSample, 1);

  RunResult out;
  out.params = controller::init_params(ccfg, init_rng);
  auto& params = out.params;
  policy::Adam adam(cfg.ppo);
  policy::RewardTracker tracker(cfg.ema_alpha);

  // Cached per-batch inputs.
  std::vector<Matrix> seqs;
  std::vector<std::vector<std::uint32_t>> seq_classes;
  for (const auto& batch : plan.batches) {
    seqs.push_back(batch_features(pool, batch));
    std::vector<std::uint32_t> cls;
    for (const auto& e : batch) cls.push_back(static_cast<std::uint32_t>(e.class_id));
    seq_classes.push_back(std::move(cls));
  }

  auto reward_of = [&](const SelectionMask& m) {
    if (reward) return reward(m);
    return evaluator::selection_reward(task.train, baselines::selected_features(pool, m), task.val, cfg.classifier,
                                       classifier_stream(seed, 0));
  };

  const double offset = cfg.relative_reward ? reward_of(detail::empty_mask(pool, "no-augmentation")) : 0.0;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    tracker.reset();
    auto selection = detail::empty_mask(pool, detail::method_name(cfg));
    policy::Trajectory traj;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      const auto fwd = controller::controller_forward(seqs[b], seq_classes[b], params);
      const auto acts = controller::sample_actions(fwd.logits, action_rng, controller::SampleMode::Stochastic);
      policy::TrajectoryStep step;
      step.batch_index = b;
      step.features = seqs[b];
      step.classes = seq_classes[b];
      step.actions = acts.actions;
      step.old_log_probs = acts.log_probs;
      step.value = fwd.value;
      for (std::size_t r = 0; r < plan.batches[b].size(); ++r) {
        const auto& e = plan.batches[b][r];
        step.candidate_ids.push_back(e.candidate);
        if (acts.actions[r] == 1) selection.per_class[e.class_id].push_back(e.candidate);
      }
      const bool score_now = cfg.reward_frequency == RewardFrequency::PerBatch || b + 1 == plan.batches.size();
      if (score_now) {
        step.raw_reward = reward_of(selection) - offset;
        step.smoothed_reward = policy::ema_update(tracker, step.raw_reward);
        step.advantage = policy::advantage(step.smoothed_reward, step.value);
      }
      traj.steps.push_back(std::move(step));
    }
    if (cfg.reward_frequency == RewardFrequency::PerEpisode) {
      // The episode reward is credited to every step.
      const auto& last = traj.steps.back();
      for (auto& s : traj.steps) {
        s.raw_reward = last.raw_reward;
        s.smoothed_reward = last.smoothed_reward;
        s.advantage = policy::advantage(s.smoothed_reward, s.value);
      }
    }
    for (const auto& s : traj.steps) {
      std::size_t kept = 0;
      for (int a : s.actions) kept += a == 1;
      nlohmann::ordered_json line{{"event", "step"},
                                  {"seed", seed},
                                  {"iteration", it},
                                  {"step", s.batch_index},
                                  {"kept", kept},
                                  {"raw_reward", evaluator::round6(s.raw_reward)},
                                  {"smoothed_reward", evaluator::round6(s.smoothed_reward)},
                                  {"value", evaluator::round6(s.value)},
                                  {"advantage", evaluator::round6(s.advantage)}};
      out.log_lines.push_back(line.dump());
    }
    out.reward_trace.push_back(traj.steps.back().raw_reward + offset);
    out.selected_trace.push_back(selection.total());
    if (pool.truth) {
      out.corrupted_trace.push_back(selection.total() ? static_cast<double>(selection.corrupted_count(pool)) /
                                                            static_cast<double>(selection.total())
                                                      : 0.0);
    }

    policy::UpdateStats st;
    if (cfg.algorithm == Algorithm::Ppo) {
      st = policy::ppo_update(params, traj, cfg.ppo, adam, shuffle_rng);
    } else {
      st = policy::reinforce_update(params, traj, cfg.ppo, adam);
    }
    if (it == 0) {
      out.first_update_max_ratio_dev = st.first_minibatch_max_ratio_dev;
      out.first_trajectory = std::move(traj);
    }
    nlohmann::ordered_json line{{"event", "update"},
                                {"seed", seed},
                                {"iteration", it},
                                {"algorithm", to_string(cfg.algorithm)},
                                {"mean_ratio", evaluator::round6(st.mean_ratio)},
                                {"clip_fraction", evaluator::round6(st.clip_fraction)},
                                {"value_loss", evaluator::round6(st.value_loss)},
                                {"entropy", evaluator::round6(st.entropy)},
                                {"optimizer_steps", st.optimizer_steps}};
    out.log_lines.push_back(line.dump());
  }

  // Greedy pass of the trained controller.
  out.mask = detail::empty_mask(pool, detail::method_name(cfg));
  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    const auto fwd = controller::controller_forward(seqs[b], seq_classes[b], params);
    const auto acts = controller::sample_actions(fwd.logits, action_rng, controller::SampleMode::Greedy);
    for (std::size_t r = 0; r < plan.batches[b].size(); ++r) {
      const auto& e = plan.batches[b][r];
      if (acts.actions[r] == 1) out.mask.per_class[e.class_id].push_back(e.candidate);
    }
  }
  detail::sort_mask(out.mask);
  out.keep_rate = static_cast<double>(out.mask.total()) / static_cast<double>(pool.total());
  return out;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_experiment(cfg, task_for_seed(cfg, seed), seed);
}

// ---------------------------------------------------------------------------
// Histograms of centroid distances. Bins are equal width over the full-pool
// range of each class and closed on the right; the minimum goes to bin 0.
// ---------------------------------------------------------------------------

struct HistogramRow {
  std::size_t class_id = 0;
  double bin_lo = 0.0, bin_hi = 0.0;
  std::size_t count = 0;
};

inline std::size_t bin_index(double v, double lo, double hi, std::size_t bins) {
  if (bins == 1 || hi <= lo) return 0;
  const double w = (hi - lo) / static_cast<double>(bins);
  const double pos = std::ceil((v - lo) / w) - 1.0;
  if (pos < 0.0) return 0;
  return std::min(static_cast<std::size_t>(pos), bins - 1);
}

// Histogram of arbitrary values over fixed edges [lo, hi].
inline std::vector<std::size_t> histogram_counts(const std::vector<double>& values, double lo, double hi,
                                                 std::size_t bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  std::vector<std::size_t> out(bins, 0);
  for (double v : values) ++out[bin_index(v, lo, hi, bins)];
  return out;
}

inline std::vector<HistogramRow> distance_histogram(const SelectionMask& mask, const CandidatePool& pool,
                                                    const ClassCentroids& centroids, std::size_t bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  mask.validate(pool);
  std::vector<HistogramRow> rows;
  for (std::size_t c = 0; c < pool.class_count(); ++c) {
    const auto dist = centroid_distances(pool, centroids, c);
    const auto [mn, mx] = std::minmax_element(dist.begin(), dist.end());
    const double lo = *mn, hi = *mx;
    std::vector<double> chosen;
    for (auto i : mask.per_class[c]) chosen.push_back(dist[i]);
    const auto counts = histogram_counts(chosen, lo, hi, bins);
    const double w = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      const double b_hi = b + 1 == bins ? hi : lo + w * static_cast<double>(b + 1);
      rows.push_back({c, lo + w * static_cast<double>(b), b_hi, counts[b]});
    }
  }
  return rows;
}

inline std::string histogram_csv(const std::vector<HistogramRow>& rows) {
  std::ostringstream os;
  os << "class,bin_lo,bin_hi,count\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows) os << r.class_id << ',' << r.bin_lo << ',' << r.bin_hi << ',' << r.count << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Method comparison.
// ---------------------------------------------------------------------------

struct ArmResult {
  std::string method;
  evaluator::MetricsReport metrics;
  std::size_t selected = 0;
  double corrupted_fraction = 0.0;  // among selected; 0 when nothing is selected
  std::uint64_t task_checksum = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::uint64_t task_checksum = 0;
  double pool_corrupted_fraction = 0.0;
  std::vector<ArmResult> arms;
  std::vector<double> reward_trace;
  std::vector<std::size_t> selected_trace;
  std::vector<double> corrupted_trace;
  double keep_rate = 0.0;
  std::vector<HistogramRow> histogram;       // RL selection
  std::vector<HistogramRow> pool_histogram;  // full pool, same bins
  std::vector<std::string> log_lines;
};

struct Summary {
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

// Sample standard deviation (n - 1); zero for a single seed.
inline Summary summarize(const std::vector<double>& v) {
  if (v.empty()) throw ValidationError("cannot summarise an empty set");
  Summary s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = std::clamp(sum / static_cast<double>(v.size()), s.min, s.max);
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  std::vector<std::string> arm_names;

  std::vector<double> metric(const std::string& arm, double evaluator::MetricsReport::*field) const {
    std::vector<double> out;
    for (const auto& s : seeds)
      for (const auto& a : s.arms)
        if (a.method == arm) out.push_back(a.metrics.*field);
    return out;
  }
};

inline ArmResult evaluate_arm(const ExperimentConfig& cfg, const Task& task, std::uint64_t seed,
                              const SelectionMask& mask) {
  mask.validate(task.pool);
  ArmResult a;
  a.method = mask.method;
  a.selected = mask.total();
  a.corrupted_fraction =
      a.selected ? static_cast<double>(mask.corrupted_count(task.pool)) / static_cast<double>(a.selected) : 0.0;
  a.task_checksum = task.checksum();
  const auto ev = evaluator::evaluate_selection(task.train, baselines::selected_features(task.pool, mask), task.val,
                                                task.test, cfg.classifier, classifier_stream(seed, 1));
  a.metrics = ev.test_report;
  return a;
}

inline SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Task task = task_for_seed(cfg, seed);
  SeedResult out;
  out.seed = seed;
  out.task_checksum = task.checksum();
  out.pool_corrupted_fraction = task.pool.corrupted_fraction();
  const auto centroids = compute_centroids(task.train);
  const auto counts = task.train.class_counts();

  out.arms.push_back(evaluate_arm(cfg, task, seed, detail::empty_mask(task.pool, "no-augmentation")));
  RngStream random_rng(seed, StreamId::DataGen, 1u << 20);
  out.arms.push_back(
      evaluate_arm(cfg, task, seed, baselines::select_random(task.pool, counts, cfg.augmentation_ratio, random_rng)));
  out.arms.push_back(evaluate_arm(cfg, task, seed,
                                  baselines::select_by_centroid_distance(task.pool, centroids, counts,
                                                                         cfg.augmentation_ratio, cfg.centroid_band,
                                                                         cfg.centroid_fill)));
  out.arms.push_back(
      evaluate_arm(cfg, task, seed, baselines::select_oracle(task.pool, centroids, counts, cfg.augmentation_ratio)));

  auto rl = run_experiment(cfg, task, seed);
  out.arms.push_back(evaluate_arm(cfg, task, seed, rl.mask));
  out.reward_trace = std::move(rl.reward_trace);
  out.selected_trace = std::move(rl.selected_trace);
  out.corrupted_trace = std::move(rl.corrupted_trace);
  out.keep_rate = rl.keep_rate;
  out.log_lines = std::move(rl.log_lines);
  out.histogram = distance_histogram(rl.mask, task.pool, centroids, cfg.histogram_bins);
  SelectionMask all = detail::empty_mask(task.pool, "pool");
  for (std::size_t c = 0; c < task.pool.class_count(); ++c) {
    all.per_class[c].resize(task.pool.class_size(c));
    std::iota(all.per_class[c].begin(), all.per_class[c].end(), std::size_t{0});
  }
  out.pool_histogram = distance_histogram(all, task.pool, centroids, cfg.histogram_bins);

  for (const auto& a : out.arms) {
    if (a.task_checksum != out.task_checksum) throw StateError("arms of seed " + std::to_string(seed) + " saw different tasks");
  }
  return out;
}

// Runs every seed (in parallel when threads > 1) and merges in seed order.
inline ExperimentReport compare_methods(const ExperimentConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  ExperimentReport report;
  report.config = cfg;
  report.seeds.resize(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= cfg.seeds.size()) return;
        i = next++;
      }
      try {
        report.seeds[i] = run_seed(cfg, cfg.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, cfg.seeds.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& a : report.seeds.front().arms) report.arm_names.push_back(a.method);
  return report;
}

}  // namespace synsel::harness
