// Runs criteria 2 to 8 and prints one PASS/FAIL line per criterion. Exit code
// is the number of failed criteria. Artifacts land in the working directory.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "synsel/synsel.hpp"

using namespace synsel;
using namespace synsel::harness;
using numkit::Matrix;
using numkit::RngStream;
using numkit::StreamId;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s | %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

controller::ControllerConfig small_controller(controller::Variant v = controller::Variant::Transformer) {
  controller::ControllerConfig c;
  c.variant = v;
  c.input_dim = 8;
  c.class_count = 3;
  c.model_dim = 8;
  c.heads = 2;
  c.key_dim = 4;
  c.value_dim = 4;
  c.layers = 2;
  c.ffn_hidden = 12;
  c.class_embedding_dim = 8;
  c.zero_policy_head = false;
  return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

policy::Trajectory collect(controller::ControllerParams& p, std::size_t steps, std::size_t len, std::uint64_t seed) {
  RngStream rng(seed, StreamId::DataGen);
  RngStream act(seed, StreamId::ActionSample);
  policy::Trajectory traj;
  for (std::size_t s = 0; s < steps; ++s) {
    policy::TrajectoryStep st;
    st.batch_index = s;
    st.features = random_matrix(len, p.config.input_dim, rng);
    for (std::size_t i = 0; i < len; ++i) {
      st.classes.push_back(static_cast<std::uint32_t>(i % p.config.class_count));
      st.candidate_ids.push_back(i);
    }
    const auto out = controller::controller_forward(st.features, st.classes, p);
    const auto a = controller::sample_actions(out.logits, act, controller::SampleMode::Stochastic);
    st.actions = a.actions;
    st.old_log_probs = a.log_probs;
    st.value = out.value;
    st.raw_reward = st.smoothed_reward = rng.uniform(0.5, 0.9);
    st.advantage = policy::advantage(st.smoothed_reward, st.value);
    traj.steps.push_back(std::move(st));
  }
  return traj;
}

void criterion2() {
  const auto suite = run_grad_checks();
  double worst = 0.0;
  std::string names;
  for (const auto& c : suite.cases) {
    worst = std::max(worst, c.max_rel_error);
    names += (names.empty() ? "" : ",") + c.name;
  }
  verdict(2, suite.passed() && suite.seconds < 30.0,
          std::to_string(suite.cases.size()) + " blocks (" + names + "), max rel err " + fmt("%.2e", worst) +
              ", " + fmt("%.2f s", suite.seconds));
}

void criterion3() {
  RngStream rng(31, StreamId::ControllerInit);
  auto p = controller::init_params(small_controller(), rng);
  const auto traj = collect(p, 4, 6, 31);

  // theta == theta_old on the first minibatch.
  auto p1 = p;
  policy::PPOConfig cfg;
  policy::Adam adam(cfg);
  RngStream shuffle(31, StreamId::ActionSample, 1);
  const auto st = policy::ppo_update(p1, traj, cfg, adam, shuffle);
  const bool sync = st.first_minibatch_max_ratio_dev == 0.0 && st.first_minibatch_clip_fraction == 0.0;

  // eps -> infinity, K = 1: PPO gradient equals REINFORCE-with-baseline.
  policy::PPOConfig wide = cfg;
  wide.epsilon = 1e12;
  wide.epochs = 1;
  wide.entropy_weight = 0.0;
  const std::vector<std::size_t> all{0, 1, 2, 3};
  auto plist = p.all();
  numkit::zero_grads(plist);
  policy::ppo_objective(p, traj, wide, all, true);
  std::vector<Matrix> g_ppo;
  for (auto* t : plist) g_ppo.push_back(t->grad);
  numkit::zero_grads(plist);
  policy::reinforce_objective(p, traj, wide.value_loss_weight, true);
  double worst = 0.0;
  for (std::size_t k = 0; k < plist.size(); ++k)
    for (std::size_t i = 0; i < g_ppo[k].size(); ++i) {
      const double a = g_ppo[k][i], b = plist[k]->grad[i];
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}));
    }
  numkit::zero_grads(plist);

  // Clipped <= unclipped.
  RngStream pairs(32, StreamId::DataGen);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const double r = pairs.uniform(0.0, 3.0), adv = pairs.uniform(-2.0, 2.0);
    violations += policy::ppo_surrogate(r, adv, 0.2) > r * adv;
  }
  verdict(3, sync && worst < 1e-9 && violations == 0,
          std::string("first-minibatch ratio dev ") + fmt("%.1e", st.first_minibatch_max_ratio_dev) + " clip " +
              fmt("%.2f", st.first_minibatch_clip_fraction) + "; PPO vs REINFORCE grad rel err " +
              fmt("%.2e", worst) + "; clipped>unclipped in " + std::to_string(violations) + "/10000");
}

void criterion4() {
  RngStream rng(41, StreamId::DataGen);
  std::size_t mismatches = 0, out_of_bounds = 0, values = 0;
  for (int stream = 0; stream < 1000; ++stream) {
    policy::RewardTracker t(0.8);
    double prev = 0.0, lo = 1e300, hi = -1e300;
    const int len = 1 + static_cast<int>(rng.below(50));
    for (int i = 0; i < len; ++i) {
      const double q = rng.uniform();
      const double expect = i == 0 ? q : 0.8 * prev + (1.0 - 0.8) * q;
      const double got = policy::ema_update(t, q);
      lo = std::min(lo, q);
      hi = std::max(hi, q);
      mismatches += got != expect;
      out_of_bounds += got < lo || got > hi;
      prev = got;
      ++values;
    }
  }
  verdict(4, mismatches == 0 && out_of_bounds == 0,
          std::to_string(values) + " updates over 1000 streams, " + std::to_string(mismatches) +
              " recursion mismatches, " + std::to_string(out_of_bounds) + " outside running [min, max]");
}

void criterion5() {
  RngStream rng(51, StreamId::ControllerInit);
  auto p = controller::init_params(small_controller(), rng);
  for (auto* t : p.all())
    for (auto& v : t->value.values()) v += rng.uniform(-0.1, 0.1);
  const Matrix seq = random_matrix(6, 8, rng);
  const std::vector<std::uint32_t> cls{0, 1, 2, 2, 1, 0};
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Matrix pseq(6, 8);
  std::vector<std::uint32_t> pcls(6);
  for (std::size_t i = 0; i < 6; ++i) {
    std::copy(seq.row(perm[i]).begin(), seq.row(perm[i]).end(), pseq.row(i).begin());
    pcls[i] = cls[perm[i]];
  }
  double row_err = 0.0;
  auto deviation = [&](bool positions) {
    const auto a = controller::encoder_forward(seq, cls, p, positions);
    const auto b = controller::encoder_forward(pseq, pcls, p, positions);
    for (const auto* out : {&a, &b})
      for (const auto& layer : out->attention)
        for (const auto& w : layer)
          for (std::size_t r = 0; r < w.rows(); ++r) {
            double s = 0.0;
            for (double v : w.row(r)) s += v;
            row_err = std::max(row_err, std::abs(s - 1.0));
          }
    double dev = std::abs(a.value - b.value);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 2; ++c) dev = std::max(dev, std::abs(b.logits(i, c) - a.logits(perm[i], c)));
    return dev;
  };
  const double without = deviation(false), with = deviation(true);

  // Zero-initialised policy head over the default benchmark's full pool.
  ExperimentConfig cfg;
  const auto task = task_for_seed(cfg, 0);
  RngStream init(0, StreamId::ControllerInit);
  auto fresh = controller::init_params(cfg.resolved_controller(), init);
  const auto plan = build_batches(task.pool, compute_centroids(task.train), cfg.batch_count);
  std::size_t kept = 0;
  RngStream act(0, StreamId::ActionSample);
  for (const auto& batch : plan.batches) {
    std::vector<std::uint32_t> bc;
    for (const auto& e : batch) bc.push_back(static_cast<std::uint32_t>(e.class_id));
    const auto out = controller::controller_forward(batch_features(task.pool, batch), bc, fresh);
    for (int a : controller::sample_actions(out.logits, act, controller::SampleMode::Greedy).actions) kept += a;
  }
  verdict(5, without <= 1e-9 && with > 1e-6 && row_err <= 1e-12 && kept == 0,
          "perm. deviation without PE " + fmt("%.1e", without) + ", with PE " + fmt("%.1e", with) +
              "; attention row-sum err " + fmt("%.1e", row_err) + "; zero-logit greedy kept " +
              std::to_string(kept) + "/" + std::to_string(task.pool.total()));
}

struct ArmStats {
  std::vector<double> acc;
};

std::map<std::string, ArmStats> arm_accuracy(const ExperimentReport& r) {
  std::map<std::string, ArmStats> out;
  for (const auto& s : r.seeds)
    for (const auto& a : s.arms) out[a.method].acc.push_back(a.metrics.accuracy);
  return out;
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

int main() {
  criterion2();
  criterion3();
  criterion4();
  criterion5();

  const auto cfg = load_config(std::string(SYNSEL_SOURCE_DIR) + "/configs/default.json");
  const std::string rl = "rl-ppo-transformer";

  // Criterion 6: the default benchmark end to end, single thread.
  const auto t6 = Clock::now();
  const auto report = compare_methods(cfg, 1);
  const double secs6 = seconds_since(t6);
  const std::string canonical = canonical_dump(report);
  write_file("acceptance_report.json", canonical);
  std::printf("%s", render_table(nlohmann::json::parse(canonical)).c_str());
  auto arms = arm_accuracy(report);
  const double m_none = mean(arms["no-augmentation"].acc), m_rand = mean(arms["random"].acc),
               m_oracle = mean(arms["oracle"].acc), m_rl = mean(arms[rl].acc);
  std::size_t beats_none = 0, cleaner = 0;
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    const auto& s = report.seeds[i];
    beats_none += arms[rl].acc[i] > arms["no-augmentation"].acc[i];
    cleaner += s.arms.back().selected > 0 && s.arms.back().corrupted_fraction < s.pool_corrupted_fraction;
  }
  const std::size_t n = report.seeds.size();
  const bool order = m_oracle >= m_rl && m_rl > m_rand && m_rand >= m_none;
  verdict(6, secs6 < 600.0 && order && m_rl - m_rand >= 0.02 && beats_none + 1 >= n && cleaner + 1 >= n,
          "mean acc oracle " + fmt("%.4f", m_oracle) + " rl " + fmt("%.4f", m_rl) + " random " +
              fmt("%.4f", m_rand) + " none " + fmt("%.4f", m_none) + "; ordering " + (order ? "holds" : "violated") +
              "; rl-random " + fmt("%+.4f", m_rl - m_rand) + "; rl>none in " + std::to_string(beats_none) + "/" +
              std::to_string(n) + "; cleaner than pool in " + std::to_string(cleaner) + "/" + std::to_string(n) +
              "; " + fmt("%.0f s", secs6));

  // Criterion 7: all six controller x algorithm combinations.
  std::map<std::string, double> combo_mean{{rl, m_rl}};
  bool all_ran = true;
  for (auto v : {controller::Variant::Transformer, controller::Variant::Gru, controller::Variant::GruAttn}) {
    for (auto a : {Algorithm::Ppo, Algorithm::Reinforce}) {
      auto c = cfg;
      c.controller.variant = v;
      c.algorithm = a;
      const std::string name = detail::method_name(c);
      if (name == rl) continue;
      std::vector<double> acc;
      try {
        for (auto seed : c.seeds) {
          const auto task = task_for_seed(c, seed);
          const auto run = run_experiment(c, task, seed);
          acc.push_back(evaluate_arm(c, task, seed, run.mask).metrics.accuracy);
        }
        combo_mean[name] = mean(acc);
      } catch (const std::exception& e) {
        all_ran = false;
        std::printf("  %s failed: %s\n", name.c_str(), e.what());
      }
      std::printf("  %-24s mean acc %.4f\n", name.c_str(), combo_mean.count(name) ? combo_mean[name] : 0.0);
      std::fflush(stdout);
    }
  }
  const std::string gru_rf = "rl-reinforce-gru";
  const bool dir7 = combo_mean.count(gru_rf) && combo_mean[rl] >= combo_mean[gru_rf];
  verdict(7, all_ran && combo_mean.size() == 6 && dir7,
          std::to_string(combo_mean.size()) + "/6 combinations completed; transformer-PPO " + fmt("%.4f", m_rl) +
              " vs GRU-REINFORCE " + fmt("%.4f", combo_mean.count(gru_rf) ? combo_mean[gru_rf] : 0.0));

  // Criterion 8: byte-identical rerun, histogram totals, keep-rate band.
  const std::string again = canonical_dump(compare_methods(cfg, 1));
  const bool identical = again == canonical;
  bool hist_ok = true;
  std::size_t in_band = 0;
  for (const auto& s : report.seeds) {
    const std::string csv = histogram_csv(s.histogram);
    write_file("acceptance_hist_seed" + std::to_string(s.seed) + ".csv", csv);
    std::size_t total = 0;
    std::size_t pos = csv.find('\n') + 1;
    while (pos < csv.size()) {
      const std::size_t end = csv.find('\n', pos);
      const std::string line = csv.substr(pos, end - pos);
      total += std::stoul(line.substr(line.rfind(',') + 1));
      pos = end + 1;
    }
    hist_ok = hist_ok && total == s.arms.back().selected;
    in_band += s.keep_rate > 0.1 && s.keep_rate < 0.9;
  }
  std::string rates;
  for (const auto& s : report.seeds) rates += (rates.empty() ? "" : " ") + fmt("%.3f", s.keep_rate);
  verdict(8, identical && hist_ok && in_band + 1 >= n,
          std::string("rerun report ") + (identical ? "byte-identical" : "DIFFERS") + "; histogram totals " +
              (hist_ok ? "match" : "MISMATCH") + " selections; greedy keep-rate in (0.1, 0.9) in " +
              std::to_string(in_band) + "/" + std::to_string(n) + " seeds [" + rates + "]");

  std::printf("acceptance: %d of 7 criteria failed\n", failures);
  return failures;
}
