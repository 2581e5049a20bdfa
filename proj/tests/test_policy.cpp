#include <cmath>

#include <gtest/gtest.h>

#include "synsel/synsel.hpp"

using namespace synsel;
using namespace synsel::policy;
using numkit::Matrix;
using numkit::RngStream;
using numkit::StreamId;

namespace {

controller::ControllerConfig tiny_config() {
  controller::ControllerConfig c;
  c.input_dim = 6;
  c.class_count = 2;
  c.model_dim = 8;
  c.heads = 2;
  c.key_dim = 4;
  c.value_dim = 4;
  c.layers = 1;
  c.ffn_hidden = 8;
  c.class_embedding_dim = 8;
  c.zero_policy_head = false;
  return c;
}

// Collects a trajectory with the current parameters so old log-probs match
// the policy exactly.
Trajectory collect(ControllerParams& p, std::size_t steps, std::size_t len, std::uint64_t seed) {
  RngStream rng(seed, StreamId::DataGen);
  RngStream act(seed, StreamId::ActionSample);
  Trajectory traj;
  for (std::size_t s = 0; s < steps; ++s) {
    TrajectoryStep st;
    st.batch_index = s;
    st.features = Matrix(len, p.config.input_dim);
    for (auto& v : st.features.values()) v = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < len; ++i) {
      st.classes.push_back(static_cast<std::uint32_t>(i % p.config.class_count));
      st.candidate_ids.push_back(i);
    }
    const auto out = controller::controller_forward(st.features, st.classes, p);
    const auto a = controller::sample_actions(out.logits, act, controller::SampleMode::Stochastic);
    st.actions = a.actions;
    st.old_log_probs = a.log_probs;
    st.value = out.value;
    st.raw_reward = rng.uniform(0.5, 0.9);
    st.smoothed_reward = st.raw_reward;
    st.advantage = advantage(st.smoothed_reward, st.value);
    traj.steps.push_back(std::move(st));
  }
  return traj;
}

std::vector<Matrix> grads_of(ControllerParams& p) {
  std::vector<Matrix> out;
  for (auto* t : p.all()) out.push_back(t->grad);
  return out;
}

}  // namespace

TEST(Ema, FirstRewardPassesThrough) {
  RewardTracker t(0.8);
  EXPECT_EQ(ema_update(t, 0.7), 0.7);
}

TEST(Ema, SecondStepArithmetic) {
  RewardTracker t(0.8);
  ema_update(t, 0.7);
  EXPECT_NEAR(ema_update(t, 0.8), 0.72, 1e-15);
}

TEST(Ema, ConstantStreamIsFixedPoint) {
  RewardTracker t(0.8);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(ema_update(t, 0.613), 0.613, 1e-15);
}

TEST(Ema, RecursionAndBoundsOnRandomStreams) {
  RngStream rng(1, StreamId::DataGen);
  for (int stream = 0; stream < 1000; ++stream) {
    RewardTracker t(0.8);
    double prev = 0.0, lo = 1e300, hi = -1e300;
    const int len = 1 + static_cast<int>(rng.below(40));
    for (int i = 0; i < len; ++i) {
      const double q = rng.uniform();
      const double expect = i == 0 ? q : 0.8 * prev + (1.0 - 0.8) * q;
      const double got = ema_update(t, q);
      ASSERT_EQ(got, expect);
      lo = std::min(lo, q);
      hi = std::max(hi, q);
      ASSERT_GE(got, lo - 1e-15);
      ASSERT_LE(got, hi + 1e-15);
      prev = got;
    }
  }
}

TEST(Ema, ResetAndErrors) {
  RewardTracker t(0.5);
  EXPECT_THROW(t.current(), StateError);
  ema_update(t, 0.2);
  t.reset();
  EXPECT_TRUE(t.empty());
  EXPECT_EQ(ema_update(t, 0.9), 0.9);
  EXPECT_THROW(RewardTracker(1.0), ConfigError);
  EXPECT_THROW(ema_update(t, std::nan("")), NumericError);
}

TEST(Advantage, Identities) {
  EXPECT_EQ(advantage(0.6, 0.6), 0.0);
  EXPECT_NEAR(advantage(0.72, 0.5), 0.22, 1e-15);
  RngStream rng(2, StreamId::DataGen);
  for (int i = 0; i < 1000; ++i) {
    const double q = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
    const double a = advantage(q, v);
    EXPECT_EQ(a > 0, q > v);
    EXPECT_EQ(a < 0, q < v);
  }
}

TEST(Ratio, Identities) {
  EXPECT_EQ(prob_ratio(-0.3, -0.3), 1.0);
  EXPECT_NEAR(prob_ratio(-1.0 + std::log(2.0), -1.0), 2.0, 1e-15);
  RngStream rng(3, StreamId::DataGen);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-5, 0), b = rng.uniform(-5, 0);
    EXPECT_NEAR(prob_ratio(a, b) * prob_ratio(b, a), 1.0, 1e-14);
  }
}

TEST(Surrogate, ClipCases) {
  EXPECT_DOUBLE_EQ(ppo_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(ppo_surrogate(0.5, -1.0, 0.2), -0.8);
  for (double eps : {0.01, 0.2, 5.0}) EXPECT_EQ(ppo_surrogate(1.0, -0.37, eps), -0.37);
}

TEST(Surrogate, ClippedNeverExceedsUnclipped) {
  RngStream rng(4, StreamId::DataGen);
  for (int i = 0; i < 10000; ++i) {
    const double r = rng.uniform(0.0, 3.0), a = rng.uniform(-2, 2);
    ASSERT_LE(ppo_surrogate(r, a, 0.2), r * a);
  }
}

TEST(Surrogate, ZeroGradientInClippedRegions) {
  // d/d ratio via finite differences agrees with the analytic branch rule.
  RngStream rng(5, StreamId::DataGen);
  for (int i = 0; i < 2000; ++i) {
    const double r = rng.uniform(0.1, 2.5), a = rng.uniform(-2, 2);
    if (std::abs(r - 1.2) < 1e-3 || std::abs(r - 0.8) < 1e-3) continue;
    const double h = 1e-6;
    const double num = (ppo_surrogate(r + h, a, 0.2) - ppo_surrogate(r - h, a, 0.2)) / (2 * h);
    const double ana = ppo_surrogate_dratio(r, a, 0.2);
    EXPECT_NEAR(num, ana, 1e-8);
    if ((r > 1.2 && a > 0) || (r < 0.8 && a < 0)) {
      EXPECT_EQ(ana, 0.0);
    }
  }
}

TEST(Reinforce, LossArithmetic) {
  Trajectory t;
  TrajectoryStep s;
  s.features = Matrix(1, 1);
  s.classes = {0};
  s.actions = {1};
  s.old_log_probs = {-0.693};
  s.raw_reward = s.smoothed_reward = 0.5;
  s.advantage = 1.0;
  t.steps.push_back(s);
  EXPECT_NEAR(reinforce_loss(t), 0.693, 1e-15);
  t.steps[0].advantage = 0.0;
  EXPECT_EQ(reinforce_loss(t), 0.0);
}

TEST(Reinforce, LinearInAdvantage) {
  RngStream rng(6, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  auto t = collect(p, 3, 5, 6);
  const double base = reinforce_loss(t);
  for (auto& s : t.steps) s.advantage *= -2.5;
  EXPECT_NEAR(reinforce_loss(t), -2.5 * base, 1e-14);
}

TEST(Reinforce, ZeroAdvantageGivesZeroPolicyGradient) {
  RngStream rng(7, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  auto t = collect(p, 2, 4, 7);
  for (auto& s : t.steps) s.advantage = 0.0;
  numkit::zero_grads(p.all());
  reinforce_objective(p, t, 0.0, true);
  EXPECT_EQ(numkit::grad_norm(p.all()), 0.0);
}

TEST(Ppo, FirstMinibatchIsSynchronised) {
  RngStream rng(8, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  const auto t = collect(p, 4, 6, 8);
  PPOConfig cfg;
  Adam adam(cfg);
  RngStream shuffle(8, StreamId::ActionSample, 1);
  const auto stats = ppo_update(p, t, cfg, adam, shuffle);
  EXPECT_EQ(stats.first_minibatch_max_ratio_dev, 0.0);
  EXPECT_EQ(stats.first_minibatch_clip_fraction, 0.0);
  EXPECT_EQ(stats.optimizer_steps, 4u * cfg.epochs);
}

TEST(Ppo, GradientMatchesReinforceWithBaseline) {
  RngStream rng(9, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  const auto t = collect(p, 3, 5, 9);
  PPOConfig cfg;
  cfg.epsilon = 1e12;
  cfg.epochs = 1;
  cfg.entropy_weight = 0.0;
  std::vector<std::size_t> all{0, 1, 2};

  numkit::zero_grads(p.all());
  ppo_objective(p, t, cfg, all, true);
  const auto g_ppo = grads_of(p);
  numkit::zero_grads(p.all());
  reinforce_objective(p, t, cfg.value_loss_weight, true);
  const auto g_rf = grads_of(p);

  double worst = 0.0;
  for (std::size_t k = 0; k < g_ppo.size(); ++k)
    for (std::size_t i = 0; i < g_ppo[k].size(); ++i) {
      const double a = g_ppo[k][i], b = g_rf[k][i];
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}));
    }
  EXPECT_LT(worst, 1e-9);
}

TEST(Ppo, StationaryPointLeavesParametersUnchanged) {
  RngStream rng(10, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  p.value_w.value.fill(0.0);
  p.value_b.value[0] = 0.65;
  auto t = collect(p, 3, 4, 10);
  for (auto& s : t.steps) {
    s.smoothed_reward = s.raw_reward = 0.65;
    s.value = 0.65;
    s.advantage = 0.0;
  }
  PPOConfig cfg;
  cfg.entropy_weight = 0.0;
  std::vector<Matrix> before;
  for (auto* x : p.all()) before.push_back(x->value);
  Adam adam(cfg);
  RngStream shuffle(10, StreamId::ActionSample, 1);
  ppo_update(p, t, cfg, adam, shuffle);
  const auto after = p.all();
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(numkit::max_abs_diff(before[k], after[k]->value), 0.0);
}

TEST(Ppo, UpdateIsDeterministic) {
  RngStream rng(11, StreamId::ControllerInit);
  const auto p0 = controller::init_params(tiny_config(), rng);
  auto p1 = p0, p2 = p0;
  const auto t = collect(p1, 4, 5, 11);
  PPOConfig cfg;
  Adam a1(cfg), a2(cfg);
  RngStream s1(11, StreamId::ActionSample, 1), s2(11, StreamId::ActionSample, 1);
  const auto st1 = ppo_update(p1, t, cfg, a1, s1);
  const auto st2 = ppo_update(p2, t, cfg, a2, s2);
  EXPECT_EQ(st1.mean_ratio, st2.mean_ratio);
  const auto x1 = p1.all();
  const auto x2 = p2.all();
  for (std::size_t k = 0; k < x1.size(); ++k) EXPECT_EQ(numkit::max_abs_diff(x1[k]->value, x2[k]->value), 0.0);
}

TEST(Ppo, UpdateMovesTowardsPositiveAdvantage) {
  RngStream rng(12, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  auto t = collect(p, 2, 6, 12);
  for (auto& s : t.steps) s.advantage = 1.0;
  double before = 0.0;
  for (const auto& s : t.steps)
    for (double lp : s.old_log_probs) before += lp;
  PPOConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.entropy_weight = 0.0;
  Adam adam(cfg);
  RngStream shuffle(12, StreamId::ActionSample, 1);
  ppo_update(p, t, cfg, adam, shuffle);
  double after = 0.0;
  for (const auto& s : t.steps) {
    const auto out = controller::controller_forward(s.features, s.classes, p);
    const Matrix lp = numkit::log_softmax_rows(out.logits);
    for (std::size_t i = 0; i < s.actions.size(); ++i) after += lp(i, static_cast<std::size_t>(s.actions[i]));
  }
  EXPECT_GT(after, before);
}

TEST(Ppo, GradCheckOfObjectiveAwayFromOldPolicy) {
  RngStream rng(13, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  const auto t = collect(p, 2, 5, 13);
  for (auto* x : p.all())
    for (auto& v : x->value.values()) v += rng.uniform(-0.02, 0.02);
  PPOConfig cfg;
  cfg.entropy_weight = 0.05;
  const std::vector<std::size_t> steps{0, 1};
  auto f = [&](bool backward) { return ppo_objective(p, t, cfg, steps, backward); };
  EXPECT_LT(numkit::grad_check(f, p.all(), 1e-5), 1e-5);
}

TEST(Ppo, IncompleteTrajectoryIsRejected) {
  RngStream rng(14, StreamId::ControllerInit);
  auto p = controller::init_params(tiny_config(), rng);
  auto t = collect(p, 2, 3, 14);
  t.steps[1].advantage = std::nan("");
  PPOConfig cfg;
  Adam adam(cfg);
  RngStream shuffle(14, StreamId::ActionSample, 1);
  EXPECT_THROW(ppo_update(p, t, cfg, adam, shuffle), StateError);
  EXPECT_THROW(reinforce_loss(Trajectory{}), StateError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  numkit::ParamTensor w("w", Matrix{{1.0, -2.0}});
  w.grad = Matrix{{0.3, -4.0}};
  Adam adam(0.1, 0.9, 0.999, 1e-8);
  adam.step({&w});
  EXPECT_NEAR(w.value[0], 0.9, 1e-7);
  EXPECT_NEAR(w.value[1], -1.9, 1e-7);
}
