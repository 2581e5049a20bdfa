#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "synsel/controller.hpp"
#include "synsel/evaluator.hpp"
#include "synsel/numkit/grad_check.hpp"
#include "synsel/numkit/rng.hpp"
#include "synsel/numkit/tape.hpp"
#include "synsel/policy.hpp"

namespace synsel::harness {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_param;
  bool passed = false;
};

struct GradCheckSuite {
  std::vector<GradCheckCase> cases;
  double seconds = 0.0;
  double tolerance = 1e-5;
  bool passed() const {
    for (const auto& c : cases)
      if (!c.passed) return false;
    return !cases.empty();
  }
};

namespace verify_detail {

using numkit::Matrix;
using numkit::ParamList;
using numkit::ParamTensor;
using numkit::RngStream;
using numkit::Tape;
using numkit::Var;

inline Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Moves every entry off its structured initial value (zero biases, unit
// gains) so no gradient entry is trivially tiny.
inline void jitter(const ParamList& params, RngStream& rng, double amount) {
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += rng.uniform(-amount, amount);
}

// <out, weights>: a scalar that depends on every output entry.
inline Var project(Tape& t, Var out, const Matrix& weights) {
  using namespace numkit::ops;
  return sum(hadamard(out, t.constant(weights)));
}

}  // namespace verify_detail

// Central-difference checks of every trained block at sequence length 6 and
// input width 8.
inline GradCheckSuite run_grad_checks(double epsilon = 1e-5, double tolerance = 1e-5, std::uint64_t seed = 7) {
  using namespace verify_detail;
  using namespace numkit::ops;
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t kSeq = 6, kIn = 8;
  RngStream rng(seed, numkit::StreamId::ControllerInit, 99);
  GradCheckSuite suite;
  suite.tolerance = tolerance;
  auto record = [&](std::string name, const numkit::Objective& f, const ParamList& params) {
    const auto r = numkit::grad_check_detailed(f, params, epsilon);
    suite.cases.push_back({std::move(name), r.max_rel_error, r.worst_param, r.max_rel_error < tolerance});
  };

  {  // scaled dot-product attention
    auto q = ParamTensor::uniform("q", kSeq, 4, 1.0, rng);
    auto k = ParamTensor::uniform("k", kSeq, 4, 1.0, rng);
    auto v = ParamTensor::uniform("v", kSeq, 5, 1.0, rng);
    const Matrix w = random_matrix(kSeq, 5, rng);
    auto f = [&](bool backward) {
      Tape t;
      auto res = controller::self_attention(t.param(q), t.param(k), t.param(v), 4);
      Var out = project(t, res.output, w);
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("attention", f, {&q, &k, &v});
  }

  controller::ControllerConfig cfg;
  cfg.input_dim = kIn;
  cfg.class_count = 3;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.key_dim = 4;
  cfg.value_dim = 4;
  cfg.layers = 2;
  cfg.ffn_hidden = 12;
  cfg.class_embedding_dim = 8;
  cfg.zero_policy_head = false;
  const Matrix seq = random_matrix(kSeq, kIn, rng);
  const std::vector<std::uint32_t> classes{0, 1, 2, 0, 1, 2};

  {  // multi-head block
    auto x = ParamTensor::uniform("x", kSeq, kIn, 1.0, rng);
    auto p = controller::init_params(cfg, rng);
    auto& layer = p.layers.front();
    const Matrix w = random_matrix(kSeq, cfg.model_dim, rng);
    ParamList params{&x, &layer.wo};
    for (auto& h : layer.heads) {
      params.push_back(&h.wq);
      params.push_back(&h.wk);
      params.push_back(&h.wv);
    }
    auto f = [&](bool backward) {
      Tape t;
      auto res = controller::multi_head(t.param(x), layer.heads, layer.wo);
      Var out = project(t, res.output, w);
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("multi-head", f, params);
  }

  {  // position-wise feed-forward
    auto x = ParamTensor::uniform("x", kSeq, kIn, 1.0, rng);
    auto w1 = ParamTensor::uniform("w1", kIn, 12, 0.5, rng);
    auto b1 = ParamTensor::uniform("b1", 1, 12, 0.5, rng);
    auto w2 = ParamTensor::uniform("w2", 12, kIn, 0.5, rng);
    auto b2 = ParamTensor::uniform("b2", 1, kIn, 0.5, rng);
    const Matrix w = random_matrix(kSeq, kIn, rng);
    auto f = [&](bool backward) {
      Tape t;
      Var out = project(t, controller::feed_forward(t.param(x), w1, b1, w2, b2), w);
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("feed-forward", f, {&x, &w1, &b1, &w2, &b2});
  }

  {  // full encoder with policy and value heads
    auto p = controller::init_params(cfg, rng);
    jitter(p.all(), rng, 0.1);
    const Matrix w = random_matrix(kSeq, 2, rng);
    auto f = [&](bool backward) {
      Tape t;
      auto g = controller::encoder_forward(t, seq, classes, p, true);
      Var out = add(project(t, g.logits, w), scale(g.value, 0.7));
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("encoder+heads", f, p.all());
  }

  {  // GRU cell
    const std::size_t m = 5;
    auto xw = ParamTensor::uniform("xw", 1, 3 * m, 1.0, rng);
    auto h = ParamTensor::uniform("h", 1, m, 1.0, rng);
    auto u = ParamTensor::uniform("u", m, 3 * m, 0.7, rng);
    const Matrix w = random_matrix(1, m, rng);
    auto f = [&](bool backward) {
      Tape t;
      Var out = project(t, controller::gru_step(t.param(xw), t.param(h), t.param(u), m), w);
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("gru-cell", f, {&xw, &h, &u});
  }

  {  // recurrent controller with attention pooling
    auto gcfg = cfg;
    gcfg.variant = controller::Variant::GruAttn;
    auto p = controller::init_params(gcfg, rng);
    jitter(p.all(), rng, 0.1);
    const Matrix w = random_matrix(kSeq, 2, rng);
    auto f = [&](bool backward) {
      Tape t;
      auto g = controller::gru_forward(t, seq, classes, p, true);
      Var out = add(project(t, g.logits, w), scale(g.value, 0.7));
      if (backward) t.backward(out);
      return t.value(out)[0];
    };
    record("gru-attn+heads", f, p.all());
  }

  {  // softmax-regression loss with weight decay
    evaluator::ClassifierConfig ccfg;
    ccfg.weight_decay = 0.01;
    evaluator::Classifier clf(ccfg, kIn, 3, rng);
    jitter(clf.params(), rng, 0.1);
    const Matrix x = random_matrix(kSeq, kIn, rng);
    const std::vector<std::uint32_t> y{0, 1, 2, 2, 1, 0};
    auto f = [&](bool backward) { return clf.loss(x, y, backward); };
    record("softmax-regression", f, clf.params());
  }

  {  // PPO surrogate objective at a policy away from the collecting one
    auto p = controller::init_params(cfg, rng);
    RngStream act_rng(seed, numkit::StreamId::ActionSample, 99);
    policy::Trajectory traj;
    for (std::size_t s = 0; s < 2; ++s) {
      policy::TrajectoryStep step;
      step.batch_index = s;
      step.features = random_matrix(kSeq, kIn, rng);
      step.classes = classes;
      const auto fwd = controller::controller_forward(step.features, step.classes, p);
      const auto acts = controller::sample_actions(fwd.logits, act_rng, controller::SampleMode::Stochastic);
      step.actions = acts.actions;
      step.old_log_probs = acts.log_probs;
      step.value = fwd.value;
      step.raw_reward = 0.6 + 0.1 * static_cast<double>(s);
      step.smoothed_reward = step.raw_reward;
      step.advantage = s == 0 ? 0.4 : -0.3;
      for (std::size_t i = 0; i < kSeq; ++i) step.candidate_ids.push_back(i);
      traj.steps.push_back(std::move(step));
    }
    jitter(p.all(), rng, 0.02);
    policy::PPOConfig pcfg;
    pcfg.entropy_weight = 0.05;
    const std::vector<std::size_t> steps{0, 1};
    auto f = [&](bool backward) { return policy::ppo_objective(p, traj, pcfg, steps, backward); };
    record("ppo-surrogate", f, p.all());
  }

  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace synsel::harness
