#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "synsel/controller.hpp"
#include "synsel/errors.hpp"
#include "synsel/numkit/param.hpp"
#include "synsel/numkit/rng.hpp"
#include "synsel/numkit/tape.hpp"

namespace synsel::policy {

using controller::ControllerParams;
using numkit::Matrix;
using numkit::ParamList;
using numkit::ParamTensor;
using numkit::RngStream;
using numkit::Tape;
using numkit::Var;

// Exponential moving average of the raw rewards:
// Q^_1 = Q_1, Q^_t = alpha * Q^_{t-1} + (1 - alpha) * Q_t.
struct RewardTracker {
  double alpha = 0.8;
  std::vector<double> smoothed;
  double seen_min = std::numeric_limits<double>::infinity();
  double seen_max = -std::numeric_limits<double>::infinity();

  explicit RewardTracker(double a = 0.8) : alpha(a) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("EMA alpha must lie in (0, 1)");
  }
  bool empty() const noexcept { return smoothed.empty(); }
  double current() const {
    if (smoothed.empty()) throw StateError("reward tracker has no history");
    return smoothed.back();
  }
  void reset() {
    smoothed.clear();
    seen_min = std::numeric_limits<double>::infinity();
    seen_max = -std::numeric_limits<double>::infinity();
  }
};

inline double ema_update(RewardTracker& tracker, double raw) {
  if (!std::isfinite(raw)) throw NumericError("raw reward is not finite");
  const double next = tracker.smoothed.empty()
                          ? raw
                          : tracker.alpha * tracker.smoothed.back() + (1.0 - tracker.alpha) * raw;
  tracker.seen_min = std::min(tracker.seen_min, raw);
  tracker.seen_max = std::max(tracker.seen_max, raw);
  tracker.smoothed.push_back(next);
  return next;
}

inline double advantage(double smoothed_reward, double state_value) { return smoothed_reward - state_value; }

inline double prob_ratio(double new_log_prob, double old_log_prob) { return std::exp(new_log_prob - old_log_prob); }

inline double ppo_surrogate(double ratio, double adv, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * adv, clipped * adv);
}

// d ppo_surrogate / d ratio: adv while the unclipped branch is active, else 0.
inline double ppo_surrogate_dratio(double ratio, double adv, double epsilon) {
  if (adv > 0.0 && ratio > 1.0 + epsilon) return 0.0;
  if (adv < 0.0 && ratio < 1.0 - epsilon) return 0.0;
  return adv;
}

inline bool is_clipped(double ratio, double epsilon) {
  return ratio > 1.0 + epsilon || ratio < 1.0 - epsilon;
}

struct TrajectoryStep {
  std::size_t batch_index = 0;
  std::vector<std::size_t> candidate_ids;  // position in the candidate's class pool
  Matrix features;                         // controller input for this step
  std::vector<std::uint32_t> classes;
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  double value = 0.0;            // V(s_t) at collection time
  double raw_reward = std::numeric_limits<double>::quiet_NaN();
  double smoothed_reward = std::numeric_limits<double>::quiet_NaN();
  double advantage = std::numeric_limits<double>::quiet_NaN();

  bool complete() const {
    return std::isfinite(raw_reward) && std::isfinite(smoothed_reward) && std::isfinite(advantage) &&
           actions.size() == old_log_probs.size() && actions.size() == classes.size() &&
           features.rows() == actions.size();
  }
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;

  std::size_t candidate_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.actions.size();
    return n;
  }
  void require_complete() const {
    if (steps.empty()) throw StateError("trajectory has no steps");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!steps[i].complete()) throw StateError("trajectory step " + std::to_string(i) + " is incomplete");
    }
  }
};

struct PPOConfig {
  double epsilon = 0.2;
  std::size_t epochs = 4;
  double learning_rate = 2.5e-4;
  double value_loss_weight = 0.5;
  double entropy_weight = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t minibatch_steps = 1;  // trajectory steps per optimiser step
  double max_grad_norm = 0.0;       // 0 disables clipping

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("PPO epsilon must be > 0");
    if (epochs < 1) throw ConfigError("PPO epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (minibatch_steps < 1) throw ConfigError("minibatch_steps must be >= 1");
    if (value_loss_weight < 0.0 || entropy_weight < 0.0) throw ConfigError("loss weights must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  }
};

// Adaptive-moment optimiser; moments are keyed by parameter position, so the
// same ParamList order must be used on every step.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  explicit Adam(const PPOConfig& cfg) : Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon) {}

  // Ascent direction is the negative gradient (grads hold d loss / d param).
  void step(const ParamList& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (m_.size() != params.size()) throw StateError("Adam parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
        p.value[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      }
    }
  }
  std::uint64_t steps() const noexcept { return t_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

inline void clip_grad_norm(const ParamList& params, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = numkit::grad_norm(params);
  if (n > max_norm) {
    for (auto* p : params) p->grad *= max_norm / n;
  }
}

namespace detail {

// Elementwise min(r * A, clip(r) * A) over an n x 1 ratio column.
inline Var clipped_surrogate(Var ratio, std::vector<double> adv, double epsilon) {
  Tape& t = *ratio.tape;
  const Matrix& r = t.value(ratio);
  Matrix out(r.rows(), 1);
  for (std::size_t i = 0; i < r.rows(); ++i) out[i] = ppo_surrogate(r[i], adv[i], epsilon);
  return t.push(std::move(out), t.requires_grad(ratio.id), nullptr,
                [id = ratio.id, adv = std::move(adv), epsilon](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  const Matrix& r = t.value(id);
                  Matrix& gr = t.grad(id);
                  for (std::size_t i = 0; i < r.rows(); ++i) gr[i] += g[i] * ppo_surrogate_dratio(r[i], adv[i], epsilon);
                });
}

}  // namespace detail

struct ObjectiveStats {
  double surrogate = 0.0;   // mean clipped surrogate
  double value_loss = 0.0;  // mean (V - Q^)^2 over steps
  double entropy = 0.0;     // mean per-candidate entropy
  double ratio_sum = 0.0;
  double max_ratio_dev = 0.0;
  std::size_t clipped = 0;
  std::size_t terms = 0;
};

// PPO loss over a subset of trajectory steps:
//   -mean(surrogate) + c_v * mean_steps((V - Q^)^2) - c_e * mean(entropy),
// with means over all (step, candidate) pairs. When backward is set, the
// gradient is accumulated into the controller parameters.
inline double ppo_objective(ControllerParams& params, const Trajectory& traj, const PPOConfig& cfg,
                            std::span<const std::size_t> steps, bool backward, ObjectiveStats* stats = nullptr) {
  using namespace numkit::ops;
  std::size_t total = 0;
  for (auto s : steps) total += traj.steps.at(s).actions.size();
  if (total == 0) throw StateError("PPO objective over an empty set of candidates");
  const double inv_terms = 1.0 / static_cast<double>(total);
  const double inv_steps = 1.0 / static_cast<double>(steps.size());
  double loss = 0.0;
  ObjectiveStats local;
  for (auto s : steps) {
    const auto& step = traj.steps[s];
    Tape t;
    auto g = controller::controller_forward(t, step.features, step.classes, params);
    Var logp = log_softmax_rows(g.logits);
    Var chosen = pick_cols(logp, step.actions);
    Var ratio = exp(sub(chosen, t.constant(Matrix(step.actions.size(), 1, step.old_log_probs))));
    Var surr = detail::clipped_surrogate(ratio, std::vector<double>(step.actions.size(), step.advantage), cfg.epsilon);
    Var value_err = sub(g.value, t.constant(Matrix(1, 1, step.smoothed_reward)));
    Var ent = scale(sum(hadamard(exp(logp), logp)), -1.0);
    Var obj = add(add(scale(sum(surr), -inv_terms), scale(square(value_err), cfg.value_loss_weight * inv_steps)),
                  scale(ent, -cfg.entropy_weight * inv_terms));
    const double v = t.value(obj)[0];
    if (!std::isfinite(v)) {
      throw NumericError("non-finite PPO loss at trajectory step " + std::to_string(s) + " (batch " +
                         std::to_string(step.batch_index) + ")");
    }
    loss += v;
    const Matrix& rv = t.value(ratio);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      local.ratio_sum += rv[i];
      local.max_ratio_dev = std::max(local.max_ratio_dev, std::abs(rv[i] - 1.0));
      local.clipped += is_clipped(rv[i], cfg.epsilon);
    }
    local.terms += rv.size();
    local.surrogate += t.value(sum(surr))[0] * inv_terms;
    local.value_loss += t.value(square(value_err))[0] * inv_steps;
    local.entropy += t.value(ent)[0] * inv_terms;
    if (backward) t.backward(obj);
  }
  if (stats) *stats = local;
  return loss;
}

// -mean over (step, candidate) of log_prob * A_t, from the recorded log-probs.
inline double reinforce_loss(const Trajectory& traj) {
  traj.require_complete();
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& step : traj.steps) {
    for (double lp : step.old_log_probs) s += lp * step.advantage;
    n += step.old_log_probs.size();
  }
  if (n == 0) throw StateError("trajectory has no candidates");
  return -s / static_cast<double>(n);
}

// Same loss recomputed under the current parameters; with backward set the
// policy gradient is accumulated into the parameters. The value loss term
// (weight value_loss_weight) trains the baseline.
inline double reinforce_objective(ControllerParams& params, const Trajectory& traj, double value_loss_weight,
                                  bool backward) {
  using namespace numkit::ops;
  traj.require_complete();
  const double inv_terms = 1.0 / static_cast<double>(traj.candidate_count());
  const double inv_steps = 1.0 / static_cast<double>(traj.steps.size());
  double loss = 0.0;
  for (std::size_t s = 0; s < traj.steps.size(); ++s) {
    const auto& step = traj.steps[s];
    Tape t;
    auto g = controller::controller_forward(t, step.features, step.classes, params);
    Var chosen = pick_cols(log_softmax_rows(g.logits), step.actions);
    Var pg = scale(sum(chosen), -step.advantage * inv_terms);
    Var obj = pg;
    if (value_loss_weight > 0.0) {
      Var err = sub(g.value, t.constant(Matrix(1, 1, step.smoothed_reward)));
      obj = add(pg, scale(square(err), value_loss_weight * inv_steps));
    }
    const double v = t.value(obj)[0];
    if (!std::isfinite(v)) throw NumericError("non-finite REINFORCE loss at trajectory step " + std::to_string(s));
    loss += v;
    if (backward) t.backward(obj);
  }
  return loss;
}

struct UpdateStats {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double first_minibatch_max_ratio_dev = 0.0;
  double first_minibatch_clip_fraction = 0.0;
  std::size_t optimizer_steps = 0;
};

// K epochs over the trajectory; each epoch visits the steps in a shuffled
// order, minibatch_steps steps per optimiser step. Old log-probs come from
// the trajectory, i.e. the policy snapshot at collection time.
inline UpdateStats ppo_update(ControllerParams& params, const Trajectory& traj, const PPOConfig& cfg, Adam& adam,
                              RngStream& rng) {
  cfg.validate();
  traj.require_complete();
  auto plist = params.all();
  std::vector<std::size_t> order(traj.steps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  UpdateStats out;
  double ratio_sum = 0.0, value_loss = 0.0, entropy = 0.0;
  std::size_t clipped = 0, terms = 0, minibatches = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_steps) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_steps);
      std::span<const std::size_t> mb(order.data() + start, stop - start);
      numkit::zero_grads(plist);
      ObjectiveStats st;
      ppo_objective(params, traj, cfg, mb, true, &st);
      if (minibatches == 0) {
        out.first_minibatch_max_ratio_dev = st.max_ratio_dev;
        out.first_minibatch_clip_fraction = static_cast<double>(st.clipped) / static_cast<double>(st.terms);
      }
      ratio_sum += st.ratio_sum;
      clipped += st.clipped;
      terms += st.terms;
      value_loss += st.value_loss;
      entropy += st.entropy;
      ++minibatches;
      clip_grad_norm(plist, cfg.max_grad_norm);
      adam.step(plist);
      ++out.optimizer_steps;
    }
  }
  numkit::zero_grads(plist);
  out.mean_ratio = ratio_sum / static_cast<double>(terms);
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(terms);
  out.value_loss = value_loss / static_cast<double>(minibatches);
  out.entropy = entropy / static_cast<double>(minibatches);
  return out;
}

// One gradient pass over the whole trajectory.
inline UpdateStats reinforce_update(ControllerParams& params, const Trajectory& traj, const PPOConfig& cfg,
                                    Adam& adam) {
  cfg.validate();
  auto plist = params.all();
  numkit::zero_grads(plist);
  reinforce_objective(params, traj, cfg.value_loss_weight, true);
  clip_grad_norm(plist, cfg.max_grad_norm);
  adam.step(plist);
  numkit::zero_grads(plist);
  UpdateStats out;
  out.optimizer_steps = 1;
  double vl = 0.0;
  for (const auto& s : traj.steps) vl += (s.value - s.smoothed_reward) * (s.value - s.smoothed_reward);
  out.value_loss = vl / static_cast<double>(traj.steps.size());
  return out;
}

}  // namespace synsel::policy
