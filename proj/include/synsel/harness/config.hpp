#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "synsel/baselines.hpp"
#include "synsel/controller.hpp"
#include "synsel/evaluator.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/harness/task.hpp"
#include "synsel/policy.hpp"

namespace synsel::harness {

enum class Algorithm { Ppo, Reinforce };
enum class RewardFrequency { PerBatch, PerEpisode };

inline const char* to_string(Algorithm a) { return a == Algorithm::Ppo ? "ppo" : "reinforce"; }
inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ppo") return Algorithm::Ppo;
  if (s == "reinforce") return Algorithm::Reinforce;
  throw ConfigError("unknown algorithm '" + s + "' (ppo | reinforce)");
}
inline const char* to_string(RewardFrequency r) { return r == RewardFrequency::PerBatch ? "per-batch" : "per-episode"; }

struct ExperimentConfig {
  TaskConfig task;
  controller::ControllerConfig controller;
  policy::PPOConfig ppo;
  evaluator::ClassifierConfig classifier;
  std::size_t batch_count = 8;
  std::size_t iterations = 100;
  Algorithm algorithm = Algorithm::Ppo;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  RewardFrequency reward_frequency = RewardFrequency::PerBatch;
  double ema_alpha = 0.8;
  double augmentation_ratio = 0.5;
  baselines::PercentileBand centroid_band{10.0, 90.0};
  baselines::FillOrder centroid_fill = baselines::FillOrder::NearestFirst;
  SortOrder sort_order = SortOrder::NearToFar;
  std::size_t histogram_bins = 10;
  // Rewards are measured as the gain over the no-augmentation validation
  // accuracy. A constant shift, so the optimal policy is unchanged, but the
  // value baseline starts near the right scale.
  bool relative_reward = true;

  // Controller dims that must follow the task.
  controller::ControllerConfig resolved_controller() const {
    auto c = controller;
    c.input_dim = task.dim;
    c.class_count = task.classes;
    return c;
  }

  void validate() const {
    task.validate();
    resolved_controller().validate();
    ppo.validate();
    classifier.validate();
    if (batch_count < 1) throw ConfigError("batch_count must be >= 1");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0, 1)");
    if (!(augmentation_ratio > 0.0 && augmentation_ratio <= 1.0)) throw ConfigError("augmentation_ratio must lie in (0, 1]");
    if (histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
    if (task.pool_per_class < batch_count) throw ConfigError("pool_per_class must be >= batch_count");
  }
};

namespace config_detail {

using nlohmann::json;

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace config_detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using config_detail::check_keys;
  using config_detail::read;
  ExperimentConfig cfg;
  check_keys(j,
             {"task", "controller", "ppo", "classifier", "batch_count", "iterations", "algorithm", "seeds",
              "reward_frequency", "ema_alpha", "augmentation_ratio", "centroid_band", "centroid_fill", "sort_order",
              "histogram_bins", "relative_reward"},
             "config");
  if (j.contains("task")) {
    const auto& t = j["task"];
    check_keys(t,
               {"classes", "dim", "train_per_class", "val_per_class", "test_per_class", "separation", "within_std",
                "pool_per_class", "corruption_rate", "corruption_model", "mean_shift", "noise_inflation",
                "master_seed"},
               "task");
    auto& c = cfg.task;
    read(t, "classes", c.classes, "task");
    read(t, "dim", c.dim, "task");
    read(t, "train_per_class", c.train_per_class, "task");
    read(t, "val_per_class", c.val_per_class, "task");
    read(t, "test_per_class", c.test_per_class, "task");
    read(t, "separation", c.separation, "task");
    read(t, "within_std", c.within_std, "task");
    read(t, "pool_per_class", c.pool_per_class, "task");
    read(t, "corruption_rate", c.corruption_rate, "task");
    std::string model = to_string(c.corruption);
    read(t, "corruption_model", model, "task");
    c.corruption = corruption_from_string(model);
    read(t, "mean_shift", c.mean_shift, "task");
    read(t, "noise_inflation", c.noise_inflation, "task");
    read(t, "master_seed", c.master_seed, "task");
  }
  if (j.contains("controller")) {
    const auto& t = j["controller"];
    check_keys(t,
               {"variant", "model_dim", "heads", "key_dim", "value_dim", "layers", "ffn_hidden", "class_embedding_dim",
                "init_scale", "use_positions", "layer_norm", "zero_policy_head", "per_class_sequences"},
               "controller");
    auto& c = cfg.controller;
    std::string variant = controller::to_string(c.variant);
    read(t, "variant", variant, "controller");
    c.variant = controller::variant_from_string(variant);
    read(t, "model_dim", c.model_dim, "controller");
    read(t, "heads", c.heads, "controller");
    read(t, "key_dim", c.key_dim, "controller");
    read(t, "value_dim", c.value_dim, "controller");
    read(t, "layers", c.layers, "controller");
    read(t, "ffn_hidden", c.ffn_hidden, "controller");
    read(t, "class_embedding_dim", c.class_embedding_dim, "controller");
    read(t, "init_scale", c.init_scale, "controller");
    read(t, "use_positions", c.use_positions, "controller");
    read(t, "layer_norm", c.layer_norm, "controller");
    read(t, "zero_policy_head", c.zero_policy_head, "controller");
    read(t, "per_class_sequences", c.per_class_sequences, "controller");
  }
  if (j.contains("ppo")) {
    const auto& t = j["ppo"];
    check_keys(t,
               {"epsilon", "epochs", "learning_rate", "value_loss_weight", "entropy_weight", "beta1", "beta2",
                "adam_epsilon", "minibatch_steps", "max_grad_norm"},
               "ppo");
    auto& c = cfg.ppo;
    read(t, "epsilon", c.epsilon, "ppo");
    read(t, "epochs", c.epochs, "ppo");
    read(t, "learning_rate", c.learning_rate, "ppo");
    read(t, "value_loss_weight", c.value_loss_weight, "ppo");
    read(t, "entropy_weight", c.entropy_weight, "ppo");
    read(t, "beta1", c.beta1, "ppo");
    read(t, "beta2", c.beta2, "ppo");
    read(t, "adam_epsilon", c.adam_epsilon, "ppo");
    read(t, "minibatch_steps", c.minibatch_steps, "ppo");
    read(t, "max_grad_norm", c.max_grad_norm, "ppo");
  }
  if (j.contains("classifier")) {
    const auto& t = j["classifier"];
    check_keys(t, {"model", "hidden_width", "epochs", "batch_size", "learning_rate", "weight_decay", "init_seed"},
               "classifier");
    auto& c = cfg.classifier;
    std::string model = evaluator::to_string(c.model);
    read(t, "model", model, "classifier");
    c.model = evaluator::model_from_string(model);
    read(t, "hidden_width", c.hidden_width, "classifier");
    read(t, "epochs", c.epochs, "classifier");
    read(t, "batch_size", c.batch_size, "classifier");
    read(t, "learning_rate", c.learning_rate, "classifier");
    read(t, "weight_decay", c.weight_decay, "classifier");
    read(t, "init_seed", c.init_seed, "classifier");
  }
  read(j, "batch_count", cfg.batch_count, "config");
  read(j, "iterations", cfg.iterations, "config");
  std::string algorithm = to_string(cfg.algorithm);
  read(j, "algorithm", algorithm, "config");
  cfg.algorithm = algorithm_from_string(algorithm);
  read(j, "seeds", cfg.seeds, "config");
  std::string freq = to_string(cfg.reward_frequency);
  read(j, "reward_frequency", freq, "config");
  if (freq == "per-batch") cfg.reward_frequency = RewardFrequency::PerBatch;
  else if (freq == "per-episode") cfg.reward_frequency = RewardFrequency::PerEpisode;
  else throw ConfigError("unknown reward_frequency '" + freq + "' (per-batch | per-episode)");
  read(j, "ema_alpha", cfg.ema_alpha, "config");
  read(j, "augmentation_ratio", cfg.augmentation_ratio, "config");
  if (j.contains("centroid_band")) {
    std::vector<double> band;
    read(j, "centroid_band", band, "config");
    if (band.size() != 2) throw ConfigError("centroid_band must be [low, high]");
    cfg.centroid_band = {band[0], band[1]};
  }
  std::string fill = cfg.centroid_fill == baselines::FillOrder::NearestFirst ? "nearest-first" : "band-center-first";
  read(j, "centroid_fill", fill, "config");
  if (fill == "nearest-first") cfg.centroid_fill = baselines::FillOrder::NearestFirst;
  else if (fill == "band-center-first") cfg.centroid_fill = baselines::FillOrder::BandCenterFirst;
  else throw ConfigError("unknown centroid_fill '" + fill + "'");
  std::string order = cfg.sort_order == SortOrder::NearToFar ? "near-to-far" : "far-to-near";
  read(j, "sort_order", order, "config");
  if (order == "near-to-far") cfg.sort_order = SortOrder::NearToFar;
  else if (order == "far-to-near") cfg.sort_order = SortOrder::FarToNear;
  else throw ConfigError("unknown sort_order '" + order + "'");
  read(j, "histogram_bins", cfg.histogram_bins, "config");
  read(j, "relative_reward", cfg.relative_reward, "config");
  cfg.validate();
  return cfg;
}

// Full echo of a configuration, every key present, in a fixed order.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  const auto& t = cfg.task;
  j["task"] = {{"classes", t.classes},
               {"dim", t.dim},
               {"train_per_class", t.train_per_class},
               {"val_per_class", t.val_per_class},
               {"test_per_class", t.test_per_class},
               {"separation", t.separation},
               {"within_std", t.within_std},
               {"pool_per_class", t.pool_per_class},
               {"corruption_rate", t.corruption_rate},
               {"corruption_model", to_string(t.corruption)},
               {"mean_shift", t.mean_shift},
               {"noise_inflation", t.noise_inflation},
               {"master_seed", t.master_seed}};
  const auto& c = cfg.controller;
  j["controller"] = {{"variant", controller::to_string(c.variant)},
                     {"model_dim", c.model_dim},
                     {"heads", c.heads},
                     {"key_dim", c.key_dim},
                     {"value_dim", c.value_dim},
                     {"layers", c.layers},
                     {"ffn_hidden", c.ffn_hidden},
                     {"class_embedding_dim", c.class_embedding_dim},
                     {"init_scale", c.init_scale},
                     {"use_positions", c.use_positions},
                     {"layer_norm", c.layer_norm},
                     {"zero_policy_head", c.zero_policy_head},
                     {"per_class_sequences", c.per_class_sequences}};
  const auto& p = cfg.ppo;
  j["ppo"] = {{"epsilon", p.epsilon},
              {"epochs", p.epochs},
              {"learning_rate", p.learning_rate},
              {"value_loss_weight", p.value_loss_weight},
              {"entropy_weight", p.entropy_weight},
              {"beta1", p.beta1},
              {"beta2", p.beta2},
              {"adam_epsilon", p.adam_epsilon},
              {"minibatch_steps", p.minibatch_steps},
              {"max_grad_norm", p.max_grad_norm}};
  const auto& k = cfg.classifier;
  j["classifier"] = {{"model", evaluator::to_string(k.model)},
                     {"hidden_width", k.hidden_width},
                     {"epochs", k.epochs},
                     {"batch_size", k.batch_size},
                     {"learning_rate", k.learning_rate},
                     {"weight_decay", k.weight_decay},
                     {"init_seed", k.init_seed}};
  j["batch_count"] = cfg.batch_count;
  j["iterations"] = cfg.iterations;
  j["algorithm"] = to_string(cfg.algorithm);
  j["seeds"] = cfg.seeds;
  j["reward_frequency"] = to_string(cfg.reward_frequency);
  j["ema_alpha"] = cfg.ema_alpha;
  j["augmentation_ratio"] = cfg.augmentation_ratio;
  j["centroid_band"] = {cfg.centroid_band.low, cfg.centroid_band.high};
  j["centroid_fill"] = cfg.centroid_fill == baselines::FillOrder::NearestFirst ? "nearest-first" : "band-center-first";
  j["sort_order"] = cfg.sort_order == SortOrder::NearToFar ? "near-to-far" : "far-to-near";
  j["histogram_bins"] = cfg.histogram_bins;
  j["relative_reward"] = cfg.relative_reward;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace synsel::harness
