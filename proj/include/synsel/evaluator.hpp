#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "synsel/errors.hpp"
#include "synsel/featurestore.hpp"
#include "synsel/numkit/grad_check.hpp"
#include "synsel/numkit/matrix.hpp"
#include "synsel/numkit/param.hpp"
#include "synsel/numkit/rng.hpp"

namespace synsel::evaluator {

using numkit::Matrix;
using numkit::ParamList;
using numkit::ParamTensor;
using numkit::RngStream;

enum class ModelKind { SoftmaxRegression, OneHiddenLayer };

inline const char* to_string(ModelKind m) {
  return m == ModelKind::SoftmaxRegression ? "softmax-regression" : "one-hidden-layer";
}

inline ModelKind model_from_string(const std::string& s) {
  if (s == "softmax-regression") return ModelKind::SoftmaxRegression;
  if (s == "one-hidden-layer") return ModelKind::OneHiddenLayer;
  throw ConfigError("unknown classifier model '" + s + "' (softmax-regression | one-hidden-layer)");
}

struct ClassifierConfig {
  ModelKind model = ModelKind::SoftmaxRegression;
  std::size_t hidden_width = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double weight_decay = 1e-3;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (epochs < 5) throw ConfigError("classifier epochs must be >= 5 (reward reads the last five), got " +
                                      std::to_string(epochs));
    if (batch_size == 0) throw ConfigError("classifier batch_size must be positive");
    if (model == ModelKind::OneHiddenLayer && hidden_width == 0) throw ConfigError("hidden_width must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("classifier learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

// Softmax regression, or one ReLU hidden layer followed by softmax.
class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, std::size_t dim, std::size_t classes, RngStream& rng) : cfg_(cfg) {
    auto weight = [&](std::string name, std::size_t in, std::size_t out) {
      return ParamTensor::uniform(std::move(name), in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    };
    if (cfg.model == ModelKind::SoftmaxRegression) {
      w1_ = weight("clf.w", dim, classes);
      b1_ = ParamTensor::constant("clf.b", 1, classes, 0.0);
    } else {
      w1_ = weight("clf.w1", dim, cfg.hidden_width);
      b1_ = ParamTensor::constant("clf.b1", 1, cfg.hidden_width, 0.0);
      w2_ = weight("clf.w2", cfg.hidden_width, classes);
      b2_ = ParamTensor::constant("clf.b2", 1, classes, 0.0);
    }
  }

  ParamList params() {
    ParamList out{&w1_, &b1_};
    if (w2_.defined()) {
      out.push_back(&w2_);
      out.push_back(&b2_);
    }
    return out;
  }

  Matrix probabilities(const Matrix& x) const {
    if (!w2_.defined()) return numkit::softmax_rows(affine(x, w1_, b1_));
    return numkit::softmax_rows(affine(numkit::relu(affine(x, w1_, b1_)), w2_, b2_));
  }

  // Mean cross-entropy plus (weight_decay / 2) * sum of squared weights.
  // With backward set, gradients are accumulated into params().
  double loss(const Matrix& x, std::span<const std::uint32_t> labels, bool backward) {
    const std::size_t n = x.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix hidden;
    Matrix logits;
    if (!w2_.defined()) {
      logits = affine(x, w1_, b1_);
    } else {
      hidden = numkit::relu(affine(x, w1_, b1_));
      logits = affine(hidden, w2_, b2_);
    }
    const Matrix logp = numkit::log_softmax_rows(logits);
    double ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) ce -= logp(i, labels[i]);
    ce *= inv_n;
    double reg = 0.0;
    for (const ParamTensor* w : {&w1_, &w2_})
      if (w->defined())
        for (double v : w->value.values()) reg += v * v;
    const double total = ce + 0.5 * cfg_.weight_decay * reg;
    if (!backward) return total;

    Matrix dlogits(n, logits.cols());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < logits.cols(); ++c) dlogits(i, c) = std::exp(logp(i, c)) * inv_n;
      dlogits(i, labels[i]) -= inv_n;
    }
    if (!w2_.defined()) {
      accumulate(x, dlogits, w1_, b1_);
    } else {
      Matrix dhidden = numkit::matmul_nt(dlogits, w2_.value);
      for (std::size_t i = 0; i < dhidden.size(); ++i)
        if (hidden[i] <= 0.0) dhidden[i] = 0.0;
      accumulate(hidden, dlogits, w2_, b2_);
      accumulate(x, dhidden, w1_, b1_);
    }
    return total;
  }

  void sgd_step(double lr) {
    for (ParamTensor* p : params()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
      p->zero_grad();
    }
  }

 private:
  static Matrix affine(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
    Matrix out = numkit::matmul(x, w.value);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += b.value[j];
    }
    return out;
  }
  void accumulate(const Matrix& in, const Matrix& dout, ParamTensor& w, ParamTensor& b) const {
    w.grad += numkit::matmul_tn(in, dout);
    w.grad += w.value * cfg_.weight_decay;
    for (std::size_t i = 0; i < dout.rows(); ++i)
      for (std::size_t j = 0; j < dout.cols(); ++j) b.grad[j] += dout(i, j);
  }

  ClassifierConfig cfg_;
  ParamTensor w1_, b1_, w2_, b2_;
};

inline std::vector<std::uint32_t> predict(const Matrix& probs) {
  std::vector<std::uint32_t> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    // max_element returns the first maximum: ties go to the lowest class id.
    out[i] = static_cast<std::uint32_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline double accuracy(const Matrix& probs, std::span<const std::uint32_t> labels) {
  const auto pred = predict(probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct TrainingCurve {
  std::vector<double> val_accuracy;  // one entry per epoch
  std::shared_ptr<Classifier> model;
};

// Minibatch gradient descent on cross-entropy. Deterministic for a given rng.
inline TrainingCurve train_classifier(const FeatureSet& train, const FeatureSet& val, const ClassifierConfig& cfg,
                                      RngStream& rng) {
  cfg.validate();
  if (train.class_count < 2) throw ValidationError("classifier needs at least two classes");
  if (train.dim() != val.dim() || train.class_count != val.class_count) {
    throw ValidationError("train and validation sets disagree on dimension or class count");
  }
  if (train.size() == 0 || val.size() == 0) throw ValidationError("empty training or validation set");
  TrainingCurve curve;
  curve.model = std::make_shared<Classifier>(cfg, train.dim(), train.class_count, rng);
  Classifier& model = *curve.model;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t d = train.dim();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      Matrix xb(stop - start, d);
      std::vector<std::uint32_t> yb(stop - start);
      for (std::size_t r = start; r < stop; ++r) {
        auto src = train.features.row(order[r]);
        std::copy(src.begin(), src.end(), xb.row(r - start).begin());
        yb[r - start] = train.labels[order[r]];
      }
      const double l = model.loss(xb, yb, true);
      if (!std::isfinite(l)) throw NumericError("non-finite classifier loss in epoch " + std::to_string(epoch));
      model.sgd_step(cfg.learning_rate);
    }
    curve.val_accuracy.push_back(accuracy(model.probabilities(val.features), val.labels));
  }
  return curve;
}

// Maximum validation accuracy over the last five epochs.
inline double reward_from_curve(const TrainingCurve& curve) {
  const auto& acc = curve.val_accuracy;
  if (acc.size() < 5) throw ValidationError("training curve has " + std::to_string(acc.size()) + " epochs, need >= 5");
  return *std::max_element(acc.end() - 5, acc.end());
}

struct ClassMetrics {
  std::size_t class_id = 0;
  std::size_t support = 0;
  bool included = true;  // false when the class is absent from the labels
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::size_t n_test = 0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> excluded_classes;
  std::string aggregation = "macro-one-vs-rest";
};

// Mann-Whitney AUC with mid-ranks for ties; equals the trapezoidal ROC area.
inline double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t r = i; r < j; ++r)
      if (positive[idx[r]]) rank_sum += mid;
    i = j;
  }
  for (bool p : positive) n_pos += p;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC needs both positive and negative samples");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline MetricsReport compute_metrics(const Matrix& scores, std::span<const std::uint32_t> labels) {
  const std::size_t n = scores.rows(), k = scores.cols();
  if (n == 0 || n != labels.size()) throw DimensionError("scores rows must match label count and be non-zero");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : scores.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-9) throw ValidationError("score row " + std::to_string(i) + " does not sum to 1");
    if (labels[i] >= k) throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
  }
  MetricsReport rep;
  rep.n_test = n;
  rep.confusion.assign(k, std::vector<std::size_t>(k, 0));
  const auto pred = predict(scores);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ++rep.confusion[labels[i]][pred[i]];
    hit += pred[i] == labels[i];
  }
  rep.accuracy = static_cast<double>(hit) / static_cast<double>(n);

  std::size_t included = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics cm;
    cm.class_id = c;
    std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
    std::vector<bool> positive(n);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      positive[i] = labels[i] == c;
      col[i] = scores(i, c);
      const bool said = pred[i] == c;
      if (positive[i]) (said ? tp : fn)++;
      else (said ? fp : tn)++;
    }
    cm.support = tp + fn;
    if (cm.support == 0 || cm.support == n) {
      cm.included = false;
      rep.excluded_classes.push_back(c);
    } else {
      // vector<bool> has no contiguous storage; copy into a plain buffer.
      std::unique_ptr<bool[]> pos(new bool[n]);
      for (std::size_t i = 0; i < n; ++i) pos[i] = positive[i];
      cm.auc = binary_auc(col, std::span<const bool>(pos.get(), n));
      cm.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
      cm.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
      rep.auc += cm.auc;
      rep.sensitivity += cm.sensitivity;
      rep.specificity += cm.specificity;
      ++included;
    }
    rep.per_class.push_back(cm);
  }
  if (included > 0) {
    rep.auc /= static_cast<double>(included);
    rep.sensitivity /= static_cast<double>(included);
    rep.specificity /= static_cast<double>(included);
  }
  return rep;
}

inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = round6(r.accuracy);
  j["auc"] = round6(r.auc);
  j["sensitivity"] = round6(r.sensitivity);
  j["specificity"] = round6(r.specificity);
  j["aggregation"] = r.aggregation;
  j["n_test"] = r.n_test;
  auto pc = nlohmann::ordered_json::array();
  for (const auto& c : r.per_class) {
    nlohmann::ordered_json e;
    e["class"] = c.class_id;
    e["support"] = c.support;
    e["included"] = c.included;
    e["auc"] = round6(c.auc);
    e["sensitivity"] = round6(c.sensitivity);
    e["specificity"] = round6(c.specificity);
    pc.push_back(std::move(e));
  }
  j["per_class"] = std::move(pc);
  j["confusion"] = r.confusion;
  j["excluded_classes"] = r.excluded_classes;
  return j;
}

// Original training rows followed by the selected rows.
inline FeatureSet expand(const FeatureSet& original, const FeatureSet& selected) {
  if (selected.size() == 0) return original;
  if (selected.dim() != original.dim()) {
    throw DimensionError("selected features have dimension " + std::to_string(selected.dim()) + ", expected " +
                         std::to_string(original.dim()));
  }
  FeatureSet out;
  out.class_count = original.class_count;
  out.role = SplitRole::Train;
  out.features = Matrix(original.size() + selected.size(), original.dim());
  std::copy(original.features.values().begin(), original.features.values().end(), out.features.data());
  std::copy(selected.features.values().begin(), selected.features.values().end(),
            out.features.data() + original.features.size());
  out.labels = original.labels;
  out.labels.insert(out.labels.end(), selected.labels.begin(), selected.labels.end());
  return out;
}

struct SelectionEvaluation {
  double reward = 0.0;
  MetricsReport test_report;
  std::vector<double> val_curve;
};

// Trains from scratch on original + selected and reports the validation
// reward and the test metrics of the final model. `selected` may be empty.
inline SelectionEvaluation evaluate_selection(const FeatureSet& original, const FeatureSet& selected,
                                              const FeatureSet& val, const FeatureSet& test,
                                              const ClassifierConfig& cfg, RngStream rng) {
  const FeatureSet train = expand(original, selected);
  auto curve = train_classifier(train, val, cfg, rng);
  SelectionEvaluation out;
  out.reward = reward_from_curve(curve);
  out.test_report = compute_metrics(curve.model->probabilities(test.features), test.labels);
  out.val_curve = std::move(curve.val_accuracy);
  return out;
}

// Reward only (no test pass), as used inside the RL loop.
inline double selection_reward(const FeatureSet& original, const FeatureSet& selected, const FeatureSet& val,
                               const ClassifierConfig& cfg, RngStream rng) {
  const FeatureSet train = expand(original, selected);
  return reward_from_curve(train_classifier(train, val, cfg, rng));
}

}  // namespace synsel::evaluator
