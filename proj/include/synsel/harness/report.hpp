#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "synsel/harness/config.hpp"
#include "synsel/harness/experiment.hpp"

namespace synsel::harness {

inline const std::vector<std::pair<std::string, double evaluator::MetricsReport::*>>& report_metrics() {
  static const std::vector<std::pair<std::string, double evaluator::MetricsReport::*>> m{
      {"accuracy", &evaluator::MetricsReport::accuracy},
      {"auc", &evaluator::MetricsReport::auc},
      {"sensitivity", &evaluator::MetricsReport::sensitivity},
      {"specificity", &evaluator::MetricsReport::specificity}};
  return m;
}

inline nlohmann::ordered_json to_json(const Summary& s) {
  return {{"mean", evaluator::round6(s.mean)},
          {"std", evaluator::round6(s.std)},
          {"min", evaluator::round6(s.min)},
          {"max", evaluator::round6(s.max)}};
}

inline nlohmann::ordered_json to_json(const std::vector<HistogramRow>& rows) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    out.push_back({{"class", r.class_id},
                   {"bin_lo", evaluator::round6(r.bin_lo)},
                   {"bin_hi", evaluator::round6(r.bin_hi)},
                   {"count", r.count}});
  }
  return out;
}

// Canonical report: no timestamps or host data, fixed key order, values
// rounded to six decimals, so identical runs give identical bytes.
inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(r.config);
  j["arms"] = r.arm_names;
  auto summary = nlohmann::ordered_json::object();
  for (const auto& arm : r.arm_names) {
    nlohmann::ordered_json a;
    for (const auto& [name, field] : report_metrics()) a[name] = to_json(summarize(r.metric(arm, field)));
    summary[arm] = std::move(a);
  }
  j["summary"] = std::move(summary);
  auto seeds = nlohmann::ordered_json::array();
  for (const auto& s : r.seeds) {
    nlohmann::ordered_json e;
    e["seed"] = s.seed;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(s.task_checksum));
    e["task_checksum"] = hex;
    e["pool_corrupted_fraction"] = evaluator::round6(s.pool_corrupted_fraction);
    auto arms = nlohmann::ordered_json::object();
    for (const auto& a : s.arms) {
      nlohmann::ordered_json x;
      x["selected"] = a.selected;
      x["corrupted_fraction"] = evaluator::round6(a.corrupted_fraction);
      x["metrics"] = evaluator::to_json(a.metrics);
      arms[a.method] = std::move(x);
    }
    e["arms"] = std::move(arms);
    e["keep_rate"] = evaluator::round6(s.keep_rate);
    std::vector<double> rt;
    for (double v : s.reward_trace) rt.push_back(evaluator::round6(v));
    e["reward_trace"] = rt;
    e["selected_trace"] = s.selected_trace;
    std::vector<double> ct;
    for (double v : s.corrupted_trace) ct.push_back(evaluator::round6(v));
    e["corrupted_trace"] = ct;
    e["histogram"] = to_json(s.histogram);
    e["pool_histogram"] = to_json(s.pool_histogram);
    seeds.push_back(std::move(e));
  }
  j["seeds"] = std::move(seeds);
  return j;
}

inline std::string canonical_dump(const ExperimentReport& r) { return to_json(r).dump(2) + "\n"; }

namespace report_detail {

inline std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline void require_report(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("arms") || !j.contains("summary")) {
    throw FormatError("not a comparison report (missing 'arms' or 'summary')");
  }
}

}  // namespace report_detail

// Mean +- std per arm and metric.
inline std::string render_table(const nlohmann::json& j) {
  report_detail::require_report(j);
  std::ostringstream os;
  const char* metrics[] = {"accuracy", "auc", "sensitivity", "specificity"};
  std::size_t width = 6;
  for (const auto& a : j["arms"]) width = std::max(width, a.get<std::string>().size());
  os << std::string(width, ' ');
  for (const char* m : metrics) {
    std::string h = m;
    os << "  " << h << std::string(h.size() < 17 ? 17 - h.size() : 0, ' ');
  }
  os << '\n';
  for (const auto& a : j["arms"]) {
    const auto name = a.get<std::string>();
    os << name << std::string(width - name.size(), ' ');
    for (const char* m : metrics) {
      const auto& s = j["summary"][name][m];
      std::string cell = report_detail::fmt(s["mean"].get<double>()) + " +- " + report_detail::fmt(s["std"].get<double>());
      os << "  " << cell << std::string(cell.size() < 17 ? 17 - cell.size() : 0, ' ');
    }
    os << '\n';
  }
  return os.str();
}

inline std::string render_csv(const nlohmann::json& j) {
  report_detail::require_report(j);
  std::ostringstream os;
  os << "method,metric,mean,std,min,max\n";
  for (const auto& a : j["arms"]) {
    const auto name = a.get<std::string>();
    for (const auto& [metric, s] : j["summary"][name].items()) {
      os << name << ',' << metric << ',' << report_detail::fmt(s["mean"].get<double>(), 6) << ','
         << report_detail::fmt(s["std"].get<double>(), 6) << ',' << report_detail::fmt(s["min"].get<double>(), 6)
         << ',' << report_detail::fmt(s["max"].get<double>(), 6) << '\n';
    }
  }
  return os.str();
}

}  // namespace synsel::harness
