#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "json.hpp"

#include "transnet/evalkit/evaluate.hpp"

namespace transnet::evalkit {

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"mrr", m.mrr}, {"hits@1", m.hits1}, {"hits@5", m.hits5}, {"hits@10", m.hits10}, {"queries", m.queries}};
}

inline nlohmann::json report_json(const MetricsReport& r) {
  nlohmann::json j = metrics_json(r.overall);
  j["split"] = r.split;
  j["random_baseline_mrr"] = r.baseline.mrr;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : r.per_relation) per[name] = metrics_json(m);
  j["relations"] = per;
  return j;
}

inline std::string report_text(const MetricsReport& r) {
  std::size_t w = 8;
  for (const auto& [name, m] : r.per_relation) w = std::max(w, name.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s\n", static_cast<int>(w), "relation", "queries", "mrr",
                "hits@1", "hits@5", "hits@10");
  os << buf;
  auto line = [&](const std::string& name, const Metrics& m) {
    std::snprintf(buf, sizeof buf, "%-*s %8zu %8.4f %8.4f %8.4f %8.4f\n", static_cast<int>(w), name.c_str(), m.queries,
                  m.mrr, m.hits1, m.hits5, m.hits10);
    os << buf;
  };
  for (const auto& [name, m] : r.per_relation) line(name, m);
  line("[" + r.split + "]", r.overall);
  std::snprintf(buf, sizeof buf, "random-ranking mrr %.4f\n", r.baseline.mrr);
  os << buf;
  return os.str();
}

inline std::string relation_tsv(const MetricsReport& r) {
  std::ostringstream os;
  os << "relation\tqueries\tmrr\thits1\thits5\thits10\n";
  char buf[256];
  for (const auto& [name, m] : r.per_relation) {
    std::snprintf(buf, sizeof buf, "\t%zu\t%.6f\t%.6f\t%.6f\t%.6f\n", m.queries, m.mrr, m.hits1, m.hits5, m.hits10);
    os << name << buf;
  }
  return os.str();
}

}  // namespace transnet::evalkit
