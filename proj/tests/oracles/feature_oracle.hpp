#pragma once

// Recount of the handcrafted features with plain nested loops: for every
// output cell, walk all actions and test membership from scratch.

#include <cmath>
#include <string>
#include <vector>

#include "sentinel/features.hpp"
#include "sentinel/subgraph.hpp"

namespace oracle {

inline std::vector<double> naive_handcrafted(const sentinel::RootedSubgraph& g, const sentinel::FeatureSchema& schema) {
  const sentinel::ActionRecord* root = nullptr;
  for (const auto& a : g.actions) {
    if (a.id == g.root_id) root = &a;
  }
  auto shares = [&](const sentinel::ActionRecord& a, const std::string& type) {
    for (const auto& rr : root->references) {
      if (rr.entity_type != type) continue;
      for (const auto& r : a.references) {
        if (r.entity_type == rr.entity_type && r.entity_id == rr.entity_id) return true;
      }
    }
    return false;
  };
  auto slog = [](double x) { return x == 0.0 ? 0.0 : (x > 0 ? 1.0 : -1.0) * std::log(1.0 + std::fabs(x)); };

  std::vector<double> raw;
  for (int cls = 0; cls < 3; ++cls) {  // user only, agent only, both
    for (const std::string& type : schema.action_types) {
      double count = 0, lo = 0, hi = 0;
      for (const auto& a : g.actions) {
        if (a.id == g.root_id || a.action_type != type) continue;
        const bool u = shares(a, schema.user_entity_type);
        const bool ag = shares(a, schema.agent_entity_type);
        const int c = u && ag ? 2 : (ag ? 1 : (u ? 0 : -1));
        if (c != cls) continue;
        const double dh = static_cast<double>(a.start_ms - root->start_ms) / 3'600'000.0;
        if (count == 0 || dh < lo) lo = count == 0 ? dh : std::min(lo, dh);
        if (count == 0 || dh > hi) hi = count == 0 ? dh : std::max(hi, dh);
        count += 1;
      }
      raw.push_back(slog(count));
      raw.push_back(count == 0 ? 0.0 : slog(lo));
      raw.push_back(count == 0 ? 0.0 : slog(hi));
    }
  }
  double norm = 0;
  for (double v : raw) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0) {
    raw.assign(raw.size(), 0.0);
    raw[0] = 1.0;
    return raw;
  }
  for (double& v : raw) v /= norm;
  return raw;
}

}  // namespace oracle
