#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/corpus.hpp"
#include "sentinel/subgraph.hpp"

namespace sentinel {

struct SamplerConfig {
  int max_steps = 2;        // T: deepest entity step that may still be expanded
  int per_type_limit = 10;  // M: closest actions taken per (entity, action type)
  std::set<std::string> blocked_after_first{"user"};
  std::set<std::string> sensitive_types{"DataTool.Query"};
  std::string agent_entity_type = "agent";
};

// Throws PreconditionError when T < 1 or M < 1.
void validate_sampler_config(const SamplerConfig& cfg);

// Keys: T, M, blocked_after_first, sensitive_types, optional agent_entity_type.
SamplerConfig sampler_config_from_json(const nlohmann::json& j);
nlohmann::json sampler_config_to_json(const SamplerConfig& cfg);
SamplerConfig load_sampler_config(const std::filesystem::path& path);

// Breadth-first expansion around `root_id`. Entities referenced by the root
// are step 1; entities first referenced by actions added while expanding a
// step-s entity are step s + 1. An entity is expanded iff its step <= T and,
// beyond step 1, its type is not blocked. Expanding an entity adds, for every
// action type, the M not-yet-added actions referencing it whose start is
// closest to the root start; ties go to the earlier start, then smaller id.
// Entities are expanded level by level, in key order within a level, and
// action types in lexicographic order. Entities beyond step T are not part of
// the result. Throws UnknownRoot.
RootedSubgraph sample_rooted_subgraph(const ActionStore& store, const std::string& root_id,
                                      const SamplerConfig& cfg);

// One subgraph per select_roots() result, in the same order.
std::vector<RootedSubgraph> sample_all(const ActionStore& store, const SamplerConfig& cfg);

}  // namespace sentinel
