#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/corpus.hpp"

namespace sentinel {

struct SubgraphEntity {
  EntityKey key;
  int step = 1;  // entity hops from the root; root's own entities are step 1

  auto operator<=>(const SubgraphEntity&) const = default;
};

struct SubgraphEdge {
  std::string action_id;
  EntityKey entity;
  std::string relationship;

  auto operator<=>(const SubgraphEdge&) const = default;
};

// Bipartite neighbourhood of a root action. After canonicalize(), actions are
// ordered by (start, id), entities by key and edges lexicographically, so two
// subgraphs with the same content compare equal.
struct RootedSubgraph {
  std::string root_id;
  std::vector<ActionRecord> actions;
  std::vector<SubgraphEntity> entities;
  std::vector<SubgraphEdge> edges;
  std::string agent_id;
  std::int64_t day = 0;  // UTC days since the epoch of the root start
  std::vector<std::string> provenance;  // mutations applied, oldest first

  const ActionRecord& root() const;
  const ActionRecord* find_action(const std::string& id) const;
  const SubgraphEntity* find_entity(const EntityKey& key) const;

  bool operator==(const RootedSubgraph&) const = default;
};

void canonicalize(RootedSubgraph& g);

// UTC day index of a timestamp (floor division, so negative times work).
std::int64_t utc_day(TimestampMs t) noexcept;
std::string format_utc_day(std::int64_t day);
std::int64_t parse_utc_day(const std::string& text);

// Structural checks shared by sampled and mutated subgraphs: root present,
// edges only action<->entity with both endpoints present, every action
// reachable from the root, steps in [1, max_step] when max_step is given.
// Throws sentinel::Error naming the first violation.
void validate_subgraph(const RootedSubgraph& g, std::optional<int> max_step = std::nullopt);

// Signed hours from the root start to `a`'s start.
double delta_start_hours(const RootedSubgraph& g, const ActionRecord& a);

nlohmann::json subgraph_to_json(const RootedSubgraph& g);
RootedSubgraph subgraph_from_json(const nlohmann::json& j);

// One file per subgraph, named by the percent-encoded root id.
std::filesystem::path subgraph_file_name(const std::string& root_id);
void write_subgraph_dir(const std::filesystem::path& dir, const std::vector<RootedSubgraph>& gs);
// Sorted by (root start, root id).
std::vector<RootedSubgraph> read_subgraph_dir(const std::filesystem::path& dir);

}  // namespace sentinel
