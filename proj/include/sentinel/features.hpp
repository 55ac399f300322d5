#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sentinel/subgraph.hpp"

namespace sentinel {

// Unit-norm vector on the sphere in R^n.
struct Embedding {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

// Scales `raw` to unit length. The all-zero vector maps to the first basis
// vector so every embedding stays on the sphere.
Embedding normalize_embedding(std::vector<double> raw);

// sign(x) * ln(1 + |x|)
double signed_log(double x) noexcept;

enum class ShareClass { User = 0, Agent = 1, Both = 2 };
inline constexpr std::array<std::string_view, 3> kShareClassNames{"shares-user", "shares-agent",
                                                                  "shares-both"};

struct FeatureSchema {
  std::vector<std::string> action_types;
  std::string agent_entity_type = "agent";
  std::string user_entity_type = "user";

  // 3 values per (share class, action type).
  std::size_t dimension() const noexcept { return 3 * kShareClassNames.size() * action_types.size(); }
  // Offset of the [count, earliest, latest] triple for a cell.
  std::size_t offset(ShareClass c, std::size_t type_index) const noexcept {
    return 3 * (static_cast<std::size_t>(c) * action_types.size() + type_index);
  }
};

// Throws PreconditionError when the type list is empty or has duplicates.
void validate_schema(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const FeatureSchema& schema);
FeatureSchema load_schema(const std::filesystem::path& path);
// Every action type seen in the store, sorted.
FeatureSchema schema_from_store(const ActionStore& store);

// For each non-root action that shares the root's user entity, its agent
// entity, or both (exclusive classes), accumulate per action type the count
// and the earliest / latest start offset in hours relative to the root.
// Every value goes through signed_log; the vector is then L2-normalized.
// Actions whose type is outside the schema are ignored.
// Throws MissingRootEntity when the root lacks an agent or user reference.
Embedding handcrafted_embedding(const RootedSubgraph& g, const FeatureSchema& schema);

// JSON-lines rows {"id": ..., "vector": [...]}.
void write_embeddings(const std::filesystem::path& path, const std::map<std::string, Embedding>& rows);
std::map<std::string, Embedding> read_embeddings(const std::filesystem::path& path);

}  // namespace sentinel
