#pragma once

// Action records and the in-memory graph store built from a JSON-lines
// corpus. Entities have no records of their own: an entity exists because
// some action references it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace sentinel {

using TimestampMs = std::int64_t;

inline constexpr TimestampMs kMillisPerHour = 3'600'000;
inline constexpr TimestampMs kMillisPerDay = 24 * kMillisPerHour;

struct EntityKey {
  std::string type;
  std::string id;

  auto operator<=>(const EntityKey&) const = default;
};

struct EntityKeyHash {
  std::size_t operator()(const EntityKey& k) const noexcept {
    const std::size_t h = std::hash<std::string>{}(k.type);
    return h ^ (std::hash<std::string>{}(k.id) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  }
};

struct EntityRef {
  std::string entity_type;
  std::string entity_id;
  std::string relationship;

  EntityKey key() const { return {entity_type, entity_id}; }
  auto operator<=>(const EntityRef&) const = default;
};

struct ActionRecord {
  std::string id;
  std::string action_type;
  TimestampMs start_ms = 0;
  TimestampMs end_ms = 0;
  std::vector<EntityRef> references;

  bool references_entity(const EntityKey& key) const;
  bool operator==(const ActionRecord&) const = default;
};

// Ordering used everywhere an action list must be deterministic.
inline bool start_then_id_less(const ActionRecord& a, const ActionRecord& b) {
  if (a.start_ms != b.start_ms) return a.start_ms < b.start_ms;
  return a.id < b.id;
}

// Throws MalformedRecord. `base_offset` is added to reported byte offsets so
// file loaders can report positions relative to the start of the file.
ActionRecord parse_action_record(std::string_view line, std::size_t base_offset = 0);
ActionRecord action_from_json(const nlohmann::json& j);
nlohmann::json action_to_json(const ActionRecord& a);
std::string serialize_action_record(const ActionRecord& a);

// Checks the record invariants; throws MalformedRecord with offset 0.
void validate_action_record(const ActionRecord& a);

class ActionStore {
 public:
  // Index position of an action inside actions().
  using ActionIndex = std::size_t;
  // action_type -> actions referencing the entity, sorted by (start, id).
  using TypeBuckets = std::map<std::string, std::vector<ActionIndex>>;

  ActionStore() = default;
  // Throws DuplicateActionId. Records are assumed already validated.
  explicit ActionStore(std::vector<ActionRecord> actions);

  const std::vector<ActionRecord>& actions() const noexcept { return actions_; }
  std::size_t size() const noexcept { return actions_.size(); }

  const ActionRecord* find(std::string_view id) const;
  const ActionRecord& at(ActionIndex i) const { return actions_.at(i); }

  // nullptr when no action references the entity.
  const TypeBuckets* buckets(const EntityKey& key) const;
  std::size_t entity_count() const noexcept { return entity_index_.size(); }

  void for_each_entity(const std::function<void(const EntityKey&, const TypeBuckets&)>& fn) const;

 private:
  std::vector<ActionRecord> actions_;
  std::unordered_map<std::string, ActionIndex> by_id_;
  std::unordered_map<EntityKey, TypeBuckets, EntityKeyHash> entity_index_;
};

// Parses a JSON-lines corpus. Blank lines are skipped. Throws MalformedRecord
// (with 1-based line number), DuplicateActionId, or Error when unreadable.
ActionStore load_corpus(const std::filesystem::path& path);
ActionStore load_corpus_from_string(std::string_view text);

// Ids of every action whose type is in `sensitive_types`, ordered by (start, id).
std::vector<std::string> select_roots(const ActionStore& store,
                                      const std::set<std::string>& sensitive_types);

}  // namespace sentinel
