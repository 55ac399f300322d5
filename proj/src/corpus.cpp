#include "sentinel/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sentinel/error.hpp"

namespace sentinel {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kRecordKeys{"id", "type", "start_ms", "end_ms", "refs"};
const std::set<std::string, std::less<>> kRefKeys{"entity_type", "entity_id", "relationship"};

struct FieldError {
  std::string reason;
};

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FieldError{std::string("missing field '") + key + "'"};
  return *it;
}

std::string require_string(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_string()) throw FieldError{std::string("field '") + key + "' must be a string"};
  std::string s = v.get<std::string>();
  if (s.empty()) throw FieldError{std::string("field '") + key + "' must be non-empty"};
  return s;
}

TimestampMs require_integer(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_number_integer()) throw FieldError{std::string("field '") + key + "' must be an integer"};
  return v.get<TimestampMs>();
}

void reject_unknown(const json& obj, const std::set<std::string, std::less<>>& allowed,
                    const char* where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) {
      throw FieldError{std::string("unknown key '") + key + "' in " + where};
    }
  }
}

ActionRecord decode(const json& j) {
  if (!j.is_object()) throw FieldError{"record must be a JSON object"};
  reject_unknown(j, kRecordKeys, "record");

  ActionRecord a;
  a.id = require_string(j, "id");
  a.action_type = require_string(j, "type");
  a.start_ms = require_integer(j, "start_ms");
  a.end_ms = require_integer(j, "end_ms");

  const json& refs = require(j, "refs");
  if (!refs.is_array()) throw FieldError{"field 'refs' must be an array"};
  a.references.reserve(refs.size());
  for (const json& r : refs) {
    if (!r.is_object()) throw FieldError{"reference must be a JSON object"};
    reject_unknown(r, kRefKeys, "reference");
    a.references.push_back(EntityRef{require_string(r, "entity_type"),
                                     require_string(r, "entity_id"),
                                     require_string(r, "relationship")});
  }
  return a;
}

void check_invariants(const ActionRecord& a) {
  if (a.id.empty()) throw FieldError{"id must be non-empty"};
  if (a.action_type.empty()) throw FieldError{"type must be non-empty"};
  if (a.start_ms > a.end_ms) throw FieldError{"start_ms is after end_ms"};
  if (a.references.empty()) throw FieldError{"refs must be non-empty"};
  std::set<const EntityRef*, bool (*)(const EntityRef*, const EntityRef*)> seen(
      [](const EntityRef* x, const EntityRef* y) { return *x < *y; });
  for (const EntityRef& r : a.references) {
    if (r.entity_type.empty() || r.entity_id.empty() || r.relationship.empty()) {
      throw FieldError{"reference fields must be non-empty"};
    }
    if (!seen.insert(&r).second) {
      throw FieldError{"duplicate reference (" + r.entity_type + ", " + r.entity_id + ", " +
                       r.relationship + ")"};
    }
  }
}

}  // namespace

bool ActionRecord::references_entity(const EntityKey& key) const {
  return std::any_of(references.begin(), references.end(), [&](const EntityRef& r) {
    return r.entity_type == key.type && r.entity_id == key.id;
  });
}

void validate_action_record(const ActionRecord& a) {
  try {
    check_invariants(a);
  } catch (const FieldError& e) {
    throw MalformedRecord(e.reason, 0);
  }
}

ActionRecord action_from_json(const json& j) {
  try {
    ActionRecord a = decode(j);
    check_invariants(a);
    return a;
  } catch (const FieldError& e) {
    throw MalformedRecord(e.reason, 0);
  }
}

ActionRecord parse_action_record(std::string_view line, std::size_t base_offset) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    const std::size_t pos = e.byte > 0 ? e.byte - 1 : 0;
    throw MalformedRecord(std::string("invalid JSON: ") + e.what(), base_offset + pos);
  }
  try {
    ActionRecord a = decode(j);
    check_invariants(a);
    return a;
  } catch (const FieldError& e) {
    throw MalformedRecord(e.reason, base_offset);
  }
}

json action_to_json(const ActionRecord& a) {
  json refs = json::array();
  for (const EntityRef& r : a.references) {
    refs.push_back({{"entity_type", r.entity_type},
                    {"entity_id", r.entity_id},
                    {"relationship", r.relationship}});
  }
  return json{{"id", a.id},
              {"type", a.action_type},
              {"start_ms", a.start_ms},
              {"end_ms", a.end_ms},
              {"refs", std::move(refs)}};
}

std::string serialize_action_record(const ActionRecord& a) { return action_to_json(a).dump(); }

ActionStore::ActionStore(std::vector<ActionRecord> actions) : actions_(std::move(actions)) {
  by_id_.reserve(actions_.size());
  for (ActionIndex i = 0; i < actions_.size(); ++i) {
    if (!by_id_.emplace(actions_[i].id, i).second) throw DuplicateActionId(actions_[i].id);
  }
  for (ActionIndex i = 0; i < actions_.size(); ++i) {
    const ActionRecord& a = actions_[i];
    for (const EntityRef& r : a.references) {
      auto& list = entity_index_[r.key()][a.action_type];
      // The same entity under two relationships is still one index entry.
      if (list.empty() || list.back() != i) list.push_back(i);
    }
  }
  for (auto& [_, buckets] : entity_index_) {
    for (auto& [_, list] : buckets) {
      std::sort(list.begin(), list.end(), [this](ActionIndex x, ActionIndex y) {
        return start_then_id_less(actions_[x], actions_[y]);
      });
    }
  }
}

const ActionRecord* ActionStore::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &actions_[it->second];
}

const ActionStore::TypeBuckets* ActionStore::buckets(const EntityKey& key) const {
  auto it = entity_index_.find(key);
  return it == entity_index_.end() ? nullptr : &it->second;
}

void ActionStore::for_each_entity(
    const std::function<void(const EntityKey&, const TypeBuckets&)>& fn) const {
  for (const auto& [key, buckets] : entity_index_) fn(key, buckets);
}

ActionStore load_corpus_from_string(std::string_view text) {
  std::vector<ActionRecord> records;
  std::size_t offset = 0;
  std::size_t line_no = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(offset, end - offset);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = line.find_first_not_of(" \t") == std::string_view::npos;
    if (!blank) {
      try {
        records.push_back(parse_action_record(line, offset));
      } catch (const MalformedRecord& e) {
        throw MalformedRecord(e.reason(), e.byte_offset(), line_no);
      }
    }
    offset = end + 1;
  }
  return ActionStore(std::move(records));
}

ActionStore load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_corpus_from_string(buffer.str());
}

std::vector<std::string> select_roots(const ActionStore& store,
                                      const std::set<std::string>& sensitive_types) {
  std::vector<const ActionRecord*> picked;
  if (sensitive_types.empty()) return {};
  for (const ActionRecord& a : store.actions()) {
    if (sensitive_types.contains(a.action_type)) picked.push_back(&a);
  }
  std::sort(picked.begin(), picked.end(),
            [](const ActionRecord* x, const ActionRecord* y) { return start_then_id_less(*x, *y); });
  std::vector<std::string> ids;
  ids.reserve(picked.size());
  for (const ActionRecord* a : picked) ids.push_back(a->id);
  return ids;
}

}  // namespace sentinel
