#include "sentinel/features.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

namespace sentinel {

using nlohmann::json;

Embedding normalize_embedding(std::vector<double> raw) {
  if (raw.empty()) throw PreconditionError("cannot normalize an empty vector");
  const double norm = std::sqrt(kernels::dot(raw, raw));
  if (norm == 0.0) {
    raw[0] = 1.0;
    return Embedding{std::move(raw)};
  }
  for (double& v : raw) v /= norm;
  return Embedding{std::move(raw)};
}

double signed_log(double x) noexcept { return std::copysign(std::log1p(std::fabs(x)), x); }

void validate_schema(const FeatureSchema& schema) {
  if (schema.action_types.empty()) throw PreconditionError("feature schema has no action types");
  std::set<std::string> seen;
  for (const std::string& t : schema.action_types) {
    if (!seen.insert(t).second) throw PreconditionError("duplicate action type in schema: " + t);
  }
}

FeatureSchema schema_from_json(const json& j) {
  FeatureSchema s;
  try {
    s.action_types = j.at("action_types").get<std::vector<std::string>>();
    if (j.contains("agent_entity_type")) s.agent_entity_type = j.at("agent_entity_type").get<std::string>();
    if (j.contains("user_entity_type")) s.user_entity_type = j.at("user_entity_type").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(std::string("bad feature schema: ") + e.what());
  }
  validate_schema(s);
  return s;
}

json schema_to_json(const FeatureSchema& schema) {
  return json{{"action_types", schema.action_types},
              {"agent_entity_type", schema.agent_entity_type},
              {"user_entity_type", schema.user_entity_type}};
}

FeatureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read schema: " + path.string());
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("bad schema " + path.string() + ": " + e.what());
  }
}

FeatureSchema schema_from_store(const ActionStore& store) {
  std::set<std::string> types;
  for (const ActionRecord& a : store.actions()) types.insert(a.action_type);
  FeatureSchema s;
  s.action_types.assign(types.begin(), types.end());
  return s;
}

Embedding handcrafted_embedding(const RootedSubgraph& g, const FeatureSchema& schema) {
  validate_schema(schema);
  const ActionRecord& root = g.root();

  std::vector<EntityKey> agents;
  std::vector<EntityKey> users;
  for (const EntityRef& r : root.references) {
    if (r.entity_type == schema.agent_entity_type) agents.push_back(r.key());
    if (r.entity_type == schema.user_entity_type) users.push_back(r.key());
  }
  if (agents.empty() || users.empty()) {
    throw MissingRootEntity("root " + root.id + " lacks an agent or user reference");
  }

  std::map<std::string, std::size_t> type_index;
  for (std::size_t i = 0; i < schema.action_types.size(); ++i) type_index[schema.action_types[i]] = i;

  struct Cell {
    long count = 0;
    double earliest = std::numeric_limits<double>::infinity();
    double latest = -std::numeric_limits<double>::infinity();
  };
  std::vector<Cell> cells(kShareClassNames.size() * schema.action_types.size());

  auto shares_any = [](const ActionRecord& a, const std::vector<EntityKey>& keys) {
    for (const EntityKey& k : keys) {
      if (a.references_entity(k)) return true;
    }
    return false;
  };

  for (const ActionRecord& a : g.actions) {
    if (a.id == root.id) continue;
    auto t = type_index.find(a.action_type);
    if (t == type_index.end()) continue;
    const bool agent = shares_any(a, agents);
    const bool user = shares_any(a, users);
    if (!agent && !user) continue;
    const ShareClass c = agent && user ? ShareClass::Both : (agent ? ShareClass::Agent : ShareClass::User);
    Cell& cell = cells[static_cast<std::size_t>(c) * schema.action_types.size() + t->second];
    const double dh = static_cast<double>(a.start_ms - root.start_ms) / static_cast<double>(kMillisPerHour);
    ++cell.count;
    cell.earliest = std::min(cell.earliest, dh);
    cell.latest = std::max(cell.latest, dh);
  }

  std::vector<double> raw(schema.dimension(), 0.0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].count == 0) continue;
    raw[3 * i] = signed_log(static_cast<double>(cells[i].count));
    raw[3 * i + 1] = signed_log(cells[i].earliest);
    raw[3 * i + 2] = signed_log(cells[i].latest);
  }
  return normalize_embedding(std::move(raw));
}

void write_embeddings(const std::filesystem::path& path, const std::map<std::string, Embedding>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write embeddings: " + path.string());
  for (const auto& [id, e] : rows) {
    out << json{{"id", id}, {"vector", e.values}}.dump() << '\n';
  }
}

std::map<std::string, Embedding> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read embeddings: " + path.string());
  std::map<std::string, Embedding> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Embedding e{j.at("vector").get<std::vector<double>>()};
      if (rows.empty()) dim = e.dim();
      if (e.dim() != dim) throw DimensionMismatch(e.dim(), dim);
      if (!rows.emplace(j.at("id").get<std::string>(), std::move(e)).second) {
        throw Error("duplicate embedding id");
      }
    } catch (const json::exception& e) {
      throw Error("bad embedding row at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace sentinel
