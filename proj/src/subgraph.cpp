#include "sentinel/subgraph.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sentinel/error.hpp"

namespace sentinel {

using nlohmann::json;

const ActionRecord& RootedSubgraph::root() const {
  const ActionRecord* r = find_action(root_id);
  if (r == nullptr) throw Error("subgraph root missing from its action set: " + root_id);
  return *r;
}

const ActionRecord* RootedSubgraph::find_action(const std::string& id) const {
  for (const ActionRecord& a : actions) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

const SubgraphEntity* RootedSubgraph::find_entity(const EntityKey& key) const {
  for (const SubgraphEntity& e : entities) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

void canonicalize(RootedSubgraph& g) {
  std::sort(g.actions.begin(), g.actions.end(), start_then_id_less);
  std::sort(g.entities.begin(), g.entities.end());
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
}

std::int64_t utc_day(TimestampMs t) noexcept {
  std::int64_t d = t / kMillisPerDay;
  if (t % kMillisPerDay < 0) --d;
  return d;
}

std::string format_utc_day(std::int64_t day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::int64_t parse_utc_day(const std::string& text) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(text.c_str(), "%d-%u-%u", &y, &m, &d) != 3) {
    throw Error("bad day (want YYYY-MM-DD): " + text);
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw Error("bad day: " + text);
  return sys_days{ymd}.time_since_epoch().count();
}

void validate_subgraph(const RootedSubgraph& g, std::optional<int> max_step) {
  auto fail = [&](const std::string& why) {
    throw Error("invalid subgraph " + g.root_id + ": " + why);
  };

  std::map<std::string, std::size_t> action_pos;
  for (std::size_t i = 0; i < g.actions.size(); ++i) {
    if (!action_pos.emplace(g.actions[i].id, i).second) fail("duplicate action " + g.actions[i].id);
  }
  if (!action_pos.contains(g.root_id)) fail("root not among actions");

  std::map<EntityKey, std::size_t> entity_pos;
  for (std::size_t i = 0; i < g.entities.size(); ++i) {
    const SubgraphEntity& e = g.entities[i];
    if (!entity_pos.emplace(e.key, i).second) fail("duplicate entity " + e.key.type + ":" + e.key.id);
    if (e.step < 1) fail("entity step below 1");
    if (max_step && e.step > *max_step) fail("entity step beyond limit");
  }

  // Adjacency over actions [0, n_a) and entities [n_a, n_a + n_e).
  const std::size_t n_a = g.actions.size();
  std::vector<std::vector<std::size_t>> adj(n_a + g.entities.size());
  for (const SubgraphEdge& e : g.edges) {
    auto a = action_pos.find(e.action_id);
    if (a == action_pos.end()) fail("edge from unknown action " + e.action_id);
    auto n = entity_pos.find(e.entity);
    if (n == entity_pos.end()) fail("edge to unknown entity " + e.entity.type + ":" + e.entity.id);
    if (!g.actions[a->second].references_entity(e.entity)) {
      fail("edge without a matching reference on action " + e.action_id);
    }
    adj[a->second].push_back(n_a + n->second);
    adj[n_a + n->second].push_back(a->second);
  }

  std::vector<bool> seen(adj.size(), false);
  std::deque<std::size_t> queue{action_pos[g.root_id]};
  seen[queue.front()] = true;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w : adj[v]) {
      if (!seen[w]) {
        seen[w] = true;
        queue.push_back(w);
      }
    }
  }
  for (std::size_t i = 0; i < n_a; ++i) {
    if (!seen[i]) fail("action unreachable from root: " + g.actions[i].id);
  }
  for (std::size_t i = 0; i < g.entities.size(); ++i) {
    if (!seen[n_a + i]) fail("entity unreachable from root: " + g.entities[i].key.id);
  }
}

double delta_start_hours(const RootedSubgraph& g, const ActionRecord& a) {
  return static_cast<double>(a.start_ms - g.root().start_ms) / static_cast<double>(kMillisPerHour);
}

json subgraph_to_json(const RootedSubgraph& g) {
  json actions = json::array();
  for (const ActionRecord& a : g.actions) actions.push_back(action_to_json(a));
  json entities = json::array();
  for (const SubgraphEntity& e : g.entities) {
    entities.push_back({{"entity_type", e.key.type}, {"entity_id", e.key.id}, {"step", e.step}});
  }
  json edges = json::array();
  for (const SubgraphEdge& e : g.edges) {
    edges.push_back({{"action_id", e.action_id},
                     {"entity_type", e.entity.type},
                     {"entity_id", e.entity.id},
                     {"relationship", e.relationship}});
  }
  return json{{"root_id", g.root_id},   {"agent_id", g.agent_id},
              {"day", format_utc_day(g.day)}, {"actions", std::move(actions)},
              {"entities", std::move(entities)}, {"edges", std::move(edges)},
              {"provenance", g.provenance}};
}

RootedSubgraph subgraph_from_json(const json& j) {
  try {
    RootedSubgraph g;
    g.root_id = j.at("root_id").get<std::string>();
    g.agent_id = j.at("agent_id").get<std::string>();
    g.day = parse_utc_day(j.at("day").get<std::string>());
    for (const json& a : j.at("actions")) g.actions.push_back(action_from_json(a));
    for (const json& e : j.at("entities")) {
      g.entities.push_back({{e.at("entity_type").get<std::string>(), e.at("entity_id").get<std::string>()},
                            e.at("step").get<int>()});
    }
    for (const json& e : j.at("edges")) {
      g.edges.push_back({e.at("action_id").get<std::string>(),
                         {e.at("entity_type").get<std::string>(), e.at("entity_id").get<std::string>()},
                         e.at("relationship").get<std::string>()});
    }
    if (j.contains("provenance")) g.provenance = j.at("provenance").get<std::vector<std::string>>();
    return g;
  } catch (const json::exception& e) {
    throw Error(std::string("bad subgraph JSON: ") + e.what());
  }
}

std::filesystem::path subgraph_file_name(const std::string& root_id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string name;
  for (unsigned char c : root_id) {
    const bool safe = std::isalnum(c) || c == '.' || c == '-' || c == '_';
    if (safe && !(name.empty() && c == '.')) {
      name.push_back(static_cast<char>(c));
    } else {
      name.push_back('%');
      name.push_back(kHex[c >> 4]);
      name.push_back(kHex[c & 0xF]);
    }
  }
  return name + ".json";
}

void write_subgraph_dir(const std::filesystem::path& dir, const std::vector<RootedSubgraph>& gs) {
  std::filesystem::create_directories(dir);
  for (const RootedSubgraph& g : gs) {
    const auto path = dir / subgraph_file_name(g.root_id);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << subgraph_to_json(g).dump() << '\n';
  }
}

std::vector<RootedSubgraph> read_subgraph_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RootedSubgraph> out;
  out.reserve(files.size());
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
      out.push_back(subgraph_from_json(json::parse(buf.str())));
    } catch (const json::exception& e) {
      throw Error("bad subgraph file " + path.string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const RootedSubgraph& a, const RootedSubgraph& b) {
    return start_then_id_less(a.root(), b.root());
  });
  return out;
}

}  // namespace sentinel
