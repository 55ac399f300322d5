#include "sentinel/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <unordered_set>

#include "sentinel/error.hpp"

namespace sentinel {

using nlohmann::json;

void validate_sampler_config(const SamplerConfig& cfg) {
  if (cfg.max_steps < 1) throw PreconditionError("sampler T must be >= 1");
  if (cfg.per_type_limit < 1) throw PreconditionError("sampler M must be >= 1");
}

SamplerConfig sampler_config_from_json(const json& j) {
  SamplerConfig cfg;
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "T" && key != "M" && key != "blocked_after_first" && key != "sensitive_types" &&
          key != "agent_entity_type") {
        throw Error("unknown sampler config key: " + key);
      }
    }
    if (j.contains("T")) cfg.max_steps = j.at("T").get<int>();
    if (j.contains("M")) cfg.per_type_limit = j.at("M").get<int>();
    if (j.contains("blocked_after_first")) {
      cfg.blocked_after_first = j.at("blocked_after_first").get<std::set<std::string>>();
    }
    if (j.contains("sensitive_types")) {
      cfg.sensitive_types = j.at("sensitive_types").get<std::set<std::string>>();
    }
    if (j.contains("agent_entity_type")) {
      cfg.agent_entity_type = j.at("agent_entity_type").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(std::string("bad sampler config: ") + e.what());
  }
  validate_sampler_config(cfg);
  return cfg;
}

json sampler_config_to_json(const SamplerConfig& cfg) {
  return json{{"T", cfg.max_steps},
              {"M", cfg.per_type_limit},
              {"blocked_after_first", cfg.blocked_after_first},
              {"sensitive_types", cfg.sensitive_types},
              {"agent_entity_type", cfg.agent_entity_type}};
}

SamplerConfig load_sampler_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read sampler config: " + path.string());
  try {
    return sampler_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("bad sampler config " + path.string() + ": " + e.what());
  }
}

namespace {

using Index = ActionStore::ActionIndex;

// Walks a (start, id)-sorted list outward from the root start, yielding
// indices in increasing (|start - root|, start, id) order.
class ClosestCursor {
 public:
  ClosestCursor(const ActionStore& store, const std::vector<Index>& list, TimestampMs root_start)
      : store_(store), list_(list), root_start_(root_start) {
    right_ = static_cast<std::size_t>(
        std::lower_bound(list.begin(), list.end(), root_start,
                         [&](Index i, TimestampMs t) { return store.at(i).start_ms < t; }) -
        list.begin());
    run_end_ = right_;
    next_left_run();
  }

  bool next(Index& out) {
    const bool has_left = left_ < run_end_;
    const bool has_right = right_ < list_.size();
    if (!has_left && !has_right) return false;
    bool take_left = has_left;
    if (has_left && has_right) {
      const TimestampMs dl = root_start_ - store_.at(list_[left_]).start_ms;
      const TimestampMs dr = store_.at(list_[right_]).start_ms - root_start_;
      // On equal distance the left one has the earlier start.
      take_left = dl <= dr;
    }
    if (take_left) {
      out = list_[left_++];
      if (left_ == run_end_) {
        run_end_ = run_begin_;
        next_left_run();
      }
    } else {
      out = list_[right_++];
    }
    return true;
  }

 private:
  // Left side is consumed one equal-start run at a time, each run ascending
  // by id.
  void next_left_run() {
    if (run_end_ == 0) {
      run_begin_ = left_ = 0;
      return;
    }
    const TimestampMs start = store_.at(list_[run_end_ - 1]).start_ms;
    run_begin_ = run_end_ - 1;
    while (run_begin_ > 0 && store_.at(list_[run_begin_ - 1]).start_ms == start) --run_begin_;
    left_ = run_begin_;
  }

  const ActionStore& store_;
  const std::vector<Index>& list_;
  TimestampMs root_start_;
  std::size_t right_ = 0;
  std::size_t left_ = 0;
  std::size_t run_begin_ = 0;
  std::size_t run_end_ = 0;
};

}  // namespace

RootedSubgraph sample_rooted_subgraph(const ActionStore& store, const std::string& root_id,
                                      const SamplerConfig& cfg) {
  validate_sampler_config(cfg);
  const ActionRecord* root = store.find(root_id);
  if (root == nullptr) throw UnknownRoot(root_id);

  std::unordered_set<std::string> added{root->id};
  std::vector<const ActionRecord*> members{root};
  std::map<EntityKey, int> step;

  std::set<EntityKey> frontier;
  for (const EntityRef& r : root->references) frontier.insert(r.key());
  for (const EntityKey& k : frontier) step.emplace(k, 1);

  for (int s = 1; s <= cfg.max_steps && !frontier.empty(); ++s) {
    const std::size_t level_begin = members.size();
    for (const EntityKey& entity : frontier) {
      if (s > 1 && cfg.blocked_after_first.contains(entity.type)) continue;
      const ActionStore::TypeBuckets* buckets = store.buckets(entity);
      if (buckets == nullptr) continue;
      for (const auto& [type, list] : *buckets) {
        ClosestCursor cursor(store, list, root->start_ms);
        int taken = 0;
        Index i = 0;
        while (taken < cfg.per_type_limit && cursor.next(i)) {
          const ActionRecord& a = store.at(i);
          if (added.insert(a.id).second) {
            members.push_back(&a);
            ++taken;
          }
        }
      }
    }
    std::set<EntityKey> next;
    for (std::size_t m = level_begin; m < members.size(); ++m) {
      for (const EntityRef& r : members[m]->references) {
        EntityKey k = r.key();
        if (!step.contains(k)) next.insert(std::move(k));
      }
    }
    for (const EntityKey& k : next) step.emplace(k, s + 1);
    frontier = std::move(next);
  }

  RootedSubgraph g;
  g.root_id = root->id;
  g.day = utc_day(root->start_ms);
  for (const EntityRef& r : root->references) {
    if (r.entity_type == cfg.agent_entity_type && (g.agent_id.empty() || r.entity_id < g.agent_id)) {
      g.agent_id = r.entity_id;
    }
  }
  for (const auto& [key, s] : step) {
    if (s <= cfg.max_steps) g.entities.push_back({key, s});
  }
  g.actions.reserve(members.size());
  for (const ActionRecord* a : members) {
    g.actions.push_back(*a);
    for (const EntityRef& r : a->references) {
      auto it = step.find(r.key());
      if (it != step.end() && it->second <= cfg.max_steps) {
        g.edges.push_back({a->id, it->first, r.relationship});
      }
    }
  }
  canonicalize(g);
  return g;
}

std::vector<RootedSubgraph> sample_all(const ActionStore& store, const SamplerConfig& cfg) {
  std::vector<RootedSubgraph> out;
  for (const std::string& id : select_roots(store, cfg.sensitive_types)) {
    out.push_back(sample_rooted_subgraph(store, id, cfg));
  }
  return out;
}

}  // namespace sentinel
