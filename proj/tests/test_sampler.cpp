#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "oracles/reference_sampler.hpp"
#include "sentinel/error.hpp"
#include "sentinel/sampler.hpp"
#include "support/fixtures.hpp"

using namespace sentinel;

namespace {

using EdgeTuple = std::tuple<std::string, std::string, std::string>;  // action, entity type, entity id

std::set<EdgeTuple> edge_set(const RootedSubgraph& g) {
  std::set<EdgeTuple> s;
  for (const auto& e : g.edges) s.insert({e.action_id, e.entity.type, e.entity.id});
  return s;
}

std::set<std::string> action_ids(const RootedSubgraph& g) {
  std::set<std::string> s;
  for (const auto& a : g.actions) s.insert(a.id);
  return s;
}

std::tuple<long long, TimestampMs, std::string> closeness(const ActionRecord& a, TimestampMs root) {
  return {std::llabs(a.start_ms - root), a.start_ms, a.id};
}

}  // namespace

TEST_CASE("example subgraph: exact node and edge set") {
  const ActionStore store(fixtures::example_corpus());
  const RootedSubgraph g = sample_rooted_subgraph(store, "q.1", SamplerConfig{});

  CHECK(action_ids(g) == std::set<std::string>{"q.1", "tm.view.1", "tm.transfer.1", "tm.view.2", "tm.assign.2"});
  std::set<std::tuple<std::string, std::string, int>> entities;
  for (const auto& e : g.entities) entities.insert({e.key.type, e.key.id, e.step});
  CHECK(entities == std::set<std::tuple<std::string, std::string, int>>{
                        {"agent", "agent.1", 1}, {"user", "user.1", 1}, {"ticket", "ticket.1", 2}, {"agent", "agent.2", 2}});

  std::set<EdgeTuple> want{{"q.1", "agent", "agent.1"}, {"q.1", "user", "user.1"}};
  for (const char* id : {"tm.view.1", "tm.transfer.1"}) {
    want.insert({id, "agent", "agent.1"});
    want.insert({id, "ticket", "ticket.1"});
    want.insert({id, "user", "user.1"});
  }
  for (const char* id : {"tm.view.2", "tm.assign.2"}) {
    want.insert({id, "agent", "agent.2"});
    want.insert({id, "ticket", "ticket.1"});
    want.insert({id, "user", "user.1"});
  }
  CHECK(edge_set(g) == want);
  CHECK(g.agent_id == "agent.1");
  CHECK(format_utc_day(g.day) == "2024-03-05");

  // Hour offsets of the example records.
  std::map<std::string, double> dh;
  for (const auto& a : g.actions) dh[a.id] = delta_start_hours(g, a);
  CHECK(dh["tm.view.1"] == doctest::Approx(-1.43));
  CHECK(dh["tm.transfer.1"] == doctest::Approx(-0.07));
  CHECK(dh["tm.view.2"] == doctest::Approx(-18.75));
  CHECK(dh["tm.assign.2"] == doctest::Approx(-1.7));

  CHECK_NOTHROW(validate_subgraph(g, 2));
  CHECK(g == oracle::reference_sample(fixtures::example_corpus(), "q.1", SamplerConfig{}));
}

TEST_CASE("root with no other actions yields the root and its entities") {
  const ActionStore store({{"r", "DataTool.Query", 0, 0, {{"agent", "a", "actor"}, {"user", "u", "subject"}}}});
  const RootedSubgraph g = sample_rooted_subgraph(store, "r", SamplerConfig{});
  CHECK(g.actions.size() == 1);
  CHECK(g.entities.size() == 2);
  CHECK(g.edges.size() == 2);
}

TEST_CASE("unknown root and bad config") {
  const ActionStore store(fixtures::example_corpus());
  CHECK_THROWS_AS(sample_rooted_subgraph(store, "nope", SamplerConfig{}), UnknownRoot);
  SamplerConfig bad;
  bad.per_type_limit = 0;
  CHECK_THROWS_AS(sample_rooted_subgraph(store, "q.1", bad), PreconditionError);
  CHECK_THROWS(sampler_config_from_json(nlohmann::json{{"T", 2}, {"Q", 1}}));
  const auto cfg = sampler_config_from_json(nlohmann::json{{"T", 3}, {"M", 4}, {"blocked_after_first", {"user", "device"}},
                                                           {"sensitive_types", {"X"}}});
  CHECK(cfg.max_steps == 3);
  CHECK(cfg.per_type_limit == 4);
  CHECK(cfg.blocked_after_first == std::set<std::string>{"device", "user"});
  CHECK(sampler_config_from_json(sampler_config_to_json(cfg)).sensitive_types == cfg.sensitive_types);
}

TEST_CASE("matches the brute-force reference sampler on random corpora") {
  SamplerConfig t2m3;
  t2m3.per_type_limit = 3;
  SamplerConfig t1m2;
  t1m2.max_steps = 1;
  t1m2.per_type_limit = 2;
  SamplerConfig t3m1;
  t3m1.max_steps = 3;
  t3m1.per_type_limit = 1;
  t3m1.blocked_after_first = {"user", "device"};
  SamplerConfig open;
  open.blocked_after_first = {};
  open.per_type_limit = 4;

  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const auto corpus = fixtures::random_corpus(seed, {.actions = 200});
    const ActionStore store(corpus);
    for (const SamplerConfig& cfg : {t2m3, t1m2, t3m1, open}) {
      for (const std::string& root : select_roots(store, cfg.sensitive_types)) {
        const RootedSubgraph got = sample_rooted_subgraph(store, root, cfg);
        CHECK(got == oracle::reference_sample(corpus, root, cfg));
      }
    }
  }
}

TEST_CASE("step law, M-closeness, validity and determinism") {
  SamplerConfig cfg;
  cfg.per_type_limit = 3;
  const auto corpus = fixtures::random_corpus(99, {.actions = 400});
  const ActionStore store(corpus);
  for (const std::string& root_id : select_roots(store, cfg.sensitive_types)) {
    const RootedSubgraph g = sample_rooted_subgraph(store, root_id, cfg);
    CHECK_NOTHROW(validate_subgraph(g, cfg.max_steps));
    CHECK(g == sample_rooted_subgraph(store, root_id, cfg));

    const TimestampMs root_start = g.root().start_ms;
    const auto members = action_ids(g);
    for (const SubgraphEntity& e : g.entities) {
      CHECK(e.step <= cfg.max_steps);
      if (e.step > 1 && cfg.blocked_after_first.contains(e.key.type)) continue;
      // For each type, if any action of that type on e is missing, every
      // included one of that type on e must be at least as close, or have
      // entered through another slot.
      for (const auto& [type, list] : *store.buckets(e.key)) {
        std::vector<const ActionRecord*> in, out;
        for (auto i : list) (members.contains(store.at(i).id) ? in : out).push_back(&store.at(i));
        if (out.empty()) continue;
        // At least min(M, |list|) of that slot's actions are present.
        CHECK(in.size() >= std::min<std::size_t>(cfg.per_type_limit, list.size()));
        std::size_t closer_than_best_excluded = 0;
        auto best_out = closeness(*out.front(), root_start);
        for (auto* a : out) best_out = std::min(best_out, closeness(*a, root_start));
        for (auto* a : in) closer_than_best_excluded += closeness(*a, root_start) < best_out ? 1 : 0;
        CHECK(closer_than_best_excluded >= std::min<std::size_t>(cfg.per_type_limit, list.size()));
      }
    }
  }
}

TEST_CASE("size is monotone in M and T and bounded by slots") {
  const auto corpus = fixtures::random_corpus(5, {.actions = 300});
  const ActionStore store(corpus);
  for (const std::string& root : select_roots(store, {"DataTool.Query"})) {
    std::size_t prev_m = 0;
    for (int m = 1; m <= 5; ++m) {
      SamplerConfig cfg;
      cfg.per_type_limit = m;
      const auto g = sample_rooted_subgraph(store, root, cfg);
      CHECK(g.actions.size() >= prev_m);
      prev_m = g.actions.size();

      std::size_t slots = 0;
      for (const auto& e : g.entities) {
        if (e.step > 1 && cfg.blocked_after_first.contains(e.key.type)) continue;
        slots += store.buckets(e.key)->size();
      }
      CHECK(g.actions.size() <= 1 + static_cast<std::size_t>(m) * slots);
    }
    std::size_t prev_t = 0;
    for (int t = 1; t <= 4; ++t) {
      SamplerConfig cfg;
      cfg.max_steps = t;
      const auto g = sample_rooted_subgraph(store, root, cfg);
      CHECK(g.actions.size() >= prev_t);
      prev_t = g.actions.size();
    }
  }
}

TEST_CASE("sample_all: one subgraph per sensitive action in root order") {
  const ActionStore none(std::vector<ActionRecord>{{"x", "Chat.Message", 0, 0, {{"agent", "a", "actor"}}}});
  CHECK(sample_all(none, SamplerConfig{}).empty());

  const ActionStore store(fixtures::random_corpus(8, {.actions = 300}));
  const auto roots = select_roots(store, {"DataTool.Query"});
  const auto all = sample_all(store, SamplerConfig{});
  REQUIRE(all.size() == roots.size());
  std::set<std::string> distinct;
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].root_id == roots[i]);
    distinct.insert(all[i].root_id);
  }
  CHECK(distinct.size() == roots.size());
}

TEST_CASE("subgraph files round-trip") {
  const ActionStore store(fixtures::random_corpus(4, {.actions = 150}));
  auto all = sample_all(store, SamplerConfig{});
  all.front().provenance = {"X"};
  const auto dir = fixtures::temp_dir("subgraphs");
  write_subgraph_dir(dir, all);
  CHECK(read_subgraph_dir(dir) == all);
  CHECK(subgraph_file_name("a/b c") == "a%2Fb%20c.json");
  CHECK(subgraph_file_name("..") == "%2E..json");
  std::filesystem::remove_all(dir);
}

TEST_CASE("validator rejects broken subgraphs") {
  const ActionStore store(fixtures::example_corpus());
  const RootedSubgraph g = sample_rooted_subgraph(store, "q.1", SamplerConfig{});

  RootedSubgraph no_root = g;
  no_root.root_id = "missing";
  CHECK_THROWS(validate_subgraph(no_root));

  RootedSubgraph dangling = g;
  dangling.edges.push_back({"ghost", {"agent", "agent.1"}, "actor"});
  CHECK_THROWS(validate_subgraph(dangling));

  RootedSubgraph unreachable = g;
  unreachable.actions.push_back(fixtures::example_corpus().back());
  CHECK_THROWS(validate_subgraph(unreachable));

  RootedSubgraph deep = g;
  deep.entities.front().step = 3;
  CHECK_THROWS(validate_subgraph(deep, 2));
}
