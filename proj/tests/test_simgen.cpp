#include <doctest.h>

#include <fstream>
#include <sstream>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "sentinel/simgen.hpp"
#include "support/fixtures.hpp"

using namespace sentinel;
using namespace sentinel::sim;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// A pre-root ticket action referencing both the root's agent and its user.
bool has_justification(const ActionStore& store, const ActionRecord& root) {
  std::vector<EntityKey> agents, users;
  for (const EntityRef& r : root.references) {
    if (r.entity_type == "agent") agents.push_back(r.key());
    if (r.entity_type == "user") users.push_back(r.key());
  }
  for (const EntityKey& u : users) {
    const auto* buckets = store.buckets(u);
    if (buckets == nullptr) continue;
    for (const auto& [type, list] : *buckets) {
      if (!type.starts_with("TicketManagement.")) continue;
      for (auto i : list) {
        const ActionRecord& a = store.at(i);
        if (a.start_ms >= root.start_ms) continue;
        for (const EntityKey& ag : agents) {
          if (a.references_entity(ag)) return true;
        }
      }
    }
  }
  return false;
}

SimConfig small(std::uint64_t seed, double prevalence) {
  SimConfig cfg;
  cfg.agents = 20;
  cfg.days = 3;
  cfg.seed = seed;
  cfg.anomaly_prevalence = prevalence;
  return cfg;
}

}  // namespace

TEST_CASE("zero prevalence yields only normal roots") {
  const SimOutput out = generate(small(1, 0.0));
  CHECK_FALSE(out.truth.empty());
  for (const auto& [id, label] : out.truth) CHECK(label == kNormalLabel);
}

TEST_CASE("same seed, same bytes") {
  const auto dir = fixtures::temp_dir("simgen");
  const SimOutput a = generate(small(7, 0.05));
  const SimOutput b = generate(small(7, 0.05));
  write_corpus(dir / "a.jsonl", a.actions);
  write_corpus(dir / "b.jsonl", b.actions);
  write_truth(dir / "ta.jsonl", a.truth);
  write_truth(dir / "tb.jsonl", b.truth);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "ta.jsonl") == slurp(dir / "tb.jsonl"));
  CHECK(generate(small(8, 0.05)).actions != a.actions);

  // The written corpus passes the ingest validator.
  const ActionStore store = load_corpus(dir / "a.jsonl");
  CHECK(store.size() == a.actions.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("desk-scale prevalence lands near the configured rate") {
  SimConfig cfg;  // 100 agents x 7 days
  cfg.anomaly_prevalence = 0.02;
  const SimOutput out = generate(cfg);
  std::size_t anomalous = 0;
  for (const auto& [id, label] : out.truth) anomalous += label != kNormalLabel ? 1 : 0;
  const double frac = double(anomalous) / double(out.truth.size());
  CHECK(out.truth.size() > 1500);
  CHECK(std::fabs(frac - 0.02) <= 0.01);
}

TEST_CASE("anomalies lack justification and normal roots have it") {
  const SimOutput out = generate(small(3, 0.2));
  const ActionStore store(out.actions);
  std::map<std::string, std::size_t> by_label;
  for (const auto& [id, label] : out.truth) {
    const ActionRecord& root = *store.find(id);
    CHECK(root.action_type == kQueryType);
    CAPTURE(id);
    CAPTURE(label);
    CHECK(has_justification(store, root) == (label == kNormalLabel));
    ++by_label[label];
  }
  for (AnomalyKind k : kAllAnomalyKinds) CHECK(by_label[std::string(anomaly_name(k))] > 0);
  CHECK(select_roots(store, {std::string(kQueryType)}).size() == out.truth.size());
}

TEST_CASE("config validation and json") {
  SimConfig bad;
  bad.anomaly_prevalence = 1.0;
  CHECK_THROWS_AS(validate_sim_config(bad), PreconditionError);
  bad = {};
  bad.workflow_mix["view_reply"] = 0.5;
  CHECK_THROWS_AS(validate_sim_config(bad), PreconditionError);
  bad = {};
  bad.workflow_mix["dance"] = 0.0;
  CHECK_THROWS_AS(validate_sim_config(bad), PreconditionError);
  bad = {};
  bad.agents = 0;
  CHECK_THROWS_AS(validate_sim_config(bad), PreconditionError);
  CHECK_THROWS(sim_config_from_json(nlohmann::json{{"agentz", 3}}));

  const SimConfig cfg = small(9, 0.1);
  const SimConfig back = sim_config_from_json(sim_config_to_json(cfg));
  CHECK(sim_config_to_json(back) == sim_config_to_json(cfg));
}
