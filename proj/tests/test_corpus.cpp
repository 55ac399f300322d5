#include <doctest.h>

#include <fstream>
#include <random>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "support/fixtures.hpp"

using namespace sentinel;

namespace {

const char* kExampleRoot =
    R"({"id":"q.1","type":"DataTool.Query","start_ms":1709640000000,"end_ms":1709640030000,)"
    R"("refs":[{"entity_type":"agent","entity_id":"agent.1","relationship":"actor"},)"
    R"({"entity_type":"user","entity_id":"user.1","relationship":"subject"}]})";

}  // namespace

TEST_CASE("parse the example root query") {
  const ActionRecord a = parse_action_record(kExampleRoot);
  CHECK(a.id == "q.1");
  CHECK(a.action_type == "DataTool.Query");
  CHECK(a.references.size() == 2);
  CHECK(a.references_entity({"agent", "agent.1"}));
  CHECK(a.references_entity({"user", "user.1"}));
}

TEST_CASE("zero-duration action is valid") {
  const auto a = parse_action_record(
      R"({"id":"x","type":"T","start_ms":5,"end_ms":5,"refs":[{"entity_type":"a","entity_id":"1","relationship":"r"}]})");
  CHECK(a.start_ms == a.end_ms);
}

TEST_CASE("malformed records are rejected with a reason") {
  auto rejects = [](const std::string& line) {
    CHECK_THROWS_AS(parse_action_record(line), MalformedRecord);
  };
  const std::string ref = R"([{"entity_type":"a","entity_id":"1","relationship":"r"}])";
  rejects(R"({"id":"x","type":"T","start_ms":5,"end_ms":5,"refs":[]})");
  rejects(R"({"id":"x","type":"T","start_ms":6,"end_ms":5,"refs":)" + ref + "}");
  rejects(R"({"id":"x","type":"T","start_ms":5,"refs":)" + ref + "}");
  rejects(R"({"id":"x","type":"T","start_ms":5,"end_ms":5,"refs":)" + ref + R"(,"extra":1})");
  rejects(R"({"id":"x","type":"T","start_ms":5.5,"end_ms":6,"refs":)" + ref + "}");
  rejects(R"({"id":"","type":"T","start_ms":5,"end_ms":6,"refs":)" + ref + "}");
  rejects(R"({"id":"x","type":"T","start_ms":5,"end_ms":6,"refs":[{"entity_type":"","entity_id":"1","relationship":"r"}]})");
  rejects(R"({"id":"x","type":"T","start_ms":5,"end_ms":6,"refs":[{"entity_type":"a","entity_id":"1","relationship":"r"},)"
          R"({"entity_type":"a","entity_id":"1","relationship":"r"}]})");
  rejects(R"({"id":"x","type":"T")");
  rejects("[1,2]");

  try {
    parse_action_record(R"({"id":"x","type":"T","start_ms":9,"end_ms":5,"refs":)" + ref + "}", 100);
    FAIL("expected MalformedRecord");
  } catch (const MalformedRecord& e) {
    CHECK(!e.reason().empty());
    CHECK(e.byte_offset() >= 100);
  }
}

TEST_CASE("serialize then parse round-trips random records") {
  for (const ActionRecord& a : fixtures::random_corpus(3, {.actions = 300})) {
    CHECK(parse_action_record(serialize_action_record(a)) == a);
  }
}

TEST_CASE("load_corpus: empty file, shared entity, bad line, duplicate id") {
  CHECK(load_corpus_from_string("").size() == 0);
  CHECK(load_corpus_from_string("\n\n").size() == 0);

  const std::string two =
      R"({"id":"a","type":"T","start_ms":1,"end_ms":2,"refs":[{"entity_type":"u","entity_id":"1","relationship":"r"}]})"
      "\n"
      R"({"id":"b","type":"T","start_ms":0,"end_ms":2,"refs":[{"entity_type":"u","entity_id":"1","relationship":"s"}]})"
      "\n";
  const ActionStore store = load_corpus_from_string(two);
  const auto* buckets = store.buckets({"u", "1"});
  REQUIRE(buckets != nullptr);
  REQUIRE(buckets->at("T").size() == 2);
  CHECK(store.at(buckets->at("T")[0]).id == "b");  // ordered by start
  CHECK(store.at(buckets->at("T")[1]).id == "a");

  try {
    load_corpus_from_string(two + "not json\n");
    FAIL("expected MalformedRecord");
  } catch (const MalformedRecord& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(load_corpus_from_string(two + two), DuplicateActionId);

  const auto dir = fixtures::temp_dir("corpus");
  std::ofstream(dir / "c.jsonl") << two;
  CHECK(load_corpus(dir / "c.jsonl").size() == 2);
  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("index lookups agree with a linear scan on a 10k corpus") {
  const auto corpus = fixtures::random_corpus(77, {.actions = 10'000, .agents = 40, .users = 200, .tickets = 300});
  const ActionStore store(corpus);
  std::mt19937_64 rng(5);
  static const char* kTypes[] = {"DataTool.Query", "TicketManagement.View", "TicketManagement.Reply",
                                 "TicketManagement.Transfer", "Chat.Message"};
  for (int probe = 0; probe < 100; ++probe) {
    const ActionRecord& seed = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
    const EntityKey key = seed.references[std::uniform_int_distribution<std::size_t>(0, seed.references.size() - 1)(rng)].key();
    const std::string type = kTypes[probe % 5];

    std::vector<const ActionRecord*> scan;
    for (const ActionRecord& a : corpus) {
      if (a.action_type == type && a.references_entity(key)) scan.push_back(&a);
    }
    std::sort(scan.begin(), scan.end(), [](auto* x, auto* y) { return start_then_id_less(*x, *y); });

    std::vector<std::string> got;
    if (const auto* b = store.buckets(key); b != nullptr && b->contains(type)) {
      for (auto i : b->at(type)) got.push_back(store.at(i).id);
    }
    std::vector<std::string> want;
    for (auto* a : scan) want.push_back(a->id);
    CHECK(got == want);
  }
}

TEST_CASE("index is complete and strictly ordered") {
  const ActionStore store(fixtures::random_corpus(9, {.actions = 2000}));
  for (const ActionRecord& a : store.actions()) {
    for (const EntityRef& r : a.references) {
      const auto& list = store.buckets(r.key())->at(a.action_type);
      bool found = false;
      for (auto i : list) found = found || store.at(i).id == a.id;
      CHECK(found);
    }
  }
  std::size_t total = 0;
  store.for_each_entity([&](const EntityKey& key, const ActionStore::TypeBuckets& buckets) {
    for (const auto& [type, list] : buckets) {
      for (std::size_t i = 0; i < list.size(); ++i) {
        CHECK(store.at(list[i]).references_entity(key));
        CHECK(store.at(list[i]).action_type == type);
        if (i > 0) CHECK(start_then_id_less(store.at(list[i - 1]), store.at(list[i])));
      }
      total += list.size();
    }
  });
  CHECK(total > 0);
}

TEST_CASE("select_roots is the sorted set filter") {
  const auto corpus = fixtures::random_corpus(21, {.actions = 10'000});
  const ActionStore store(corpus);
  CHECK(select_roots(store, {}).empty());

  std::vector<const ActionRecord*> want;
  for (const ActionRecord& a : corpus) {
    if (a.action_type == "DataTool.Query") want.push_back(&a);
  }
  std::sort(want.begin(), want.end(), [](auto* x, auto* y) { return start_then_id_less(*x, *y); });
  const auto got = select_roots(store, {"DataTool.Query"});
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]->id);

  const ActionStore small(fixtures::example_corpus());
  CHECK(select_roots(small, {"DataTool.Query"}) == std::vector<std::string>{"q.1", "other.query"});
}

TEST_CASE("duplicate ids are rejected by the store") {
  auto corpus = fixtures::example_corpus();
  corpus.push_back(corpus.front());
  CHECK_THROWS_AS(ActionStore{corpus}, DuplicateActionId);
}
