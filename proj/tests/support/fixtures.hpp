#pragma once

// Shared corpora for tests: the hand-encoded example subgraph and seeded
// random corpora.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sentinel/corpus.hpp"

namespace fixtures {

using sentinel::ActionRecord;
using sentinel::EntityRef;
using sentinel::TimestampMs;

inline constexpr TimestampMs kRootStart = 1'709'640'000'000;  // 2024-03-05T12:00:00Z

inline TimestampMs hours(double h) { return static_cast<TimestampMs>(h * 3'600'000.0); }

// Root query by agent.1 on user.1's data. Ticket.1 pertains to user.1;
// agent.1 viewed it 1.43 h before and transferred it 0.07 h before;
// agent.2 viewed it 18.75 h before and assigned it 1.7 h before. The
// remaining records are unconnected to the root.
inline std::vector<ActionRecord> example_corpus() {
  auto ticket_action = [](std::string id, std::string type, std::string agent, double dh) {
    const TimestampMs start = kRootStart + hours(dh);
    return ActionRecord{std::move(id), std::move(type), start, start + 60'000,
                        {EntityRef{"agent", std::move(agent), "actor"}, EntityRef{"ticket", "ticket.1", "object"},
                         EntityRef{"user", "user.1", "subject"}}};
  };
  return {
      {"q.1", "DataTool.Query", kRootStart, kRootStart + 30'000,
       {{"agent", "agent.1", "actor"}, {"user", "user.1", "subject"}}},
      ticket_action("tm.view.1", "TicketManagement.View", "agent.1", -1.43),
      ticket_action("tm.transfer.1", "TicketManagement.Transfer", "agent.1", -0.07),
      ticket_action("tm.view.2", "TicketManagement.View", "agent.2", -18.75),
      ticket_action("tm.assign.2", "TicketManagement.Assign", "agent.2", -1.7),
      {"other.view", "TicketManagement.View", kRootStart - hours(2), kRootStart - hours(2) + 60'000,
       {{"agent", "agent.9", "actor"}, {"ticket", "ticket.9", "object"}, {"user", "user.9", "subject"}}},
      {"other.query", "DataTool.Query", kRootStart + hours(1), kRootStart + hours(1) + 30'000,
       {{"agent", "agent.9", "actor"}, {"user", "user.9", "subject"}}},
  };
}

struct RandomCorpusSpec {
  std::size_t actions = 200;
  std::size_t agents = 6;
  std::size_t users = 10;
  std::size_t tickets = 12;
  std::size_t devices = 4;
  int time_slots = 40;  // coarse starts so ties are common
  TimestampMs slot_ms = 600'000;
};

// Ten actions over a few entities with distinct second-resolution starts
// across about twelve days: no exact ties between nodes.
inline constexpr RandomCorpusSpec kTinyDistinct{
    .actions = 10, .agents = 2, .users = 2, .tickets = 2, .time_slots = 1'000'000, .slot_ms = 1'000};

// Every action references one agent plus a random mix of user, ticket and
// device entities. Queries always carry an agent and a user.
inline std::vector<ActionRecord> random_corpus(std::uint64_t seed, const RandomCorpusSpec& spec = {}) {
  static const char* kTypes[] = {"DataTool.Query", "TicketManagement.View", "TicketManagement.Reply",
                                 "TicketManagement.Transfer", "Chat.Message"};
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  std::vector<ActionRecord> out;
  for (std::size_t i = 0; i < spec.actions; ++i) {
    ActionRecord a;
    // Ids are scrambled so id order and generation order disagree.
    a.id = "a" + std::to_string((i * 7919 + seed * 104729) % 1000003) + "." + std::to_string(i);
    a.action_type = kTypes[pick(std::size(kTypes))];
    a.start_ms = kRootStart + static_cast<TimestampMs>(pick(static_cast<std::size_t>(spec.time_slots))) * spec.slot_ms;
    a.end_ms = a.start_ms + static_cast<TimestampMs>(pick(5)) * 60'000;
    a.references.push_back({"agent", "agent." + std::to_string(pick(spec.agents)), "actor"});
    const bool query = a.action_type == "DataTool.Query";
    if (query || coin(0.7)) a.references.push_back({"user", "user." + std::to_string(pick(spec.users)), "subject"});
    if (!query && coin(0.6)) a.references.push_back({"ticket", "ticket." + std::to_string(pick(spec.tickets)), "object"});
    if (coin(0.2)) a.references.push_back({"device", "device." + std::to_string(pick(spec.devices)), "via"});
    if (coin(0.1)) a.references.push_back({"agent", "agent." + std::to_string(pick(spec.agents)), "assignee"});
    std::sort(a.references.begin(), a.references.end());
    a.references.erase(std::unique(a.references.begin(), a.references.end()), a.references.end());
    out.push_back(std::move(a));
  }
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("sentinel-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
