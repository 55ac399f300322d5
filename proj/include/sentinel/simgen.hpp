#pragma once

// Synthetic support-agent traffic with seeded anomaly injection.
//
// Users file tickets that a tier-1 agent views and assigns to a handling
// agent (one team each). Hours later the handler picks the ticket up, reads
// it, looks the user up in their team's tool, queries the user's data and
// replies. Tier-1 agents alone serve a separate background user pool. A
// query is the sensitive root. A fraction of query slots is replaced by one
// of three anomaly templates, each of which lacks the normal justification:
// a pre-root ticket action shared by the agent and the user.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sentinel/corpus.hpp"

namespace sentinel::sim {

inline constexpr std::string_view kQueryType = "DataTool.Query";
inline constexpr std::string_view kNormalLabel = "normal";

// Workflow templates a handling agent may run on a ticket.
inline constexpr std::string_view kTemplateViewQueryReply = "view_query_reply";
inline constexpr std::string_view kTemplateViewTransferQueryReply = "view_transfer_query_reply";
inline constexpr std::string_view kTemplateViewReply = "view_reply";

enum class AnomalyKind {
  NoTicket,            // query on a user no ticket mentions
  UnrelatedUser,       // query on a user only other agents ever served
  JustificationAfter,  // the ticket shows up only after the query
};

inline constexpr AnomalyKind kAllAnomalyKinds[] = {AnomalyKind::NoTicket, AnomalyKind::UnrelatedUser,
                                                   AnomalyKind::JustificationAfter};

std::string_view anomaly_name(AnomalyKind k) noexcept;

struct SimConfig {
  int agents = 100;
  int days = 7;
  double tickets_per_agent_day = 3.6;
  std::map<std::string, double> workflow_mix{{std::string(kTemplateViewQueryReply), 0.5},
                                             {std::string(kTemplateViewTransferQueryReply), 0.3},
                                             {std::string(kTemplateViewReply), 0.2}};
  double anomaly_prevalence = 0.02;
  std::uint64_t seed = 1;

  int teams = 10;
  int users_per_team = 150;
  int background_users = 300;       // served by tier-1 agents only
  int tier1_agents = 20;
  double background_tickets_per_day = 60.0;
  TimestampMs epoch_ms = 1'704'067'200'000;  // 2024-01-01T00:00:00Z
};

// Throws PreconditionError on non-positive counts, unknown templates, mix
// weights that are negative or do not sum to 1, or prevalence outside [0, 1).
void validate_sim_config(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json sim_config_to_json(const SimConfig& cfg);
SimConfig load_sim_config(const std::filesystem::path& path);

struct SimOutput {
  std::vector<ActionRecord> actions;          // ordered by (start, id)
  std::map<std::string, std::string> truth;   // root id -> "normal" or anomaly name
};

// Deterministic given cfg.seed within one build.
SimOutput generate(const SimConfig& cfg);

void write_corpus(const std::filesystem::path& path, const std::vector<ActionRecord>& actions);
// JSON-lines {"id": ..., "label": ...}, ids ascending.
void write_truth(const std::filesystem::path& path, const std::map<std::string, std::string>& truth);

}  // namespace sentinel::sim
