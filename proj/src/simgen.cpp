#include "sentinel/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <tuple>

#include "sentinel/error.hpp"

namespace sentinel::sim {

using nlohmann::json;

std::string_view anomaly_name(AnomalyKind k) noexcept {
  switch (k) {
    case AnomalyKind::NoTicket: return "NO_TICKET";
    case AnomalyKind::UnrelatedUser: return "UNRELATED_USER";
    case AnomalyKind::JustificationAfter: return "JUSTIFICATION_AFTER";
  }
  return "UNKNOWN";
}

namespace {

constexpr TimestampMs kMinute = 60'000;

bool known_template(std::string_view name) {
  return name == kTemplateViewQueryReply || name == kTemplateViewTransferQueryReply || name == kTemplateViewReply;
}

std::string team_name(int team) {
  static constexpr const char* kNames[] = {"Billing", "Ads",     "Payments", "Accounts", "Cloud",
                                           "Devices", "Maps",    "Mail",     "Video",    "Store"};
  if (team < static_cast<int>(std::size(kNames))) return kNames[team];
  return "Team" + std::to_string(team);
}

class Generator {
 public:
  explicit Generator(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    for (const auto& [name, weight] : cfg.workflow_mix) {
      templates_.push_back(name);
      weights_.push_back(weight);
    }
  }

  SimOutput run() {
    std::uniform_int_distribution<int> shift_hour(6, 11);
    std::vector<int> shifts;
    for (int a = 0; a < cfg_.agents; ++a) shifts.push_back(shift_hour(rng_));

    for (int d = 0; d < cfg_.days; ++d) {
      const TimestampMs day = cfg_.epoch_ms + d * kMillisPerDay;
      background_day(day);
      for (int a = 0; a < cfg_.agents; ++a) agent_day(a, day, day + shifts[a] * kMillisPerHour);
    }
    std::sort(out_.actions.begin(), out_.actions.end(), start_then_id_less);
    return std::move(out_);
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double exponential(double mean) { return std::exponential_distribution<double>(1.0 / mean)(rng_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(rng_); }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  static TimestampMs minutes(double m) { return static_cast<TimestampMs>(std::llround(m * kMinute)); }

  std::string agent(int a) const { return "agent." + std::to_string(a); }
  std::string tier1(int i) const { return "agent.t1." + std::to_string(i); }
  std::string team_user(int team) { return "user." + team_name(team) + "." + std::to_string(pick(cfg_.users_per_team)); }
  std::string background_user() { return "user.bg." + std::to_string(pick(cfg_.background_users)); }
  std::string fresh(const char* prefix) { return std::string(prefix) + std::to_string(fresh_++); }

  // Returns the id and end time of the emitted action.
  std::pair<std::string, TimestampMs> emit(std::string type, TimestampMs start, TimestampMs duration,
                                           std::vector<EntityRef> refs) {
    char id[32];
    std::snprintf(id, sizeof id, "act.%08llu", static_cast<unsigned long long>(next_id_++));
    std::sort(refs.begin(), refs.end());
    out_.actions.push_back({id, std::move(type), start, start + duration, std::move(refs)});
    return {id, start + duration};
  }

  static EntityRef ref(const char* type, std::string id, const char* rel) { return {type, std::move(id), rel}; }

  void background_day(TimestampMs day) {
    const int n = std::poisson_distribution<int>(cfg_.background_tickets_per_day)(rng_);
    for (int i = 0; i < n; ++i) {
      const std::string ticket = fresh("ticket.");
      const std::string user = background_user();
      const std::string who = tier1(pick(cfg_.tier1_agents));
      TimestampMs t = day + minutes(uniform(0.0, 22.0 * 60.0));
      auto [_, end] = emit("TicketManagement.Create", t, minutes(2),
                           {ref("ticket", ticket, "object"), ref("user", user, "requester")});
      t = end + minutes(uniform(5.0, 120.0));
      std::tie(_, end) = emit("TicketManagement.View", t, minutes(uniform(1.0, 10.0)),
                              {ref("agent", who, "actor"), ref("ticket", ticket, "object"), ref("user", user, "requester")});
      emit("TicketManagement.Reply", end + minutes(uniform(5.0, 60.0)), minutes(uniform(2.0, 10.0)),
           {ref("agent", who, "actor"), ref("ticket", ticket, "object"), ref("user", user, "requester")});
    }
  }

  // The user files the ticket; a tier-1 agent views it and assigns it to
  // `handler`, all before the handler picks it up at `pickup`.
  void open_ticket(const std::string& ticket, const std::string& user, const std::string& handler,
                   TimestampMs created, TimestampMs pickup) {
    auto [_, end] = emit("TicketManagement.Create", created, minutes(2),
                         {ref("ticket", ticket, "object"), ref("user", user, "requester")});
    const std::string triage = tier1(pick(cfg_.tier1_agents));
    const TimestampMs window = std::max<TimestampMs>(pickup - end - minutes(8), 0);
    const TimestampMs view = end + static_cast<TimestampMs>(uniform(0.0, 0.5) * static_cast<double>(window));
    std::tie(_, end) = emit("TicketManagement.View", view, minutes(uniform(1.0, 3.0)),
                            {ref("agent", triage, "actor"), ref("ticket", ticket, "object"),
                             ref("user", user, "requester")});
    emit("TicketManagement.Assign", end + static_cast<TimestampMs>(uniform(0.0, 0.5) * static_cast<double>(window)),
         minutes(1),
         {ref("agent", triage, "actor"), ref("agent", handler, "assignee"), ref("ticket", ticket, "object"),
          ref("user", user, "requester")});
  }

  TimestampMs query(const std::string& who, const std::string& user, TimestampMs at, std::string_view label) {
    auto [id, end] = emit(std::string(kQueryType), at, minutes(uniform(1.0, 5.0)),
                          {ref("agent", who, "actor"), ref("user", user, "subject")});
    out_.truth[id] = std::string(label);
    return end;
  }

  TimestampMs normal_ticket(int a, TimestampMs t, std::string_view tmpl) {
    const std::string who = agent(a);
    const int team = a % cfg_.teams;
    const std::string user = team_user(team);
    const std::string ticket = fresh("ticket.");
    // Created 5 minutes to a day or so before pickup; the assignment lands in between.
    const TimestampMs created = t - minutes(5.0 + exponential(480.0)) - minutes(35);
    open_ticket(ticket, user, who, created, t);

    auto [_, end] = emit("TicketManagement.View", t, minutes(uniform(1.0, 10.0)),
                         {ref("agent", who, "actor"), ref("ticket", ticket, "object"), ref("user", user, "requester")});
    // Reading up on the ticket takes a while before the agent acts on it.
    if (tmpl != kTemplateViewReply) end += minutes(uniform(20.0, 150.0));
    if (tmpl == kTemplateViewTransferQueryReply) {
      std::tie(_, end) = emit("TicketManagement.Transfer", end + minutes(uniform(1.0, 5.0)), minutes(1),
                              {ref("agent", who, "actor"), ref("ticket", ticket, "object"),
                               ref("user", user, "requester")});
    }
    if (tmpl != kTemplateViewReply) {
      std::tie(_, end) = emit(team_name(team) + "Tool.Lookup", end + minutes(uniform(1.0, 10.0)),
                              minutes(uniform(1.0, 5.0)), {ref("agent", who, "actor"), ref("user", user, "subject")});
      end = query(who, user, end + minutes(uniform(2.0, 15.0)), kNormalLabel);
    }
    std::tie(_, end) = emit("TicketManagement.Reply", end + minutes(uniform(5.0, 60.0)), minutes(uniform(2.0, 10.0)),
                            {ref("agent", who, "actor"), ref("ticket", ticket, "object"),
                             ref("user", user, "requester")});
    return end;
  }

  TimestampMs anomaly(int a, TimestampMs t, AnomalyKind kind) {
    const std::string who = agent(a);
    switch (kind) {
      case AnomalyKind::NoTicket:
        return query(who, fresh("user.dormant."), t, anomaly_name(kind));
      case AnomalyKind::UnrelatedUser:
        return query(who, background_user(), t, anomaly_name(kind));
      case AnomalyKind::JustificationAfter: {
        const std::string user = fresh("user.late.");
        const std::string ticket = fresh("ticket.");
        TimestampMs end = query(who, user, t, anomaly_name(kind));
        const TimestampMs view = end + minutes(uniform(160.0, 200.0));
        open_ticket(ticket, user, who, end + minutes(uniform(10.0, 120.0)), view);
        std::tie(std::ignore, end) = emit("TicketManagement.View", view, minutes(uniform(1.0, 10.0)),
                                          {ref("agent", who, "actor"), ref("ticket", ticket, "object"),
                                           ref("user", user, "requester")});
        std::tie(std::ignore, end) =
            emit("TicketManagement.Reply", end + minutes(uniform(5.0, 60.0)), minutes(uniform(2.0, 10.0)),
                 {ref("agent", who, "actor"), ref("ticket", ticket, "object"), ref("user", user, "requester")});
        // The agent carries on with other work right after the query itself.
        return t + minutes(10);
      }
    }
    return t;
  }

  void agent_day(int a, TimestampMs day, TimestampMs shift_start) {
    const TimestampMs last_start = day + 23 * kMillisPerHour;
    TimestampMs t = shift_start + minutes(uniform(0.0, 60.0));
    emit("Workspace.Login", t, minutes(1), {ref("agent", agent(a), "actor")});
    const int n = std::poisson_distribution<int>(cfg_.tickets_per_agent_day)(rng_);
    std::discrete_distribution<std::size_t> choose(weights_.begin(), weights_.end());
    for (int i = 0; i < n; ++i) {
      t += minutes(5.0 + exponential(60.0));
      if (t > last_start) break;
      const std::string& tmpl = templates_[choose(rng_)];
      if (tmpl != kTemplateViewReply && bernoulli(cfg_.anomaly_prevalence)) {
        t = anomaly(a, t, kAllAnomalyKinds[pick(3)]);
      } else {
        t = normal_ticket(a, t, tmpl);
      }
    }
  }

  const SimConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<std::string> templates_;
  std::vector<double> weights_;
  SimOutput out_;
  std::uint64_t next_id_ = 0;
  std::uint64_t fresh_ = 0;
};

}  // namespace

void validate_sim_config(const SimConfig& cfg) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw PreconditionError(std::string("simulation config: ") + what);
  };
  need(cfg.agents >= 1 && cfg.days >= 1, "agents and days must be positive");
  need(cfg.teams >= 1 && cfg.users_per_team >= 1 && cfg.background_users >= 1 && cfg.tier1_agents >= 1,
       "team, user and tier-1 counts must be positive");
  need(std::isfinite(cfg.tickets_per_agent_day) && cfg.tickets_per_agent_day > 0.0,
       "tickets_per_agent_day must be positive");
  need(std::isfinite(cfg.background_tickets_per_day) && cfg.background_tickets_per_day >= 0.0,
       "background_tickets_per_day must be non-negative");
  need(cfg.anomaly_prevalence >= 0.0 && cfg.anomaly_prevalence < 1.0, "anomaly_prevalence must be in [0, 1)");
  need(!cfg.workflow_mix.empty(), "workflow_mix is empty");
  double total = 0.0;
  for (const auto& [name, weight] : cfg.workflow_mix) {
    if (!known_template(name)) throw PreconditionError("simulation config: unknown workflow template " + name);
    need(std::isfinite(weight) && weight >= 0.0, "workflow weights must be non-negative");
    total += weight;
  }
  need(std::fabs(total - 1.0) <= 1e-9, "workflow weights must sum to 1");
}

SimConfig sim_config_from_json(const json& j) {
  static const std::set<std::string> kKeys{"agents",
                                           "days",
                                           "tickets_per_agent_day",
                                           "workflow_mix",
                                           "anomaly_prevalence",
                                           "seed",
                                           "teams",
                                           "users_per_team",
                                           "background_users",
                                           "tier1_agents",
                                           "background_tickets_per_day",
                                           "epoch_ms"};
  if (!j.is_object()) throw PreconditionError("simulation config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw PreconditionError("simulation config: unknown key " + key);
  }
  SimConfig cfg;
  try {
    cfg.agents = j.value("agents", cfg.agents);
    cfg.days = j.value("days", cfg.days);
    cfg.tickets_per_agent_day = j.value("tickets_per_agent_day", cfg.tickets_per_agent_day);
    if (j.contains("workflow_mix")) cfg.workflow_mix = j.at("workflow_mix").get<std::map<std::string, double>>();
    cfg.anomaly_prevalence = j.value("anomaly_prevalence", cfg.anomaly_prevalence);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.teams = j.value("teams", cfg.teams);
    cfg.users_per_team = j.value("users_per_team", cfg.users_per_team);
    cfg.background_users = j.value("background_users", cfg.background_users);
    cfg.tier1_agents = j.value("tier1_agents", cfg.tier1_agents);
    cfg.background_tickets_per_day = j.value("background_tickets_per_day", cfg.background_tickets_per_day);
    cfg.epoch_ms = j.value("epoch_ms", cfg.epoch_ms);
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("simulation config: ") + e.what());
  }
  validate_sim_config(cfg);
  return cfg;
}

json sim_config_to_json(const SimConfig& cfg) {
  return json{{"agents", cfg.agents},
              {"days", cfg.days},
              {"tickets_per_agent_day", cfg.tickets_per_agent_day},
              {"workflow_mix", cfg.workflow_mix},
              {"anomaly_prevalence", cfg.anomaly_prevalence},
              {"seed", cfg.seed},
              {"teams", cfg.teams},
              {"users_per_team", cfg.users_per_team},
              {"background_users", cfg.background_users},
              {"tier1_agents", cfg.tier1_agents},
              {"background_tickets_per_day", cfg.background_tickets_per_day},
              {"epoch_ms", cfg.epoch_ms}};
}

SimConfig load_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read simulation config: " + path.string());
  try {
    return sim_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("bad simulation config " + path.string() + ": " + e.what());
  }
}

SimOutput generate(const SimConfig& cfg) {
  validate_sim_config(cfg);
  return Generator(cfg).run();
}

void write_corpus(const std::filesystem::path& path, const std::vector<ActionRecord>& actions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus: " + path.string());
  for (const ActionRecord& a : actions) out << serialize_action_record(a) << '\n';
}

void write_truth(const std::filesystem::path& path, const std::map<std::string, std::string>& truth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write ground truth: " + path.string());
  for (const auto& [id, label] : truth) out << json{{"id", id}, {"label", label}}.dump() << '\n';
}

}  // namespace sentinel::sim
