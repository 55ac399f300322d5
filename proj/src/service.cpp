#include "sentinel/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "sentinel/error.hpp"

namespace sentinel::service {

using nlohmann::json;

namespace {

constexpr const char* kConfigFile = "service.json";
constexpr const char* kLogFile = "labels.jsonl";

TimestampMs system_now() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::filesystem::path resolve(const std::filesystem::path& dir, const std::filesystem::path& p) {
  return p.is_absolute() ? p : dir / p;
}

json label_to_json(const AuditLabel& l) {
  return json{{"subgraph_id", l.subgraph_id},
              {"verdict", verdict_name(l.verdict)},
              {"auditor", l.auditor},
              {"at", l.at}};
}

}  // namespace

std::string_view verdict_name(Verdict v) noexcept {
  return v == Verdict::WorthAuditing ? "worth_auditing" : "not_worth_auditing";
}

Verdict parse_verdict(std::string_view s) {
  if (s == "worth_auditing") return Verdict::WorthAuditing;
  if (s == "not_worth_auditing") return Verdict::NotWorthAuditing;
  throw PreconditionError("unknown verdict: " + std::string(s));
}

ServiceConfig service_config_from_json(const json& j) {
  static const std::set<std::string> kKeys{"method", "k", "embeddings", "subgraphs", "interesting", "model", "level"};
  if (!j.is_object()) throw PreconditionError("service config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw PreconditionError("service config: unknown key " + key);
  }
  ServiceConfig cfg;
  try {
    if (j.contains("method")) cfg.method = ranking::parse_method(j.at("method").get<std::string>());
    cfg.k = j.value("k", cfg.k);
    if (j.contains("embeddings")) cfg.embeddings = j.at("embeddings").get<std::string>();
    if (j.contains("subgraphs")) cfg.subgraphs = j.at("subgraphs").get<std::string>();
    if (j.contains("interesting")) cfg.interesting = j.at("interesting").get<std::vector<std::string>>();
    if (j.contains("model")) cfg.model = j.at("model").get<std::string>();
    cfg.level = j.value("level", cfg.level);
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("service config: ") + e.what());
  }
  if (cfg.k == 0) throw PreconditionError("service config: k must be >= 1");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw PreconditionError("service config: level must be in (0, 1)");
  if (cfg.method == ranking::Method::SMR && cfg.model.empty()) {
    throw PreconditionError("service config: smr needs a model directory");
  }
  return cfg;
}

json service_config_to_json(const ServiceConfig& cfg) {
  json j{{"method", ranking::method_name(cfg.method)},
         {"k", cfg.k},
         {"embeddings", cfg.embeddings.string()},
         {"subgraphs", cfg.subgraphs.string()},
         {"interesting", cfg.interesting},
         {"level", cfg.level}};
  if (!cfg.model.empty()) j["model"] = cfg.model.string();
  return j;
}

std::optional<Verdict> QueueState::status(const std::string& subgraph_id) const {
  auto it = latest.find(subgraph_id);
  if (it == latest.end()) return std::nullopt;
  return it->second;
}

std::set<std::string> QueueState::labeled_ids() const {
  std::set<std::string> ids;
  for (const auto& [id, _] : latest) ids.insert(id);
  return ids;
}

// ---- Service ---------------------------------------------------------------

std::unique_ptr<Service> Service::open(const std::filesystem::path& state_dir, Clock clock) {
  std::unique_ptr<Service> s(new Service());
  s->dir_ = state_dir;
  s->clock_ = clock ? std::move(clock) : Clock(system_now);

  const auto config_path = state_dir / kConfigFile;
  {
    std::ifstream in(config_path);
    if (!in) throw StartupError(config_path.string(), "not readable");
    try {
      s->cfg_ = service_config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw StartupError(config_path.string(), e.what());
    } catch (const PreconditionError& e) {
      throw StartupError(config_path.string(), e.what());
    }
  }

  const auto emb_path = resolve(state_dir, s->cfg_.embeddings);
  if (!std::filesystem::exists(emb_path)) throw StartupError(emb_path.string(), "missing");
  try {
    s->embeddings_ = read_embeddings(emb_path);
  } catch (const Error& e) {
    throw StartupError(emb_path.string(), e.what());
  }

  const auto sg_path = resolve(state_dir, s->cfg_.subgraphs);
  if (!std::filesystem::is_directory(sg_path)) throw StartupError(sg_path.string(), "missing directory");
  try {
    for (RootedSubgraph& g : read_subgraph_dir(sg_path)) {
      std::string id = g.root_id;
      s->subgraphs_.emplace(std::move(id), std::move(g));
    }
  } catch (const Error& e) {
    throw StartupError(sg_path.string(), e.what());
  }

  if (s->cfg_.method == ranking::Method::SMR) {
    const auto model_path = resolve(state_dir, s->cfg_.model);
    try {
      s->classifier_ = ranking::SmrClassifier::load(model_path);
    } catch (const Error& e) {
      throw StartupError(model_path.string(), e.what());
    }
  }
  for (const std::string& id : s->cfg_.interesting) {
    if (!s->embeddings_.contains(id)) throw StartupError(config_path.string(), "interesting id has no embedding: " + id);
  }

  auto state = std::make_shared<QueueState>();
  state->interesting = s->cfg_.interesting;
  if (s->cfg_.method == ranking::Method::SMR || !state->interesting.empty()) s->apply_rerank(*state);
  state->reranks = 0;

  const auto log_path = state_dir / kLogFile;
  if (std::filesystem::exists(log_path)) {
    std::ifstream in(log_path);
    if (!in) throw StartupError(log_path.string(), "not readable");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const json ev = json::parse(line);
        const std::string kind = ev.at("event").get<std::string>();
        if (kind == "label") {
          s->apply_label(*state, {ev.at("subgraph_id").get<std::string>(),
                                  parse_verdict(ev.at("verdict").get<std::string>()),
                                  ev.at("auditor").get<std::string>(), ev.at("at").get<TimestampMs>()});
        } else if (kind == "rerank") {
          s->apply_rerank(*state);
        } else {
          throw PreconditionError("unknown event " + kind);
        }
      } catch (const std::exception& e) {
        throw StartupError(log_path.string(), "line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  s->state_ = std::move(state);
  return s;
}

std::shared_ptr<const QueueState> Service::state() const {
  std::lock_guard lock(read_mu_);
  return state_;
}

void Service::publish(std::shared_ptr<const QueueState> next) {
  std::lock_guard lock(read_mu_);
  state_ = std::move(next);
}

void Service::apply_label(QueueState& s, const AuditLabel& l) const {
  s.labels.push_back(l);
  s.active[{l.subgraph_id, l.auditor}] = l;
  s.latest[l.subgraph_id] = l.verdict;

  std::set<std::string> worth;
  for (const auto& [id, v] : s.latest) {
    if (v == Verdict::WorthAuditing) worth.insert(id);
  }
  s.interesting = cfg_.interesting;
  for (const std::string& id : worth) {
    if (std::find(cfg_.interesting.begin(), cfg_.interesting.end(), id) == cfg_.interesting.end()) {
      s.interesting.push_back(id);
    }
  }
}

void Service::apply_rerank(QueueState& s) const {
  s.ranked = compute_ranking(cfg_, embeddings_, classifier_ ? &*classifier_ : nullptr, s.interesting,
                             s.labeled_ids());
  ++s.reranks;
}

std::vector<ranking::RankedFinding> Service::compute_ranking(const ServiceConfig& cfg,
                                                             const ranking::EmbeddingTable& embeddings,
                                                             const ranking::SmrClassifier* classifier,
                                                             const std::vector<std::string>& interesting,
                                                             const std::set<std::string>& exclude) {
  if (cfg.method == ranking::Method::NN) return ranking::nn_rank(embeddings, interesting, cfg.k, exclude);
  if (classifier == nullptr) throw PreconditionError("smr ranking without a classifier");
  return ranking::smr_rank(*classifier, embeddings, cfg.k, exclude);
}

void Service::append_event(const json& event) {
  const std::string line = event.dump() + "\n";
  const auto path = dir_ / kLogFile;
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open label log " + path.string() + ": " + std::strerror(errno));
  // One write per event keeps each line whole under O_APPEND.
  const ssize_t n = ::write(fd, line.data(), line.size());
  const int err = errno;
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size())) {
    throw Error("short write to label log " + path.string() + ": " + std::strerror(err));
  }
}

AuditLabel Service::label(const std::string& subgraph_id, Verdict verdict, const std::string& auditor) {
  if (auditor.empty()) throw PreconditionError("auditor must be non-empty");
  if (!embeddings_.contains(subgraph_id)) throw NotFound("unknown subgraph: " + subgraph_id);
  std::lock_guard lock(write_mu_);
  AuditLabel l{subgraph_id, verdict, auditor, clock_()};
  auto next = std::make_shared<QueueState>(*state());
  apply_label(*next, l);
  json ev = label_to_json(l);
  ev["event"] = "label";
  append_event(ev);
  publish(std::move(next));
  return l;
}

std::shared_ptr<const QueueState> Service::rerank() {
  std::lock_guard lock(write_mu_);
  auto next = std::make_shared<QueueState>(*state());
  // Readers keep the previous queue until the swap below.
  apply_rerank(*next);
  append_event(json{{"event", "rerank"}, {"at", clock_()}});
  std::shared_ptr<const QueueState> published = next;
  publish(next);
  return published;
}

json Service::queue_json(std::optional<std::size_t> limit, const std::optional<std::string>& auditor) const {
  const auto s = state();
  json items = json::array();
  for (const ranking::RankedFinding& f : s->ranked) {
    if (limit && items.size() >= *limit) break;
    if (auditor && s->active.contains({f.subgraph_id, *auditor})) continue;
    json item = ranking::finding_to_json(f);
    const auto st = s->status(f.subgraph_id);
    item["label"] = st ? std::string(verdict_name(*st)) : std::string("unlabeled");
    items.push_back(std::move(item));
  }
  return json{{"method", ranking::method_name(cfg_.method)},
              {"k", cfg_.k},
              {"interesting", s->interesting},
              {"reranks", s->reranks},
              {"items", std::move(items)}};
}

json Service::subgraph_json(const std::string& id) const {
  auto it = subgraphs_.find(id);
  if (it == subgraphs_.end()) throw NotFound("unknown subgraph: " + id);
  const RootedSubgraph& g = it->second;
  json j = subgraph_to_json(g);
  for (std::size_t i = 0; i < g.actions.size(); ++i) {
    j["actions"][i]["delta_start_hours"] = delta_start_hours(g, g.actions[i]);
  }
  const auto s = state();
  const auto st = s->status(id);
  j["label"] = st ? std::string(verdict_name(*st)) : std::string("unlabeled");
  for (const ranking::RankedFinding& f : s->ranked) {
    if (f.subgraph_id == id) j["finding"] = ranking::finding_to_json(f);
  }
  return j;
}

json Service::stats_json() const {
  const auto s = state();
  stats::AuditOutcome o;
  o.k = s->latest.size();
  for (const auto& [_, v] : s->latest) o.w += v == Verdict::WorthAuditing ? 1 : 0;
  const stats::Interval ci = stats::credible_interval(o, cfg_.level);
  json j{{"k", o.k},
         {"w", o.w},
         {"level", cfg_.level},
         {"interval", {{"lo", ci.lo}, {"hi", ci.hi}}}};
  j["precision"] = o.k == 0 ? json(nullptr) : json(static_cast<double>(o.w) / static_cast<double>(o.k));
  return j;
}

// ---- HTTP ------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const NotFound& e) {
    reply(res, 404, json{{"error", e.what()}});
  } catch (const PreconditionError& e) {
    reply(res, 400, json{{"error", e.what()}});
  } catch (const EmptyInterestingSet& e) {
    reply(res, 400, json{{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, json{{"error", std::string("bad request body: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, json{{"error", e.what()}});
  }
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& svc = service;

  srv.Get("/api/queue", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<std::size_t> limit;
      if (req.has_param("limit")) {
        const std::string v = req.get_param_value("limit");
        std::size_t pos = 0;
        long long n = -1;
        try {
          n = std::stoll(v, &pos);
        } catch (const std::exception&) {
        }
        if (n < 0 || pos != v.size()) throw PreconditionError("limit must be a non-negative integer");
        limit = static_cast<std::size_t>(n);
      }
      std::optional<std::string> auditor;
      if (req.has_param("auditor")) auditor = req.get_param_value("auditor");
      reply(res, 200, svc.queue_json(limit, auditor));
    });
  });

  srv.Get(R"(/api/subgraph/(.+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, svc.subgraph_json(req.matches[1].str())); });
  });

  srv.Post("/api/label", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const AuditLabel l = svc.label(body.at("subgraph_id").get<std::string>(),
                                     parse_verdict(body.at("verdict").get<std::string>()),
                                     body.at("auditor").get<std::string>());
      reply(res, 200, label_to_json(l));
    });
  });

  srv.Post("/api/rerank", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      svc.rerank();
      reply(res, 200, svc.queue_json(std::nullopt, std::nullopt));
    });
  });

  srv.Get("/api/stats", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, svc.stats_json()); });
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace sentinel::service
