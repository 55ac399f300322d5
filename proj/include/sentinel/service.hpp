#pragma once

// Audit queue service. All state lives in one directory:
//
//   service.json   method, k, embeddings, subgraphs, interesting, model, level
//   labels.jsonl   append-only event log: label and rerank events
//
// Paths inside service.json are relative to the directory unless absolute.
// Opening the directory replays the log, so a restart reproduces the queue.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/corpus.hpp"
#include "sentinel/ranking.hpp"
#include "sentinel/stats.hpp"
#include "sentinel/subgraph.hpp"

namespace sentinel::service {

enum class Verdict { WorthAuditing, NotWorthAuditing };

std::string_view verdict_name(Verdict v) noexcept;
Verdict parse_verdict(std::string_view s);  // throws PreconditionError

struct AuditLabel {
  std::string subgraph_id;
  Verdict verdict = Verdict::NotWorthAuditing;
  std::string auditor;
  TimestampMs at = 0;

  bool operator==(const AuditLabel&) const = default;
};

struct ServiceConfig {
  ranking::Method method = ranking::Method::NN;
  std::size_t k = 50;
  std::filesystem::path embeddings = "embeddings.jsonl";
  std::filesystem::path subgraphs = "subgraphs";
  std::vector<std::string> interesting;  // seed exemplars
  std::filesystem::path model;           // SMR classifier directory
  double level = 0.9;
};

ServiceConfig service_config_from_json(const nlohmann::json& j);
nlohmann::json service_config_to_json(const ServiceConfig& cfg);

struct QueueState {
  std::vector<ranking::RankedFinding> ranked;
  std::vector<AuditLabel> labels;                       // full history, log order
  std::map<std::pair<std::string, std::string>, AuditLabel> active;  // (subgraph, auditor) -> latest
  std::map<std::string, Verdict> latest;               // subgraph -> most recent verdict by anyone
  std::vector<std::string> interesting;                 // seeds, then worth_auditing ids ascending
  std::uint64_t reranks = 0;

  std::optional<Verdict> status(const std::string& subgraph_id) const;
  std::set<std::string> labeled_ids() const;

  bool operator==(const QueueState&) const = default;
};

class Service {
 public:
  using Clock = std::function<TimestampMs()>;

  // Throws StartupError naming the missing or unreadable artifact.
  static std::unique_ptr<Service> open(const std::filesystem::path& state_dir, Clock clock = {});

  const ServiceConfig& config() const noexcept { return cfg_; }
  std::shared_ptr<const QueueState> state() const;

  // Findings with label status. When `auditor` is set, ids that auditor has
  // an active verdict on are left out.
  nlohmann::json queue_json(std::optional<std::size_t> limit, const std::optional<std::string>& auditor) const;
  // Throws NotFound.
  nlohmann::json subgraph_json(const std::string& id) const;
  nlohmann::json stats_json() const;

  // Appends to the log and publishes the new state. Throws NotFound for an
  // unknown subgraph, PreconditionError for an empty auditor.
  AuditLabel label(const std::string& subgraph_id, Verdict verdict, const std::string& auditor);
  // Recomputes the ranking with the current interesting set, leaving out
  // every labeled id. Throws EmptyInterestingSet.
  std::shared_ptr<const QueueState> rerank();

  // The ranking a fresh rerank would publish, computed offline.
  static std::vector<ranking::RankedFinding> compute_ranking(const ServiceConfig& cfg,
                                                             const ranking::EmbeddingTable& embeddings,
                                                             const ranking::SmrClassifier* classifier,
                                                             const std::vector<std::string>& interesting,
                                                             const std::set<std::string>& exclude);

 private:
  Service() = default;

  void apply_label(QueueState& s, const AuditLabel& l) const;
  void apply_rerank(QueueState& s) const;
  void append_event(const nlohmann::json& event);
  void publish(std::shared_ptr<const QueueState> next);

  std::filesystem::path dir_;
  ServiceConfig cfg_;
  Clock clock_;
  ranking::EmbeddingTable embeddings_;
  std::map<std::string, RootedSubgraph> subgraphs_;
  std::optional<ranking::SmrClassifier> classifier_;

  mutable std::mutex read_mu_;  // guards the state_ pointer only
  std::mutex write_mu_;         // serializes label writes and reranks
  std::shared_ptr<const QueueState> state_;
};

// HTTP front end:
//   GET  /api/queue?limit=N[&auditor=A]
//   GET  /api/subgraph/{id}
//   POST /api/label    {"subgraph_id", "verdict", "auditor"}
//   POST /api/rerank
//   GET  /api/stats
// Errors come back as {"error": message} with 400 or 404.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port; port 0 picks a free one. Throws Error.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sentinel::service
