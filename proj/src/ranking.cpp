#include "sentinel/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

namespace sentinel::ranking {

using nlohmann::json;

std::string_view method_name(Method m) noexcept { return m == Method::NN ? "nn" : "smr"; }

Method parse_method(std::string_view s) {
  if (s == "nn") return Method::NN;
  if (s == "smr") return Method::SMR;
  throw Error("unknown ranking method: " + std::string(s));
}

json finding_to_json(const RankedFinding& f) {
  return json{{"subgraph_id", f.subgraph_id},
              {"method", method_name(f.method)},
              {"score", f.score},
              {"rank", f.rank}};
}

RankedFinding finding_from_json(const json& j) {
  try {
    return RankedFinding{j.at("subgraph_id").get<std::string>(), parse_method(j.at("method").get<std::string>()),
                         j.at("score").get<double>(), j.at("rank").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw Error(std::string("bad ranked finding: ") + e.what());
  }
}

void write_findings(const std::filesystem::path& path, const std::vector<RankedFinding>& findings) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write findings: " + path.string());
  for (const RankedFinding& f : findings) out << finding_to_json(f).dump() << '\n';
}

std::vector<RankedFinding> read_findings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read findings: " + path.string());
  std::vector<RankedFinding> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(finding_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw Error(std::string("bad findings line: ") + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const RankedFinding& a, const RankedFinding& b) { return a.rank < b.rank; });
  return out;
}

double pairwise_distance(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim());
  return std::sqrt(kernels::squared_distance(a.values, b.values));
}

namespace {

struct Scored {
  double score;
  const std::string* id;
};

std::vector<RankedFinding> top_k(std::vector<Scored> scored, std::size_t k, Method method, bool ascending) {
  auto less = [ascending](const Scored& a, const Scored& b) {
    if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
    return *a.id < *b.id;
  };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), less);
  std::vector<RankedFinding> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({*scored[i].id, method, scored[i].score, i + 1});
  return out;
}

}  // namespace

std::vector<RankedFinding> nn_rank(const EmbeddingTable& embeddings, const std::vector<std::string>& interesting,
                                   std::size_t k, const std::set<std::string>& exclude) {
  if (interesting.empty()) throw EmptyInterestingSet();
  if (k == 0) throw PreconditionError("k must be >= 1");
  std::vector<const Embedding*> anchors;
  const std::set<std::string> interesting_set(interesting.begin(), interesting.end());
  for (const std::string& id : interesting_set) {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) throw PreconditionError("interesting id has no embedding: " + id);
    anchors.push_back(&it->second);
  }
  std::vector<Scored> scored;
  scored.reserve(embeddings.size());
  for (const auto& [id, e] : embeddings) {
    if (interesting_set.contains(id) || exclude.contains(id)) continue;
    double best = INFINITY;
    for (const Embedding* anchor : anchors) best = std::min(best, pairwise_distance(e, *anchor));
    scored.push_back({best, &id});
  }
  return top_k(std::move(scored), k, Method::NN, true);
}

// ---- mutations -------------------------------------------------------------

std::string_view mutation_name(MutationKind k) noexcept {
  switch (k) {
    case MutationKind::DetachTicketContext: return "DETACH_TICKET_CONTEXT";
    case MutationKind::SwapSubjectUser: return "SWAP_SUBJECT_USER";
    case MutationKind::TimeInvertJustification: return "TIME_INVERT_JUSTIFICATION";
  }
  return "UNKNOWN";
}

namespace {

bool is_ticket_action(const ActionRecord& a, const MutationConfig& cfg) {
  return a.action_type.starts_with(cfg.ticket_type_prefix);
}

std::vector<EntityKey> root_entities_of_type(const RootedSubgraph& g, const std::string& type) {
  std::vector<EntityKey> keys;
  for (const EntityRef& r : g.root().references) {
    if (r.entity_type == type) keys.push_back(r.key());
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

// Keeps only what is reachable from the root over the remaining edges.
void prune_unreachable(RootedSubgraph& g) {
  std::map<std::string, std::vector<const SubgraphEdge*>> by_action;
  std::map<EntityKey, std::vector<const SubgraphEdge*>> by_entity;
  std::set<std::string> action_ids;
  std::set<EntityKey> entity_keys;
  for (const ActionRecord& a : g.actions) action_ids.insert(a.id);
  for (const SubgraphEntity& e : g.entities) entity_keys.insert(e.key);
  for (const SubgraphEdge& e : g.edges) {
    if (!action_ids.contains(e.action_id) || !entity_keys.contains(e.entity)) continue;
    by_action[e.action_id].push_back(&e);
    by_entity[e.entity].push_back(&e);
  }
  std::set<std::string> seen_actions{g.root_id};
  std::set<EntityKey> seen_entities;
  std::deque<std::string> queue{g.root_id};
  while (!queue.empty()) {
    const std::string id = queue.front();
    queue.pop_front();
    for (const SubgraphEdge* e : by_action[id]) {
      if (!seen_entities.insert(e->entity).second) continue;
      for (const SubgraphEdge* back : by_entity[e->entity]) {
        if (seen_actions.insert(back->action_id).second) queue.push_back(back->action_id);
      }
    }
  }
  std::erase_if(g.actions, [&](const ActionRecord& a) { return !seen_actions.contains(a.id); });
  std::erase_if(g.entities, [&](const SubgraphEntity& e) { return !seen_entities.contains(e.key); });
  std::erase_if(g.edges, [&](const SubgraphEdge& e) {
    return !seen_actions.contains(e.action_id) || !seen_entities.contains(e.entity);
  });
}

std::vector<const RootedSubgraph*> swap_donors(const RootedSubgraph& g, std::span<const RootedSubgraph> pool,
                                               const MutationConfig& cfg) {
  const auto users = root_entities_of_type(g, cfg.user_entity_type);
  std::vector<const RootedSubgraph*> donors;
  if (users.empty()) return donors;
  for (const RootedSubgraph& d : pool) {
    if (d.root_id == g.root_id || d.agent_id == g.agent_id) continue;
    const auto donor_users = root_entities_of_type(d, cfg.user_entity_type);
    if (donor_users.empty()) continue;
    if (std::find(users.begin(), users.end(), donor_users.front()) != users.end()) continue;
    donors.push_back(&d);
  }
  return donors;
}

bool has_pre_root_ticket_action(const RootedSubgraph& g, const MutationConfig& cfg) {
  const TimestampMs root_start = g.root().start_ms;
  return std::any_of(g.actions.begin(), g.actions.end(), [&](const ActionRecord& a) {
    return a.id != g.root_id && is_ticket_action(a, cfg) && a.start_ms < root_start;
  });
}

bool has_ticket_action(const RootedSubgraph& g, const MutationConfig& cfg) {
  return std::any_of(g.actions.begin(), g.actions.end(),
                     [&](const ActionRecord& a) { return a.id != g.root_id && is_ticket_action(a, cfg); });
}

RootedSubgraph detach_ticket_context(RootedSubgraph g, const MutationConfig& cfg) {
  if (!has_ticket_action(g, cfg)) throw InapplicableMutation("no ticket actions to detach");
  std::set<std::string> removed;
  for (const ActionRecord& a : g.actions) {
    if (a.id != g.root_id && is_ticket_action(a, cfg)) removed.insert(a.id);
  }
  std::erase_if(g.actions, [&](const ActionRecord& a) { return removed.contains(a.id); });
  std::erase_if(g.edges, [&](const SubgraphEdge& e) { return removed.contains(e.action_id); });
  prune_unreachable(g);
  return g;
}

RootedSubgraph swap_subject_user(RootedSubgraph g, std::span<const RootedSubgraph> pool, std::mt19937_64& rng,
                                 const MutationConfig& cfg) {
  const auto donors = swap_donors(g, pool, cfg);
  if (donors.empty()) throw InapplicableMutation("no donor with a different agent and user");
  std::uniform_int_distribution<std::size_t> pick(0, donors.size() - 1);
  const RootedSubgraph& donor = *donors[pick(rng)];

  const auto old_users = root_entities_of_type(g, cfg.user_entity_type);
  const EntityKey new_user = root_entities_of_type(donor, cfg.user_entity_type).front();
  auto is_old_user = [&](const EntityKey& k) {
    return std::find(old_users.begin(), old_users.end(), k) != old_users.end();
  };

  std::set<std::string> removed;
  for (const ActionRecord& a : g.actions) {
    if (a.id == g.root_id) continue;
    for (const EntityKey& u : old_users) {
      if (a.references_entity(u)) removed.insert(a.id);
    }
  }
  std::erase_if(g.actions, [&](const ActionRecord& a) { return removed.contains(a.id); });
  std::erase_if(g.edges, [&](const SubgraphEdge& e) { return removed.contains(e.action_id) || is_old_user(e.entity); });
  std::erase_if(g.entities, [&](const SubgraphEntity& e) { return is_old_user(e.key); });

  // The root now names the donor's user instead of its own.
  ActionRecord* root = nullptr;
  for (ActionRecord& a : g.actions) {
    if (a.id == g.root_id) root = &a;
  }
  std::vector<EntityRef> refs;
  for (const EntityRef& r : root->references) {
    if (!is_old_user(r.key())) {
      refs.push_back(r);
    } else {
      EntityRef swapped{new_user.type, new_user.id, r.relationship};
      if (std::find(refs.begin(), refs.end(), swapped) == refs.end()) refs.push_back(swapped);
    }
  }
  root->references = std::move(refs);
  for (const EntityRef& r : root->references) {
    if (r.key() == new_user) g.edges.push_back({g.root_id, new_user, r.relationship});
  }
  auto existing = std::find_if(g.entities.begin(), g.entities.end(),
                               [&](const SubgraphEntity& e) { return e.key == new_user; });
  if (existing == g.entities.end()) {
    g.entities.push_back({new_user, 1});
  } else {
    existing->step = 1;
  }

  // Donor user's background, re-timed so offsets to the root are preserved.
  const TimestampMs shift = root->start_ms - donor.root().start_ms;
  std::set<std::string> present;
  for (const ActionRecord& a : g.actions) present.insert(a.id);
  std::map<EntityKey, int> donor_steps;
  for (const SubgraphEntity& e : donor.entities) donor_steps.emplace(e.key, e.step);
  std::map<EntityKey, int> entity_steps;
  for (const SubgraphEntity& e : g.entities) entity_steps.emplace(e.key, e.step);

  for (const ActionRecord& a : donor.actions) {
    if (a.id == donor.root_id || !a.references_entity(new_user)) continue;
    ActionRecord copy = a;
    copy.id = "swap/" + a.id;
    if (present.contains(copy.id)) continue;
    copy.start_ms += shift;
    copy.end_ms += shift;
    for (const EntityRef& r : copy.references) {
      const EntityKey k = r.key();
      if (!donor_steps.contains(k)) continue;
      if (!entity_steps.contains(k)) {
        entity_steps.emplace(k, 2);
        g.entities.push_back({k, 2});
      }
      g.edges.push_back({copy.id, k, r.relationship});
    }
    present.insert(copy.id);
    g.actions.push_back(std::move(copy));
  }
  prune_unreachable(g);
  return g;
}

RootedSubgraph time_invert_justification(RootedSubgraph g, const MutationConfig& cfg) {
  if (!has_pre_root_ticket_action(g, cfg)) throw InapplicableMutation("no pre-root ticket actions");
  const TimestampMs root_start = g.root().start_ms;
  for (ActionRecord& a : g.actions) {
    if (a.id == g.root_id || !is_ticket_action(a, cfg) || a.start_ms >= root_start) continue;
    const TimestampMs duration = a.end_ms - a.start_ms;
    a.start_ms = root_start + (root_start - a.start_ms);
    a.end_ms = a.start_ms + duration;
  }
  return g;
}

}  // namespace

std::vector<MutationKind> applicable_mutations(const RootedSubgraph& g, std::span<const RootedSubgraph> donor_pool,
                                               const MutationConfig& cfg) {
  std::vector<MutationKind> kinds;
  if (has_ticket_action(g, cfg)) kinds.push_back(MutationKind::DetachTicketContext);
  if (!swap_donors(g, donor_pool, cfg).empty()) kinds.push_back(MutationKind::SwapSubjectUser);
  if (has_pre_root_ticket_action(g, cfg)) kinds.push_back(MutationKind::TimeInvertJustification);
  return kinds;
}

RootedSubgraph mutate(const RootedSubgraph& g, MutationKind kind, std::span<const RootedSubgraph> donor_pool,
                      std::mt19937_64& rng, const MutationConfig& cfg) {
  RootedSubgraph out;
  switch (kind) {
    case MutationKind::DetachTicketContext: out = detach_ticket_context(g, cfg); break;
    case MutationKind::SwapSubjectUser: out = swap_subject_user(g, donor_pool, rng, cfg); break;
    case MutationKind::TimeInvertJustification: out = time_invert_justification(g, cfg); break;
  }
  out.provenance.emplace_back(mutation_name(kind));
  canonicalize(out);
  validate_subgraph(out);
  return out;
}

std::vector<RootedSubgraph> mutate_all(std::span<const RootedSubgraph> naturals, std::uint64_t seed,
                                       const MutationConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::vector<RootedSubgraph> out;
  out.reserve(naturals.size());
  for (const RootedSubgraph& g : naturals) {
    const auto kinds = applicable_mutations(g, naturals, cfg);
    if (kinds.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, kinds.size() - 1);
    out.push_back(mutate(g, kinds[pick(rng)], naturals, rng, cfg));
  }
  return out;
}

// ---- SMR -------------------------------------------------------------------

SmrClassifier::SmrClassifier(nn::Parameters params, std::size_t input_dim, std::size_t hidden)
    : params_(std::move(params)), input_dim_(input_dim), hidden_(hidden) {}

nn::Var SmrClassifier::logits(nn::Tape& t, nn::Var batch) {
  nn::Var h = nn::relu(nn::add_row(nn::matmul(batch, t.param("hidden/weight")), t.param("hidden/bias")));
  return nn::add_row(nn::matmul(h, t.param("output/weight")), t.param("output/bias"));
}

double SmrClassifier::probability_mutated(const Embedding& e) const {
  if (e.dim() != input_dim_) throw DimensionMismatch(e.dim(), input_dim_);
  nn::Tape t(&params_);
  return nn::sigmoid(logits(t, t.constant(nn::Matrix(1, e.dim(), e.values))).scalar());
}

void SmrClassifier::save(const std::filesystem::path& dir) const {
  nn::save_parameters(dir, params_);
  std::ofstream out(dir / "classifier.json", std::ios::trunc);
  if (!out) throw Error("cannot write classifier.json in " + dir.string());
  out << json{{"kind", "smr"}, {"input_dim", input_dim_}, {"hidden", hidden_}}.dump(2) << '\n';
}

SmrClassifier SmrClassifier::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "classifier.json");
  if (!in) throw Error("missing classifier.json in " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(std::string("bad classifier.json: ") + e.what());
  }
  if (meta.value("kind", "") != "smr") throw Error("model directory does not hold an SMR classifier");
  return SmrClassifier(nn::load_parameters(dir), meta.at("input_dim").get<std::size_t>(),
                       meta.at("hidden").get<std::size_t>());
}

SmrClassifier train_smr(std::span<const Embedding> natural, std::span<const Embedding> mutated, std::uint64_t seed,
                        const SmrTrainConfig& cfg) {
  if (natural.empty() || mutated.empty()) throw PreconditionError("SMR training needs naturals and mutants");
  const std::size_t dim = natural.front().dim();
  for (const auto set : {natural, mutated}) {
    for (const Embedding& e : set) {
      if (e.dim() != dim) throw DimensionMismatch(e.dim(), dim);
    }
  }
  std::mt19937_64 rng(seed);
  nn::Parameters params;
  params.add_glorot("hidden/weight", dim, cfg.hidden, rng);
  params.add_zeros("hidden/bias", 1, cfg.hidden);
  params.add_glorot("output/weight", cfg.hidden, 1, rng);
  params.add_zeros("output/bias", 1, 1);

  struct Sample {
    const Embedding* x;
    double label;
  };
  std::vector<Sample> data;
  for (const Embedding& e : natural) data.push_back({&e, 0.0});
  for (const Embedding& e : mutated) data.push_back({&e, 1.0});

  nn::AdamState state;
  nn::AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(data.begin(), data.end(), rng);
    for (std::size_t begin = 0; begin < data.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(data.size(), begin + cfg.batch_size);
      nn::Matrix x(end - begin, dim);
      std::vector<double> labels;
      for (std::size_t i = begin; i < end; ++i) {
        std::copy(data[i].x->values.begin(), data[i].x->values.end(), x.row(i - begin).begin());
        labels.push_back(data[i].label);
      }
      nn::train_step(params, state, [&](nn::Tape& t) {
        return nn::logistic_loss(SmrClassifier::logits(t, t.constant(x)), labels);
      }, adam);
    }
  }
  return SmrClassifier(std::move(params), dim, cfg.hidden);
}

double smr_accuracy(const SmrClassifier& c, std::span<const Embedding> natural, std::span<const Embedding> mutated) {
  std::size_t correct = 0;
  for (const Embedding& e : natural) correct += c.probability_mutated(e) < 0.5 ? 1 : 0;
  for (const Embedding& e : mutated) correct += c.probability_mutated(e) >= 0.5 ? 1 : 0;
  const std::size_t total = natural.size() + mutated.size();
  if (total == 0) throw PreconditionError("accuracy of an empty set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<RankedFinding> smr_rank(const SmrClassifier& c, const EmbeddingTable& naturals, std::size_t k,
                                    const std::set<std::string>& exclude) {
  if (k == 0) throw PreconditionError("k must be >= 1");
  std::vector<Scored> scored;
  scored.reserve(naturals.size());
  for (const auto& [id, e] : naturals) {
    if (exclude.contains(id)) continue;
    scored.push_back({c.probability_mutated(e), &id});
  }
  return top_k(std::move(scored), k, Method::SMR, false);
}

}  // namespace sentinel::ranking
