#include "sentinel/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "sentinel/error.hpp"
#include "sentinel/kernels.hpp"

namespace sentinel::gnn {

using nlohmann::json;
using nn::Matrix;
using nn::Var;

std::size_t hash_bucket(std::string_view s, std::size_t buckets) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h % buckets);
}

NodeFeatures encode_features(const RootedSubgraph& input, const FeatureConfig& cfg) {
  RootedSubgraph g = input;
  canonicalize(g);
  const ActionRecord& root = g.root();

  NodeFeatures x;
  x.actions = Matrix(g.actions.size(), cfg.action_dim());
  std::map<std::string, std::size_t> action_row;
  for (std::size_t i = 0; i < g.actions.size(); ++i) {
    const ActionRecord& a = g.actions[i];
    action_row.emplace(a.id, i);
    if (a.id == root.id) x.root = i;
    x.actions(i, hash_bucket(a.action_type, cfg.buckets)) = 1.0;
    const double hours = static_cast<double>(kMillisPerHour);
    x.actions(i, cfg.buckets) = signed_log(static_cast<double>(a.start_ms - root.start_ms) / hours);
    x.actions(i, cfg.buckets + 1) = signed_log(static_cast<double>(a.end_ms - a.start_ms) / hours);
  }

  x.entities = Matrix(g.entities.size(), cfg.entity_dim());
  std::map<EntityKey, std::size_t> entity_row;
  for (std::size_t i = 0; i < g.entities.size(); ++i) {
    const SubgraphEntity& e = g.entities[i];
    entity_row.emplace(e.key, i);
    x.entities(i, hash_bucket(e.key.type, cfg.buckets)) = 1.0;
    const std::size_t step = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(e.step, 1)), 1, cfg.max_step);
    x.entities(i, cfg.buckets + step - 1) = 1.0;
  }

  x.edges = Matrix(g.edges.size(), cfg.edge_dim());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const SubgraphEdge& e = g.edges[i];
    x.edges(i, hash_bucket(e.relationship, cfg.buckets)) = 1.0;
    x.edge_action.push_back(action_row.at(e.action_id));
    x.edge_entity.push_back(entity_row.at(e.entity));
  }
  return x;
}

// ---- hyperparameters -------------------------------------------------------

void validate_hyperparams(const GnnHyperparams& hp) {
  if (hp.embedding_dim == 0 || hp.conv_layers == 0 || hp.attention_heads == 0 || hp.readout_rounds == 0 ||
      hp.batch_size == 0) {
    throw PreconditionError("GNN hyperparameters must be positive");
  }
  if (hp.embedding_dim % hp.attention_heads != 0) {
    throw PreconditionError("embedding_dim must be divisible by attention_heads");
  }
  if (!(hp.learning_rate > 0.0)) throw PreconditionError("learning_rate must be > 0");
  if (hp.features.buckets == 0 || hp.features.max_step == 0) throw PreconditionError("bad feature config");
  nn::validate_loss_config(hp.loss);
}

json hyperparams_to_json(const GnnHyperparams& hp) {
  return json{{"embedding_dim", hp.embedding_dim},
              {"conv_layers", hp.conv_layers},
              {"attention_heads", hp.attention_heads},
              {"readout_rounds", hp.readout_rounds},
              {"delta", hp.loss.delta},
              {"target_separation", hp.loss.target_separation},
              {"phi", hp.loss.phi},
              {"steps", hp.steps},
              {"batch_size", hp.batch_size},
              {"learning_rate", hp.learning_rate},
              {"seed", hp.seed},
              {"buckets", hp.features.buckets},
              {"max_step", hp.features.max_step}};
}

GnnHyperparams hyperparams_from_json(const json& j) {
  GnnHyperparams hp;
  try {
    hp.embedding_dim = j.value("embedding_dim", hp.embedding_dim);
    hp.conv_layers = j.value("conv_layers", hp.conv_layers);
    hp.attention_heads = j.value("attention_heads", hp.attention_heads);
    hp.readout_rounds = j.value("readout_rounds", hp.readout_rounds);
    hp.loss.delta = j.value("delta", hp.loss.delta);
    hp.loss.target_separation = j.value("target_separation", hp.loss.target_separation);
    hp.loss.phi = j.value("phi", hp.loss.phi);
    hp.steps = j.value("steps", hp.steps);
    hp.batch_size = j.value("batch_size", hp.batch_size);
    hp.learning_rate = j.value("learning_rate", hp.learning_rate);
    hp.seed = j.value("seed", hp.seed);
    hp.features.buckets = j.value("buckets", hp.features.buckets);
    hp.features.max_step = j.value("max_step", hp.features.max_step);
  } catch (const json::exception& e) {
    throw Error(std::string("bad hyperparameters: ") + e.what());
  }
  validate_hyperparams(hp);
  return hp;
}

// ---- model -----------------------------------------------------------------

namespace {

std::string conv_prefix(std::size_t layer, const char* side) {
  return "conv" + std::to_string(layer) + "/" + side;
}

std::string head_name(const std::string& prefix, std::size_t head, const char* what) {
  return prefix + "/h" + std::to_string(head) + "/" + what;
}

void add_attention_block(nn::Parameters& p, const std::string& prefix, const GnnHyperparams& hp,
                         bool with_edges, std::mt19937_64& rng) {
  const std::size_t d = hp.embedding_dim;
  const std::size_t dh = d / hp.attention_heads;
  for (std::size_t h = 0; h < hp.attention_heads; ++h) {
    p.add_glorot(head_name(prefix, h, "query"), d, dh, rng);
    p.add_glorot(head_name(prefix, h, "key"), d, dh, rng);
    if (with_edges) p.add_glorot(head_name(prefix, h, "edge"), hp.features.edge_dim(), dh, rng);
    p.add_glorot(head_name(prefix, h, "att"), 1, dh, rng);
  }
  p.add_glorot(prefix + "/mix", d, d, rng);
  p.add_zeros(prefix + "/bias", 1, d);
}

// GATv2 scoring: att . LeakyReLU(query(dst) + key(src) [+ edge]) with the
// key projection doubling as the message. Returns tanh(dst + mixed heads).
Var bipartite_attention(nn::Tape& t, const GnnHyperparams& hp, const std::string& prefix, Var dst, Var src,
                        Var edge_x, const std::vector<std::size_t>& dst_index,
                        const std::vector<std::size_t>& src_index) {
  const std::size_t n_dst = dst.value().rows();
  std::vector<Var> heads;
  for (std::size_t h = 0; h < hp.attention_heads; ++h) {
    Var q = nn::gather_rows(nn::matmul(dst, t.param(head_name(prefix, h, "query"))), dst_index);
    Var k = nn::gather_rows(nn::matmul(src, t.param(head_name(prefix, h, "key"))), src_index);
    Var e = nn::matmul(edge_x, t.param(head_name(prefix, h, "edge")));
    Var z = nn::leaky_relu(nn::add(nn::add(q, k), e));
    Var alpha = nn::segment_softmax(nn::rowdot(z, t.param(head_name(prefix, h, "att"))), dst_index, n_dst);
    heads.push_back(nn::segment_weighted_sum(k, alpha, dst_index, n_dst));
  }
  Var mixed = nn::add_row(nn::matmul(nn::concat_cols(heads), t.param(prefix + "/mix")), t.param(prefix + "/bias"));
  return nn::tanh(nn::add(dst, mixed));
}

Var global_attention(nn::Tape& t, const GnnHyperparams& hp, const std::string& prefix, Var global, Var nodes) {
  const std::vector<std::size_t> one_segment(nodes.value().rows(), 0);
  std::vector<Var> heads;
  for (std::size_t h = 0; h < hp.attention_heads; ++h) {
    Var q = nn::matmul(global, t.param(head_name(prefix, h, "query")));
    Var k = nn::matmul(nodes, t.param(head_name(prefix, h, "key")));
    Var z = nn::leaky_relu(nn::add_row(k, q));
    Var alpha = nn::segment_softmax(nn::rowdot(z, t.param(head_name(prefix, h, "att"))), one_segment, 1);
    heads.push_back(nn::segment_weighted_sum(k, alpha, one_segment, 1));
  }
  Var mixed = nn::add_row(nn::matmul(nn::concat_cols(heads), t.param(prefix + "/mix")), t.param(prefix + "/bias"));
  return nn::tanh(nn::add(global, mixed));
}

}  // namespace

nn::Parameters init_parameters(const GnnHyperparams& hp) {
  validate_hyperparams(hp);
  std::mt19937_64 rng(hp.seed);
  nn::Parameters p;
  const std::size_t d = hp.embedding_dim;
  p.add_glorot("input/action/weight", hp.features.action_dim(), d, rng);
  p.add_zeros("input/action/bias", 1, d);
  p.add_glorot("input/entity/weight", hp.features.entity_dim(), d, rng);
  p.add_zeros("input/entity/bias", 1, d);
  for (std::size_t l = 0; l < hp.conv_layers; ++l) {
    add_attention_block(p, conv_prefix(l, "entity"), hp, true, rng);
    add_attention_block(p, conv_prefix(l, "action"), hp, true, rng);
  }
  p.add_glorot("global/init/weight", d, d, rng);
  p.add_zeros("global/init/bias", 1, d);
  for (std::size_t r = 0; r < hp.readout_rounds; ++r) {
    add_attention_block(p, "readout" + std::to_string(r), hp, false, rng);
  }
  p.add_glorot("output/weight", d, d, rng);
  p.add_zeros("output/bias", 1, d);
  return p;
}

Var embed_on_tape(nn::Tape& t, const GnnHyperparams& hp, const NodeFeatures& x) {
  Var actions = nn::tanh(nn::add_row(nn::matmul(t.constant(x.actions), t.param("input/action/weight")),
                                     t.param("input/action/bias")));
  Var entities = nn::tanh(nn::add_row(nn::matmul(t.constant(x.entities), t.param("input/entity/weight")),
                                      t.param("input/entity/bias")));
  Var edges = t.constant(x.edges);
  for (std::size_t l = 0; l < hp.conv_layers; ++l) {
    entities = bipartite_attention(t, hp, conv_prefix(l, "entity"), entities, actions, edges, x.edge_entity,
                                   x.edge_action);
    actions = bipartite_attention(t, hp, conv_prefix(l, "action"), actions, entities, edges, x.edge_action,
                                  x.edge_entity);
  }
  Var global = nn::tanh(nn::add_row(nn::matmul(nn::gather_rows(actions, {x.root}), t.param("global/init/weight")),
                                    t.param("global/init/bias")));
  Var nodes = x.entities.rows() > 0 ? nn::concat_rows({actions, entities}) : actions;
  for (std::size_t r = 0; r < hp.readout_rounds; ++r) {
    global = global_attention(t, hp, "readout" + std::to_string(r), global, nodes);
  }
  Var out = nn::add_row(nn::matmul(global, t.param("output/weight")), t.param("output/bias"));
  return nn::l2_normalize_rows(out);
}

Embedding embed_features(const nn::Parameters& params, const GnnHyperparams& hp, const NodeFeatures& x) {
  nn::Tape tape(&params);
  Var out = embed_on_tape(tape, hp, x);
  return normalize_embedding(out.value().data());
}

Embedding gnn_embed(const nn::Parameters& params, const GnnHyperparams& hp, const RootedSubgraph& g) {
  return embed_features(params, hp, encode_features(g, hp.features));
}

// ---- pair sampling ---------------------------------------------------------

PairGroups group_by_agent_day(std::span<const RootedSubgraph> subgraphs, std::span<const std::size_t> members) {
  PairGroups groups;
  auto add = [&](std::size_t i) { groups[{subgraphs[i].agent_id, subgraphs[i].day}].push_back(i); };
  if (members.empty()) {
    for (std::size_t i = 0; i < subgraphs.size(); ++i) add(i);
  } else {
    for (std::size_t i : members) add(i);
  }
  return groups;
}

PairSampler::PairSampler(const PairGroups& groups, std::vector<std::size_t> all) : all_(std::move(all)) {
  for (const auto& [_, members] : groups) {
    if (members.size() >= 2) eligible_.push_back(members);
  }
}

PairIndices PairSampler::sample(double phi, std::mt19937_64& rng) const {
  std::bernoulli_distribution coin(phi);
  return sample_with_label(coin(rng) ? 1 : 0, rng);
}

PairIndices PairSampler::sample_with_label(int y, std::mt19937_64& rng) const {
  if (y == 1) {
    if (all_.empty()) throw PreconditionError("no subgraphs to sample from");
    std::uniform_int_distribution<std::size_t> pick(0, all_.size() - 1);
    const std::size_t a = all_[pick(rng)];
    const std::size_t b = all_[pick(rng)];
    return {a, b, 1};
  }
  if (eligible_.empty()) throw NoPositivePairs();
  std::uniform_int_distribution<std::size_t> pick_group(0, eligible_.size() - 1);
  const auto& group = eligible_[pick_group(rng)];
  std::uniform_int_distribution<std::size_t> first(0, group.size() - 1);
  std::uniform_int_distribution<std::size_t> second(0, group.size() - 2);
  const std::size_t i = first(rng);
  std::size_t j = second(rng);
  if (j >= i) ++j;
  return {group[i], group[j], 0};
}

// ---- training --------------------------------------------------------------

TrainResult train_gnn(std::span<const RootedSubgraph> subgraphs, const GnnHyperparams& hp,
                      std::span<const std::size_t> train_members) {
  validate_hyperparams(hp);
  TrainResult result{init_parameters(hp), {}};
  if (hp.steps == 0) return result;

  std::vector<std::size_t> members(train_members.begin(), train_members.end());
  if (members.empty()) {
    for (std::size_t i = 0; i < subgraphs.size(); ++i) members.push_back(i);
  }
  const PairSampler sampler(group_by_agent_day(subgraphs, members), members);
  if (!sampler.has_positive_pairs()) throw NoPositivePairs();

  std::vector<NodeFeatures> features(subgraphs.size());
  std::vector<bool> encoded(subgraphs.size(), false);
  auto features_of = [&](std::size_t i) -> const NodeFeatures& {
    if (!encoded[i]) {
      features[i] = encode_features(subgraphs[i], hp.features);
      encoded[i] = true;
    }
    return features[i];
  };

  std::mt19937_64 rng(hp.seed ^ 0x5bd1e995ULL);
  nn::AdamState state;
  nn::AdamConfig adam;
  adam.learning_rate = hp.learning_rate;
  result.loss_curve.reserve(hp.steps);
  for (std::size_t step = 0; step < hp.steps; ++step) {
    std::vector<PairIndices> batch;
    for (std::size_t b = 0; b < hp.batch_size; ++b) batch.push_back(sampler.sample(hp.loss.phi, rng));
    const nn::LossFn loss = [&](nn::Tape& t) {
      std::vector<Var> terms;
      for (const PairIndices& pair : batch) {
        Var ea = embed_on_tape(t, hp, features_of(pair.a));
        Var eb = embed_on_tape(t, hp, features_of(pair.b));
        terms.push_back(nn::contrastive_loss(nn::distance(ea, eb), pair.y, hp.loss));
      }
      return nn::mean_of(terms);
    };
    result.loss_curve.push_back(nn::train_step(result.params, state, loss, adam));
  }
  return result;
}

double model_selection_score(std::span<const double> n_distances, std::span<const double> p_distances) {
  if (n_distances.empty() || p_distances.empty()) throw PreconditionError("selection score needs both pair sets");
  constexpr double kLo = 0.0, kHi = 2.0;
  const double width = (kHi - kLo) / static_cast<double>(kSelectionBins);
  auto bin_of = [&](double d) {
    const double pos = (std::clamp(d, kLo, kHi) - kLo) / width;
    return std::min(static_cast<std::size_t>(pos), kSelectionBins - 1);
  };
  std::vector<double> counts(kSelectionBins, 1.0);
  for (double d : n_distances) counts[bin_of(d)] += 1.0;
  const double total = static_cast<double>(n_distances.size() + kSelectionBins);
  double score = 0.0;
  for (double d : p_distances) {
    const double density = counts[bin_of(d)] / total / width;
    score -= std::log(density);
  }
  return score / static_cast<double>(p_distances.size());
}

double distance_auc(std::span<const double> n_distances, std::span<const double> p_distances) {
  if (n_distances.empty() || p_distances.empty()) throw PreconditionError("AUC needs both pair sets");
  std::vector<double> n(n_distances.begin(), n_distances.end());
  std::sort(n.begin(), n.end());
  double wins = 0.0;
  for (double p : p_distances) {
    const auto lo = std::lower_bound(n.begin(), n.end(), p);
    const auto hi = std::upper_bound(n.begin(), n.end(), p);
    wins += static_cast<double>(lo - n.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(n.size()) * static_cast<double>(p_distances.size()));
}

EvalPairs sample_eval_pairs(const PairSampler& sampler, std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EvalPairs out;
  for (std::size_t i = 0; i < per_class; ++i) out.n_pairs.push_back(sampler.sample_with_label(0, rng));
  for (std::size_t i = 0; i < per_class; ++i) out.p_pairs.push_back(sampler.sample_with_label(1, rng));
  return out;
}

std::vector<double> pair_distances(std::span<const Embedding> embeddings, std::span<const PairIndices> pairs) {
  std::vector<double> d;
  d.reserve(pairs.size());
  for (const PairIndices& p : pairs) {
    d.push_back(std::sqrt(kernels::squared_distance(embeddings[p.a].values, embeddings[p.b].values)));
  }
  return d;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_group(std::span<const RootedSubgraph> subgraphs,
                                                                             std::size_t holdout_modulus) {
  std::vector<std::size_t> train, held_out;
  for (std::size_t i = 0; i < subgraphs.size(); ++i) {
    const std::string key = subgraphs[i].agent_id + "|" + std::to_string(subgraphs[i].day);
    (hash_bucket(key, holdout_modulus) == 0 ? held_out : train).push_back(i);
  }
  return {std::move(train), std::move(held_out)};
}

// ---- search ----------------------------------------------------------------

namespace {

const std::set<std::string> kSearchKeys{"embedding_dim", "conv_layers", "attention_heads", "readout_rounds",
                                        "steps",         "batch_size",  "learning_rate",   "delta",
                                        "target_separation", "phi"};

double draw_number(const json& v, std::mt19937_64& rng) {
  if (v.is_number()) return v.get<double>();
  if (v.is_array()) {
    if (v.empty()) throw Error("empty choice list in search space");
    std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
    return v.at(pick(rng)).get<double>();
  }
  if (v.is_object()) {
    const json& lo = v.at("min");
    const json& hi = v.at("max");
    if (lo.is_number_integer() && hi.is_number_integer()) {
      std::uniform_int_distribution<std::int64_t> pick(lo.get<std::int64_t>(), hi.get<std::int64_t>());
      return static_cast<double>(pick(rng));
    }
    if (v.value("log", false)) {
      std::uniform_real_distribution<double> pick(std::log(lo.get<double>()), std::log(hi.get<double>()));
      return std::exp(pick(rng));
    }
    std::uniform_real_distribution<double> pick(lo.get<double>(), hi.get<double>());
    return pick(rng);
  }
  throw Error("unsupported search space entry: " + v.dump());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SearchSpace::SearchSpace(json spec) : spec_(std::move(spec)) {
  if (!spec_.is_object()) throw Error("search space must be a JSON object");
  for (const auto& [key, _] : spec_.items()) {
    if (!kSearchKeys.contains(key)) throw Error("unknown search space key: " + key);
  }
}

GnnHyperparams SearchSpace::draw(std::mt19937_64& rng) const {
  for (int attempt = 0; attempt < 100; ++attempt) {
    GnnHyperparams hp;
    // Keys are visited in sorted order so draws do not depend on JSON layout.
    for (const std::string& key : kSearchKeys) {
      if (!spec_.contains(key)) continue;
      const double v = draw_number(spec_.at(key), rng);
      auto as_count = [&] { return static_cast<std::size_t>(std::llround(v)); };
      if (key == "embedding_dim") hp.embedding_dim = as_count();
      else if (key == "conv_layers") hp.conv_layers = as_count();
      else if (key == "attention_heads") hp.attention_heads = as_count();
      else if (key == "readout_rounds") hp.readout_rounds = as_count();
      else if (key == "steps") hp.steps = as_count();
      else if (key == "batch_size") hp.batch_size = as_count();
      else if (key == "learning_rate") hp.learning_rate = v;
      else if (key == "delta") hp.loss.delta = v;
      else if (key == "target_separation") hp.loss.target_separation = v;
      else if (key == "phi") hp.loss.phi = v;
    }
    try {
      validate_hyperparams(hp);
      return hp;
    } catch (const PreconditionError&) {
      continue;
    }
  }
  throw Error("search space yields no valid hyperparameters");
}

SearchResult hyperparameter_search(std::span<const RootedSubgraph> subgraphs, const SearchSpace& space,
                                   std::size_t budget, std::uint64_t seed, std::size_t eval_pairs_per_class) {
  if (budget < 1) throw PreconditionError("search budget must be >= 1");
  auto [train, held_out] = split_by_group(subgraphs);
  const PairSampler held_out_sampler(group_by_agent_day(subgraphs, held_out), held_out);
  if (!held_out_sampler.has_positive_pairs()) throw NoPositivePairs();
  const EvalPairs eval = sample_eval_pairs(held_out_sampler, eval_pairs_per_class, splitmix64(seed));

  std::set<std::size_t> eval_members;
  for (const auto* pairs : {&eval.n_pairs, &eval.p_pairs}) {
    for (const PairIndices& p : *pairs) {
      eval_members.insert(p.a);
      eval_members.insert(p.b);
    }
  }

  std::mt19937_64 space_rng(seed);
  SearchResult result;
  for (std::size_t trial = 0; trial < budget; ++trial) {
    GnnHyperparams hp = space.draw(space_rng);
    hp.seed = splitmix64(seed + 1 + trial);
    TrainResult trained = train_gnn(subgraphs, hp, train);

    std::vector<Embedding> embeddings(subgraphs.size());
    for (std::size_t i : eval_members) embeddings[i] = gnn_embed(trained.params, hp, subgraphs[i]);
    const auto n_d = pair_distances(embeddings, eval.n_pairs);
    const auto p_d = pair_distances(embeddings, eval.p_pairs);

    Trial t{hp, model_selection_score(n_d, p_d),
            trained.loss_curve.empty() ? 0.0 : trained.loss_curve.back(), distance_auc(n_d, p_d)};
    const bool better = result.trials.empty() || t.score > result.trials[result.best].score;
    result.trials.push_back(t);
    if (better) {
      result.best = trial;
      result.best_params = std::move(trained.params);
    }
  }
  return result;
}

void save_model(const std::filesystem::path& dir, const nn::Parameters& params, const GnnHyperparams& hp) {
  nn::save_parameters(dir, params);
  std::ofstream out(dir / "hyperparams.json", std::ios::trunc);
  if (!out) throw Error("cannot write hyperparams in " + dir.string());
  out << hyperparams_to_json(hp).dump(2) << '\n';
}

std::pair<nn::Parameters, GnnHyperparams> load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "hyperparams.json");
  if (!in) throw Error("missing hyperparams.json in " + dir.string());
  GnnHyperparams hp;
  try {
    hp = hyperparams_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(std::string("bad hyperparams.json: ") + e.what());
  }
  return {nn::load_parameters(dir), hp};
}

}  // namespace sentinel::gnn
