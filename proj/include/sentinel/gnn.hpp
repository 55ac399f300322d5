#pragma once

// Learned subgraph embedder. Node inputs are hashed one-hot encodings; the
// network runs bipartite GATv2-style attention (entities attend to their
// actions, then actions attend to their entities), seeds a global node from
// the root action, lets it attend over every node for a few rounds, and
// L2-normalizes the result. Training pulls subgraphs rooted on the same
// agent and UTC day together and pushes random pairs apart.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sentinel/features.hpp"
#include "sentinel/neuralnet.hpp"
#include "sentinel/subgraph.hpp"

namespace sentinel::gnn {

struct FeatureConfig {
  std::size_t buckets = 64;  // per vocabulary: action type, entity type, relationship
  std::size_t max_step = 4;  // entity step one-hot width; deeper steps share the last slot

  std::size_t action_dim() const noexcept { return buckets + 2; }
  std::size_t entity_dim() const noexcept { return buckets + max_step; }
  std::size_t edge_dim() const noexcept { return buckets; }
};

// FNV-1a 64 of the string, modulo `buckets`.
std::size_t hash_bucket(std::string_view s, std::size_t buckets) noexcept;

struct NodeFeatures {
  // Rows follow the subgraph's canonical order: actions by (start, id),
  // entities by key.
  nn::Matrix actions;   // one-hot type ++ [signed_log(dstart h), signed_log(duration h)]
  nn::Matrix entities;  // one-hot type ++ one-hot step
  nn::Matrix edges;     // one-hot relationship
  std::vector<std::size_t> edge_action;
  std::vector<std::size_t> edge_entity;
  std::size_t root = 0;
};

NodeFeatures encode_features(const RootedSubgraph& g, const FeatureConfig& cfg = {});

struct GnnHyperparams {
  std::size_t embedding_dim = 32;
  std::size_t conv_layers = 2;
  std::size_t attention_heads = 2;
  std::size_t readout_rounds = 2;
  nn::LossConfig loss;
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  FeatureConfig features;
};

// Throws PreconditionError on a zero count or dim not divisible by heads.
void validate_hyperparams(const GnnHyperparams& hp);
nlohmann::json hyperparams_to_json(const GnnHyperparams& hp);
GnnHyperparams hyperparams_from_json(const nlohmann::json& j);

nn::Parameters init_parameters(const GnnHyperparams& hp);

// Builds the embedding of one subgraph on `tape` as a (1 x dim) row.
nn::Var embed_on_tape(nn::Tape& tape, const GnnHyperparams& hp, const NodeFeatures& x);

Embedding embed_features(const nn::Parameters& params, const GnnHyperparams& hp, const NodeFeatures& x);
Embedding gnn_embed(const nn::Parameters& params, const GnnHyperparams& hp, const RootedSubgraph& g);

// ---- pair sampling ---------------------------------------------------------

// (agent, UTC day) -> indices into the subgraph list.
using PairGroups = std::map<std::pair<std::string, std::int64_t>, std::vector<std::size_t>>;

PairGroups group_by_agent_day(std::span<const RootedSubgraph> subgraphs,
                              std::span<const std::size_t> members);

struct PairIndices {
  std::size_t a = 0;
  std::size_t b = 0;
  int y = 0;  // 0: same agent and day; 1: independent uniform draws
};

// Draws y ~ Bernoulli(phi). y = 1: two independent uniform picks from `all`.
// y = 0: a uniform group among those with >= 2 members, then two distinct
// uniform members. Throws NoPositivePairs when y = 0 and no group qualifies.
class PairSampler {
 public:
  PairSampler(const PairGroups& groups, std::vector<std::size_t> all);

  PairIndices sample(double phi, std::mt19937_64& rng) const;
  PairIndices sample_with_label(int y, std::mt19937_64& rng) const;
  bool has_positive_pairs() const noexcept { return !eligible_.empty(); }

 private:
  std::vector<std::vector<std::size_t>> eligible_;
  std::vector<std::size_t> all_;
};

// ---- training --------------------------------------------------------------

struct TrainResult {
  nn::Parameters params;
  std::vector<double> loss_curve;  // pre-update batch loss per step
};

// `train_members` restricts which subgraphs may be drawn; empty means all.
TrainResult train_gnn(std::span<const RootedSubgraph> subgraphs, const GnnHyperparams& hp,
                      std::span<const std::size_t> train_members = {});

// Cross-entropy of P-pair distances under a histogram density of N-pair
// distances: 32 equal bins on [0, 2], +1 per bin, score = mean over P of
// -log(density). Higher is better. Throws PreconditionError on empty input.
double model_selection_score(std::span<const double> n_distances, std::span<const double> p_distances);

inline constexpr std::size_t kSelectionBins = 32;

// Fraction of (N, P) distance pairs with d_P > d_N, ties counted as half.
double distance_auc(std::span<const double> n_distances, std::span<const double> p_distances);

struct EvalPairs {
  std::vector<PairIndices> n_pairs;
  std::vector<PairIndices> p_pairs;
};

// Fixed held-out pair sets used to compare models.
EvalPairs sample_eval_pairs(const PairSampler& sampler, std::size_t per_class, std::uint64_t seed);
std::vector<double> pair_distances(std::span<const Embedding> embeddings, std::span<const PairIndices> pairs);

// Deterministic 80/20 split by (agent, day) group; returns (train, held-out) indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_group(
    std::span<const RootedSubgraph> subgraphs, std::size_t holdout_modulus = 5);

// ---- hyperparameter search -------------------------------------------------

// JSON object keyed by hyperparameter name. Each value is a list (uniform
// choice), an object {"min", "max"} (uniform real, or integer when both ends
// are integers; "log": true for log-uniform) or a scalar (fixed).
// Recognized keys: embedding_dim, conv_layers, attention_heads,
// readout_rounds, steps, batch_size, learning_rate, delta,
// target_separation, phi.
class SearchSpace {
 public:
  explicit SearchSpace(nlohmann::json spec);
  GnnHyperparams draw(std::mt19937_64& rng) const;
  const nlohmann::json& spec() const noexcept { return spec_; }

 private:
  nlohmann::json spec_;
};

struct Trial {
  GnnHyperparams hp;
  double score = 0.0;
  double final_loss = 0.0;
  double held_out_auc = 0.0;
};

struct SearchResult {
  std::vector<Trial> trials;
  std::size_t best = 0;
  nn::Parameters best_params;
};

// `budget` independent trials, hyperparameters drawn from `space` with seeds
// derived from `seed`. Each trial trains on the training split; the winner
// maximizes model_selection_score on a held-out pair set shared by all trials.
SearchResult hyperparameter_search(std::span<const RootedSubgraph> subgraphs, const SearchSpace& space,
                                   std::size_t budget, std::uint64_t seed, std::size_t eval_pairs_per_class = 200);

// Model directory: params.json + params.bin + hyperparams.json.
void save_model(const std::filesystem::path& dir, const nn::Parameters& params, const GnnHyperparams& hp);
std::pair<nn::Parameters, GnnHyperparams> load_model(const std::filesystem::path& dir);

}  // namespace sentinel::gnn
