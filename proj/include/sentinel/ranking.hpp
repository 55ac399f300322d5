#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sentinel/features.hpp"
#include "sentinel/neuralnet.hpp"
#include "sentinel/subgraph.hpp"

namespace sentinel::ranking {

enum class Method { NN, SMR };

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view s);

struct RankedFinding {
  std::string subgraph_id;
  Method method = Method::NN;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const RankedFinding&) const = default;
};

nlohmann::json finding_to_json(const RankedFinding& f);
RankedFinding finding_from_json(const nlohmann::json& j);
void write_findings(const std::filesystem::path& path, const std::vector<RankedFinding>& findings);
std::vector<RankedFinding> read_findings(const std::filesystem::path& path);

using EmbeddingTable = std::map<std::string, Embedding>;

// ||a - b||_2. Throws DimensionMismatch.
double pairwise_distance(const Embedding& a, const Embedding& b);

// Scores every id outside `interesting` and `exclude` by its minimum distance
// to the interesting set and returns the k lowest, ties by id. Throws
// EmptyInterestingSet, PreconditionError (k == 0 or unknown interesting id).
std::vector<RankedFinding> nn_rank(const EmbeddingTable& embeddings, const std::vector<std::string>& interesting,
                                   std::size_t k, const std::set<std::string>& exclude = {});

// ---- mutations -------------------------------------------------------------

enum class MutationKind {
  DetachTicketContext,      // drop every ticket-management action except the root
  SwapSubjectUser,          // root now targets a donor's user, with that user's background
  TimeInvertJustification,  // mirror pre-root ticket actions to after the root
};

inline constexpr MutationKind kAllMutationKinds[] = {MutationKind::DetachTicketContext,
                                                     MutationKind::SwapSubjectUser,
                                                     MutationKind::TimeInvertJustification};

std::string_view mutation_name(MutationKind k) noexcept;

struct MutationConfig {
  std::string ticket_type_prefix = "TicketManagement.";
  std::string agent_entity_type = "agent";
  std::string user_entity_type = "user";
};

// Kinds whose preconditions hold for `g` given the donor pool.
std::vector<MutationKind> applicable_mutations(const RootedSubgraph& g, std::span<const RootedSubgraph> donor_pool,
                                               const MutationConfig& cfg = {});

// Returns a structurally valid subgraph with the same root id and the kind
// appended to provenance. Throws InapplicableMutation.
RootedSubgraph mutate(const RootedSubgraph& g, MutationKind kind, std::span<const RootedSubgraph> donor_pool,
                      std::mt19937_64& rng, const MutationConfig& cfg = {});

// One mutated copy per natural subgraph that admits any mutation, kind drawn
// uniformly over the applicable kinds. The naturals double as donor pool.
std::vector<RootedSubgraph> mutate_all(std::span<const RootedSubgraph> naturals, std::uint64_t seed,
                                       const MutationConfig& cfg = {});

// ---- synthetic mutation rank ----------------------------------------------

struct SmrTrainConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
};

// Two-layer feed-forward classifier: relu(x W1 + b1) W2 + b2 -> sigmoid,
// giving the probability that an embedding came from a mutated subgraph.
class SmrClassifier {
 public:
  SmrClassifier() = default;
  SmrClassifier(nn::Parameters params, std::size_t input_dim, std::size_t hidden);

  double probability_mutated(const Embedding& e) const;
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t hidden() const noexcept { return hidden_; }
  const nn::Parameters& params() const noexcept { return params_; }

  void save(const std::filesystem::path& dir) const;
  static SmrClassifier load(const std::filesystem::path& dir);

  // Logits (n x 1) for a batch matrix (n x input_dim).
  static nn::Var logits(nn::Tape& t, nn::Var batch);

 private:
  nn::Parameters params_;
  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
};

// Throws PreconditionError when either set is empty, DimensionMismatch when
// dimensions differ,
// NonFiniteLoss on divergence.
SmrClassifier train_smr(std::span<const Embedding> natural, std::span<const Embedding> mutated, std::uint64_t seed,
                        const SmrTrainConfig& cfg = {});

// Fraction classified correctly at the 0.5 threshold.
double smr_accuracy(const SmrClassifier& c, std::span<const Embedding> natural, std::span<const Embedding> mutated);

// Naturals by descending probability-of-mutated, ties by id, top k.
std::vector<RankedFinding> smr_rank(const SmrClassifier& c, const EmbeddingTable& naturals, std::size_t k,
                                    const std::set<std::string>& exclude = {});

}  // namespace sentinel::ranking
