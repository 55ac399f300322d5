// sentinel: command-line front end over the detection pipeline.

#include <csignal>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "sentinel/features.hpp"
#include "sentinel/gnn.hpp"
#include "sentinel/ranking.hpp"
#include "sentinel/sampler.hpp"
#include "sentinel/service.hpp"
#include "sentinel/simgen.hpp"
#include "sentinel/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sentinel;

namespace {

std::vector<std::string> split_ids(const std::string& csv) {
  std::vector<std::string> ids;
  std::stringstream in(csv);
  std::string id;
  while (std::getline(in, id, ',')) {
    if (!id.empty()) ids.push_back(id);
  }
  return ids;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("bad JSON in " + path.string() + ": " + e.what());
  }
}

// Embeds with either the handcrafted features or a trained GNN model.
class Embedder {
 public:
  Embedder(const std::string& method, const fs::path& schema, const fs::path& model) : method_(method) {
    if (method == "handcrafted") {
      if (schema.empty()) throw PreconditionError("--schema is required for handcrafted embeddings");
      schema_ = load_schema(schema);
    } else if (method == "gnn") {
      if (model.empty()) throw PreconditionError("--model is required for gnn embeddings");
      std::tie(params_, hp_) = gnn::load_model(model);
    } else {
      throw PreconditionError("unknown embedding method: " + method);
    }
  }

  Embedding operator()(const RootedSubgraph& g) const {
    return method_ == "handcrafted" ? handcrafted_embedding(g, schema_) : gnn::gnn_embed(params_, hp_, g);
  }

 private:
  std::string method_;
  FeatureSchema schema_;
  nn::Parameters params_;
  gnn::GnnHyperparams hp_;
};

int cmd_ingest(const fs::path& input, bool validate_only) {
  const ActionStore store = load_corpus(input);
  if (validate_only) {
    std::cout << store.size() << '\n';
    return 0;
  }
  const auto roots = select_roots(store, SamplerConfig{}.sensitive_types);
  std::cout << json{{"records", store.size()}, {"entities", store.entity_count()}, {"sensitive_roots", roots.size()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_sample(const fs::path& corpus, const fs::path& config, const fs::path& out) {
  const SamplerConfig cfg = config.empty() ? SamplerConfig{} : load_sampler_config(config);
  const ActionStore store = load_corpus(corpus);
  const auto subgraphs = sample_all(store, cfg);
  write_subgraph_dir(out, subgraphs);
  std::cout << subgraphs.size() << " subgraphs written to " << out.string() << '\n';
  return 0;
}

int cmd_schema(const fs::path& corpus, const fs::path& out) {
  const FeatureSchema schema = schema_from_store(load_corpus(corpus));
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw Error("cannot write " + out.string());
  f << schema_to_json(schema).dump(2) << '\n';
  std::cout << schema.action_types.size() << " action types, dimension " << schema.dimension() << '\n';
  return 0;
}

int cmd_embed(const std::string& method, const fs::path& schema, const fs::path& model, const fs::path& subgraphs,
              const fs::path& out) {
  const Embedder embed(method, schema, model);
  std::map<std::string, Embedding> rows;
  for (const RootedSubgraph& g : read_subgraph_dir(subgraphs)) rows.emplace(g.root_id, embed(g));
  write_embeddings(out, rows);
  std::cout << rows.size() << " embeddings written to " << out.string() << '\n';
  return 0;
}

int cmd_train_gnn(const fs::path& subgraphs_dir, const fs::path& space_path, std::size_t budget, std::uint64_t seed,
                  const fs::path& out, std::size_t eval_pairs) {
  const auto subgraphs = read_subgraph_dir(subgraphs_dir);
  const gnn::SearchSpace space(space_path.empty() ? json::object() : read_json_file(space_path));
  const gnn::SearchResult result = gnn::hyperparameter_search(subgraphs, space, budget, seed, eval_pairs);
  gnn::save_model(out, result.best_params, result.trials[result.best].hp);

  json log = json::array();
  for (std::size_t i = 0; i < result.trials.size(); ++i) {
    const gnn::Trial& t = result.trials[i];
    json row{{"trial", i},
             {"score", t.score},
             {"final_loss", t.final_loss},
             {"held_out_auc", t.held_out_auc},
             {"hyperparams", gnn::hyperparams_to_json(t.hp)},
             {"best", i == result.best}};
    std::cout << row.dump() << '\n';
    log.push_back(std::move(row));
  }
  std::ofstream f(out / "trials.json", std::ios::trunc);
  f << log.dump(2) << '\n';
  return 0;
}

int cmd_train_smr(const fs::path& subgraphs_dir, const std::string& method, const fs::path& schema,
                  const fs::path& model, std::uint64_t seed, const fs::path& out,
                  const ranking::SmrTrainConfig& cfg) {
  const auto naturals = read_subgraph_dir(subgraphs_dir);
  const auto mutants = ranking::mutate_all(naturals, seed);
  const Embedder embed(method, schema, model);

  // Every fifth item is held out to report accuracy.
  std::vector<Embedding> nat_train, nat_test, mut_train, mut_test;
  for (std::size_t i = 0; i < naturals.size(); ++i) (i % 5 == 0 ? nat_test : nat_train).push_back(embed(naturals[i]));
  for (std::size_t i = 0; i < mutants.size(); ++i) (i % 5 == 0 ? mut_test : mut_train).push_back(embed(mutants[i]));

  const ranking::SmrClassifier clf = ranking::train_smr(nat_train, mut_train, seed, cfg);
  fs::create_directories(out);
  clf.save(out);
  json report{{"naturals", naturals.size()}, {"mutants", mutants.size()}};
  if (!nat_test.empty() && !mut_test.empty()) report["held_out_accuracy"] = ranking::smr_accuracy(clf, nat_test, mut_test);
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_rank(const std::string& method_name, const fs::path& embeddings_path, const std::string& interesting,
             const fs::path& model, std::size_t k, const fs::path& out, const std::string& exclude_csv) {
  const ranking::Method method = ranking::parse_method(method_name);
  const auto embeddings = read_embeddings(embeddings_path);
  const auto excluded = split_ids(exclude_csv);
  const std::set<std::string> exclude(excluded.begin(), excluded.end());
  std::vector<ranking::RankedFinding> ranked;
  if (method == ranking::Method::NN) {
    ranked = ranking::nn_rank(embeddings, split_ids(interesting), k, exclude);
  } else {
    if (model.empty()) throw PreconditionError("--model is required for smr ranking");
    ranked = ranking::smr_rank(ranking::SmrClassifier::load(model), embeddings, k, exclude);
  }
  ranking::write_findings(out, ranked);
  std::cout << ranked.size() << " findings written to " << out.string() << '\n';
  return 0;
}

int cmd_eval(const fs::path& ranked, const fs::path& truth, std::size_t k, double level, const std::string& prior) {
  stats::Prior p;
  if (prior == "uniform") {
    p = stats::Prior::uniform();
  } else if (prior == "jeffreys") {
    p = stats::Prior::jeffreys();
  } else {
    throw PreconditionError("unknown prior: " + prior);
  }
  const auto report = stats::evaluate(ranking::read_findings(ranked), stats::read_truth(truth), k, level, p);
  std::cout << stats::report_to_json(report).dump() << '\n';
  return 0;
}

int cmd_simgen(const fs::path& config, const fs::path& out_corpus, const fs::path& out_truth) {
  const sim::SimConfig cfg = config.empty() ? sim::SimConfig{} : sim::load_sim_config(config);
  const sim::SimOutput out = sim::generate(cfg);
  sim::write_corpus(out_corpus, out.actions);
  sim::write_truth(out_truth, out.truth);
  std::size_t anomalies = 0;
  for (const auto& [_, label] : out.truth) anomalies += label != sim::kNormalLabel ? 1 : 0;
  std::cout << json{{"records", out.actions.size()}, {"roots", out.truth.size()}, {"anomalies", anomalies}}.dump()
            << '\n';
  return 0;
}

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

int cmd_serve(const std::string& host, int port, const fs::path& state_dir) {
  auto svc = service::Service::open(state_dir);
  service::HttpServer server(*svc);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << host << ':' << bound << std::endl;
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rooted-subgraph insider-risk detection pipeline"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Parse and validate a JSON-lines corpus");
  fs::path ingest_input;
  bool validate_only = false;
  ingest->add_option("--input", ingest_input, "Corpus file")->required();
  ingest->add_flag("--validate-only", validate_only, "Print the record count or the first error");

  auto* sample = app.add_subcommand("sample", "Sample one rooted subgraph per sensitive action");
  fs::path sample_corpus, sample_config, sample_out;
  sample->add_option("--corpus", sample_corpus)->required();
  sample->add_option("--config", sample_config, "Sampler JSON (T, M, blocked_after_first, sensitive_types)");
  sample->add_option("--out", sample_out, "Output directory")->required();

  auto* schema = app.add_subcommand("schema", "Derive a feature schema from a corpus's action types");
  fs::path schema_corpus, schema_out;
  schema->add_option("--corpus", schema_corpus)->required();
  schema->add_option("--out", schema_out)->required();

  auto* embed = app.add_subcommand("embed", "Embed every subgraph in a directory");
  std::string embed_method = "handcrafted";
  fs::path embed_schema, embed_model, embed_subgraphs, embed_out;
  embed->add_option("--method", embed_method)->check(CLI::IsMember({"handcrafted", "gnn"}));
  embed->add_option("--schema", embed_schema);
  embed->add_option("--model", embed_model);
  embed->add_option("--subgraphs", embed_subgraphs)->required();
  embed->add_option("--out", embed_out)->required();

  auto* train_gnn = app.add_subcommand("train-gnn", "Random-search GNN training");
  fs::path tg_subgraphs, tg_space, tg_out;
  std::size_t tg_budget = 8, tg_eval_pairs = 200;
  std::uint64_t tg_seed = 1;
  train_gnn->add_option("--subgraphs", tg_subgraphs)->required();
  train_gnn->add_option("--space", tg_space, "Search space JSON; defaults to the fixed default hyperparameters");
  train_gnn->add_option("--budget", tg_budget)->check(CLI::PositiveNumber);
  train_gnn->add_option("--seed", tg_seed);
  train_gnn->add_option("--eval-pairs", tg_eval_pairs, "Held-out pairs per class for model selection");
  train_gnn->add_option("--out", tg_out)->required();

  auto* train_smr = app.add_subcommand("train-smr", "Train the natural-vs-mutated classifier");
  fs::path ts_subgraphs, ts_schema, ts_model, ts_out;
  std::string ts_method = "handcrafted";
  std::uint64_t ts_seed = 1;
  ranking::SmrTrainConfig ts_cfg;
  train_smr->add_option("--subgraphs", ts_subgraphs)->required();
  train_smr->add_option("--method", ts_method)->check(CLI::IsMember({"handcrafted", "gnn"}));
  train_smr->add_option("--schema", ts_schema);
  train_smr->add_option("--model", ts_model, "GNN model directory when --method gnn");
  train_smr->add_option("--seed", ts_seed);
  train_smr->add_option("--epochs", ts_cfg.epochs);
  train_smr->add_option("--out", ts_out)->required();

  auto* rank = app.add_subcommand("rank", "Rank subgraphs for audit");
  std::string rank_method = "nn", rank_interesting, rank_exclude;
  fs::path rank_embeddings, rank_model, rank_out;
  std::size_t rank_k = 50;
  rank->add_option("--method", rank_method)->check(CLI::IsMember({"nn", "smr"}));
  rank->add_option("--embeddings", rank_embeddings)->required();
  rank->add_option("--interesting", rank_interesting, "Comma-separated subgraph ids (nn)");
  rank->add_option("--model", rank_model, "SMR classifier directory (smr)");
  rank->add_option("-k", rank_k)->check(CLI::PositiveNumber);
  rank->add_option("--exclude", rank_exclude, "Comma-separated ids to leave out");
  rank->add_option("--out", rank_out)->required();

  auto* eval = app.add_subcommand("eval", "Precision at k with a credible interval");
  fs::path eval_ranked, eval_truth;
  std::size_t eval_k = 50;
  double eval_level = 0.9;
  std::string eval_prior = "uniform";
  eval->add_option("--ranked", eval_ranked)->required();
  eval->add_option("--truth", eval_truth)->required();
  eval->add_option("-k", eval_k)->check(CLI::PositiveNumber);
  eval->add_option("--level", eval_level);
  eval->add_option("--prior", eval_prior)->check(CLI::IsMember({"uniform", "jeffreys"}));

  auto* simgen = app.add_subcommand("simgen", "Generate a synthetic corpus with ground truth");
  fs::path sim_config, sim_corpus, sim_truth;
  simgen->add_option("--config", sim_config);
  simgen->add_option("--out-corpus", sim_corpus)->required();
  simgen->add_option("--out-truth", sim_truth)->required();

  auto* serve = app.add_subcommand("serve", "Serve the audit queue over HTTP");
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  fs::path serve_state;
  serve->add_option("--host", serve_host);
  serve->add_option("--port", serve_port)->check(CLI::Range(0, 65535));
  serve->add_option("--state-dir", serve_state)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return cmd_ingest(ingest_input, validate_only);
    if (*sample) return cmd_sample(sample_corpus, sample_config, sample_out);
    if (*schema) return cmd_schema(schema_corpus, schema_out);
    if (*embed) return cmd_embed(embed_method, embed_schema, embed_model, embed_subgraphs, embed_out);
    if (*train_gnn) return cmd_train_gnn(tg_subgraphs, tg_space, tg_budget, tg_seed, tg_out, tg_eval_pairs);
    if (*train_smr) return cmd_train_smr(ts_subgraphs, ts_method, ts_schema, ts_model, ts_seed, ts_out, ts_cfg);
    if (*rank) return cmd_rank(rank_method, rank_embeddings, rank_interesting, rank_model, rank_k, rank_out, rank_exclude);
    if (*eval) return cmd_eval(eval_ranked, eval_truth, eval_k, eval_level, eval_prior);
    if (*simgen) return cmd_simgen(sim_config, sim_corpus, sim_truth);
    if (*serve) return cmd_serve(serve_host, serve_port, serve_state);
  } catch (const MalformedRecord& e) {
    std::cerr << "error: line " << e.line() << ", byte " << e.byte_offset() << ": " << e.reason() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
