#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentinel/ranking.hpp"

namespace sentinel::stats {

struct AuditOutcome {
  std::size_t k = 0;  // audited
  std::size_t w = 0;  // deemed worth auditing
};

struct Prior {
  double alpha = 1.0;
  double beta = 1.0;

  static Prior uniform() { return {1.0, 1.0}; }
  static Prior jeffreys() { return {0.5, 0.5}; }
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

// I_x(a, b) via the continued-fraction expansion (modified Lentz).
double regularized_incomplete_beta(double a, double b, double x);

// Smallest x with I_x(a, b) >= p, by bisection to 1e-10.
double beta_quantile(double a, double b, double p);

// Equal-tailed interval of the Beta(alpha + w, beta + k - w) posterior.
// Throws PreconditionError when w > k, level outside (0, 1) or the prior is
// not positive.
Interval credible_interval(AuditOutcome o, double level = 0.9, Prior prior = Prior::uniform());

// w / k over the verdicts given. Throws PreconditionError when empty.
double precision_at_k(std::span<const bool> worth_auditing);

struct EvalReport {
  std::size_t k = 0;
  std::size_t w = 0;
  double precision = 0.0;
  Interval interval;
  double level = 0.9;
};

nlohmann::json report_to_json(const EvalReport& r);

// Audits the top k findings by rank against the ground truth. Throws
// PreconditionError when k == 0, MissingGroundTruth when an audited id has
// no verdict.
EvalReport evaluate(const std::vector<ranking::RankedFinding>& ranked, const std::map<std::string, bool>& truth,
                    std::size_t k, double level = 0.9, Prior prior = Prior::uniform());

// JSON-lines, one object per subgraph: {"id", "label"} where any label other
// than "normal" counts as worth auditing, or {"id", "worth_auditing": bool}.
std::map<std::string, bool> read_truth(const std::filesystem::path& path);

}  // namespace sentinel::stats
