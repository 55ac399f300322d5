#include "sentinel/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "sentinel/error.hpp"

namespace sentinel::stats {

using nlohmann::json;

namespace {

// Continued fraction for I_x(a, b); converges quickly for x < (a+1)/(a+b+2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw PreconditionError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double beta_quantile(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("quantile level outside [0, 1]");
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (regularized_incomplete_beta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Interval credible_interval(AuditOutcome o, double level, Prior prior) {
  if (o.w > o.k) throw PreconditionError("w exceeds k");
  if (!(level > 0.0 && level < 1.0)) throw PreconditionError("level must be in (0, 1)");
  if (!(prior.alpha > 0.0 && prior.beta > 0.0)) throw PreconditionError("prior must be positive");
  const double a = prior.alpha + static_cast<double>(o.w);
  const double b = prior.beta + static_cast<double>(o.k - o.w);
  return {beta_quantile(a, b, (1.0 - level) / 2.0), beta_quantile(a, b, (1.0 + level) / 2.0)};
}

double precision_at_k(std::span<const bool> worth_auditing) {
  if (worth_auditing.empty()) throw PreconditionError("precision of no verdicts");
  const auto w = std::count(worth_auditing.begin(), worth_auditing.end(), true);
  return static_cast<double>(w) / static_cast<double>(worth_auditing.size());
}

json report_to_json(const EvalReport& r) {
  return json{{"k", r.k},
              {"w", r.w},
              {"precision", r.precision},
              {"level", r.level},
              {"interval", {{"lo", r.interval.lo}, {"hi", r.interval.hi}}}};
}

EvalReport evaluate(const std::vector<ranking::RankedFinding>& ranked, const std::map<std::string, bool>& truth,
                    std::size_t k, double level, Prior prior) {
  if (k == 0) throw PreconditionError("k must be >= 1");
  std::vector<const ranking::RankedFinding*> order;
  for (const auto& f : ranked) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->rank < b->rank; });
  if (order.size() > k) order.resize(k);
  if (order.empty()) throw PreconditionError("nothing ranked to evaluate");

  std::vector<bool> verdicts;
  for (const auto* f : order) {
    auto it = truth.find(f->subgraph_id);
    if (it == truth.end()) throw MissingGroundTruth(f->subgraph_id);
    verdicts.push_back(it->second);
  }
  EvalReport r;
  r.k = verdicts.size();
  r.w = static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), true));
  r.precision = static_cast<double>(r.w) / static_cast<double>(r.k);
  r.level = level;
  r.interval = credible_interval({r.k, r.w}, level, prior);
  return r;
}

std::map<std::string, bool> read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read ground truth: " + path.string());
  std::map<std::string, bool> truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string id = j.at("id").get<std::string>();
      bool worth = false;
      if (j.contains("worth_auditing")) {
        worth = j.at("worth_auditing").get<bool>();
      } else {
        worth = j.at("label").get<std::string>() != "normal";
      }
      truth[id] = worth;
    } catch (const json::exception& e) {
      throw Error("bad ground truth at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return truth;
}

}  // namespace sentinel::stats
