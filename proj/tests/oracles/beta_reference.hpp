#pragma once

// Reference values frozen from scipy.stats.beta.ppf and scipy.special.betainc
// (double precision). Posterior is Beta(prior_a + w, prior_b + k - w).

namespace oracle {

struct IntervalCase {
  int k, w;
  double prior_a, prior_b;
  double lo, hi;  // level 0.90, equal tails
};

inline constexpr IntervalCase kIntervalCases[] = {
    {50, 38, 1.0, 1.0, 0.6468279348252771, 0.842144121333425},
    {50, 32, 1.0, 1.0, 0.5227882298555415, 0.7404975349900631},
    {50, 29, 1.0, 1.0, 0.463486717448821, 0.6869614684446652},
    {50, 1, 1.0, 1.0, 0.007012543951519744, 0.08967153829142846},
    {0, 0, 1.0, 1.0, 0.05, 0.95},
    {10, 3, 1.0, 1.0, 0.13507547291964123, 0.5643741882892295},
    {50, 38, 0.5, 0.5, 0.6512493695309232, 0.8470889951358469},
};

struct BetaincCase {
  double a, b, x, value;
};

inline constexpr BetaincCase kBetaincCases[] = {
    {39.0, 13.0, 0.7, 0.19771686887598333},
    {2.5, 0.5, 0.3, 0.018927124071945658},
    {0.5, 0.5, 0.25, 0.33333333333333337},
};

}  // namespace oracle
