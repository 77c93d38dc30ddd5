#pragma once

// Closed-form norm statistics for x = sum_i w_i y_i with independent w_i,
// plus Monte Carlo estimators used to check them.
//
//   E|x|^2 = Tr(R_w G_Y),  R_w = E(w w^T),  G_Y = Y^T Y
//   optimal norm probe on perpendicular features: sum_i b_i y_i, b_i = E(w_i^2)/E(w_i)

#include "darkmatter/regress.hpp"
#include "darkmatter/synthdata.hpp"

namespace dm {

struct AnalyticNormModel {
    Matrix gram;
    Matrix autocorr;
    Vector probe_coeffs;
};

AnalyticNormModel analytic_norm_model(const FeatureDictionary& dict, const WeightModel& weights);

double expected_norm_sq(const FeatureDictionary& dict, const WeightModel& weights);

/// b_i = E(w_i^2) / E(w_i). Throws when some E(w_i) is zero.
Vector analytic_probe_coefficients(const WeightModel& weights);

/// sum_i b_i y_i as a d-vector.
Vector analytic_norm_probe(const FeatureDictionary& dict, const WeightModel& weights);

/// Correlation between <b, w> and sum_i w_i^2 assuming perpendicular unit
/// features:
///   sum b_i Cov(w_i, w_i^2) / sqrt(sum b_i^2 Var(w_i) * sum Var(w_i^2))
double analytic_norm_correlation(const WeightModel& weights);

struct MonteCarloEstimate {
    double value = 0.0;
    double std_error = 0.0;
    Index samples = 0;
};

/// Mean of |x|^2 over n fresh samples (no dense component).
MonteCarloEstimate monte_carlo_norm_sq(const FeatureDictionary& dict, const WeightModel& weights, Index n,
                                       std::uint64_t seed);

/// Pearson correlation between x . analytic_norm_probe and |x|^2.
MonteCarloEstimate monte_carlo_norm_correlation(const FeatureDictionary& dict, const WeightModel& weights,
                                                Index n, std::uint64_t seed);

struct LearnedNormResult {
    LinearProbe probe;
    /// Held-out Pearson correlation between probe output and |x|^2.
    double correlation = 0.0;
    double cosine_to_analytic = 0.0;
};

/// Samples n rows, fits the norm probe x -> |x|^2 and scores it on the test split.
LearnedNormResult learned_norm_correlation(const FeatureDictionary& dict, const WeightModel& weights, Index n,
                                           std::uint64_t seed, const SplitSpec& split);

} // namespace dm
