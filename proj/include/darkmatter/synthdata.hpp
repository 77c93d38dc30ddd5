#pragma once

// Synthetic activations under the weak linear representation model
//
//     x = sum_i w_i y_i + Dense(x)
//
// plus simulated SAE reconstructions obtained by masking dictionary
// elements and injecting reconstruction noise.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "darkmatter/common.hpp"

namespace dm {

enum class DictionaryMode { orthonormal, random_unit };

const char* to_string(DictionaryMode mode);
DictionaryMode parse_dictionary_mode(const std::string& s);

/// m unit feature vectors y_i stored as the rows of an m x d matrix.
struct FeatureDictionary {
    Matrix vectors;
    DictionaryMode mode = DictionaryMode::orthonormal;
    std::uint64_t seed = 0;
    /// max_{i != j} |y_i . y_j|; 0 for a single vector.
    double coherence = 0.0;

    Index size() const { return vectors.rows(); }
    Index dim() const { return vectors.cols(); }
    Matrix gram() const { return vectors * vectors.transpose(); }
};

FeatureDictionary build_dictionary(Index d, Index m, DictionaryMode mode, std::uint64_t seed);

enum class WeightKind { bernoulli, poisson, power_law_bernoulli };

const char* to_string(WeightKind kind);
WeightKind parse_weight_kind(const std::string& s);

/// Independent per-latent coefficient distributions.
///
/// Bernoulli: w_i = s_i with probability p_i, else 0.
/// Poisson: w_i ~ Poisson(lambda_i).
/// PowerLawBernoulli: Bernoulli with p_i proportional to (i+1)^-exponent,
/// normalised so that sum p_i equals the configured expected L0.
struct WeightModel {
    WeightKind kind = WeightKind::bernoulli;
    Vector probability; // Bernoulli kinds
    Vector scale;       // Bernoulli kinds
    Vector rate;        // Poisson
    double exponent = 0.0;
    double target_l0 = 0.0;
    std::uint64_t seed = 0; // seed used for randomly drawn scales, if any

    static WeightModel bernoulli(Vector p, Vector s);
    static WeightModel poisson(Vector lambda);
    static WeightModel power_law_bernoulli(double exponent, double expected_l0, Vector s);

    Index size() const;
    void validate() const;

    /// E(w_i^order) for order 1..4.
    double moment(Index i, int order) const;
    Vector mean() const;
    Vector second_moment() const;
    double expected_l0() const;
    /// Variance of the per-row count of active latents.
    double l0_variance() const;
};

/// Power-law probabilities (i+1)^-exponent scaled to sum to expected_l0,
/// with values clipped at 1 and the remaining mass redistributed.
Vector power_law_probabilities(Index m, double exponent, double expected_l0);

Vector constant_scales(Index m, double s);
Vector uniform_scales(Index m, double lo, double hi, std::uint64_t seed);
Vector log_uniform_scales(Index m, double lo, double hi, std::uint64_t seed);
/// base * (i+1)^-exponent
Vector power_scales(Index m, double base, double exponent);

enum class DenseKind { none, isotropic_gaussian };

struct DenseComponentSpec {
    DenseKind kind = DenseKind::none;
    double sigma = 0.0; // per-dimension standard deviation

    static DenseComponentSpec gaussian(double sigma) { return {DenseKind::isotropic_gaussian, sigma}; }
    void validate() const;
};

struct WeightEntry {
    std::uint32_t index;
    float value;
};
using SparseRow = std::vector<WeightEntry>;

struct Provenance {
    enum class Source { generated, loaded, derived };
    Source source = Source::derived;
    std::uint64_t seed = 0;
    std::string detail;
};

struct ActivationBatch {
    Matrix data;
    std::optional<std::vector<SparseRow>> ground_truth;
    /// Dense draws added to each row; present when the dense spec was not `none`.
    std::optional<Matrix> dense;
    Provenance provenance;

    Index rows() const { return data.rows(); }
    Index dim() const { return data.cols(); }
    bool has_ground_truth() const { return ground_truth.has_value(); }

    static ActivationBatch derived(Matrix data, std::string detail = {});
};

struct SampleOptions {
    bool keep_ground_truth = true;
};

ActivationBatch sample_batch(const FeatureDictionary& dict, const WeightModel& weights,
                             const DenseComponentSpec& dense, Index n, std::uint64_t seed,
                             const SampleOptions& options = {});

/// Max |row - (sum w_i y_i + dense)| over the batch.
double ground_truth_residual(const ActivationBatch& batch, const FeatureDictionary& dict);

double mean_l0(const std::vector<SparseRow>& rows);

/// Latent indices ranked by E(w_i), descending; ties by lowest index.
std::vector<Index> rank_by_expected_activation(const WeightModel& weights);

struct MaskedReconstruction {
    ActivationBatch recon;
    ActivationBatch error;
    Matrix noise; // the reconstruction noise actually added, n x d
    std::vector<Index> kept;
};

Index kept_count(Index m, double keep_fraction);

MaskedReconstruction masked_reconstruction(const ActivationBatch& batch, const FeatureDictionary& dict,
                                           const WeightModel& weights, double keep_fraction,
                                           double recon_noise_sigma, std::uint64_t seed);

} // namespace dm
