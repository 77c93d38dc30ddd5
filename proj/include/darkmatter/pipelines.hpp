#pragma once

// Error-structure experiments: norm and vector probes on SAE error, the
// linear / nonlinear split, cross-SAE per-token prediction, noise injection,
// mask sweeps and the scaling breakdown.

#include <optional>
#include <string>

#include "darkmatter/power_law.hpp"
#include "darkmatter/regress.hpp"
#include "darkmatter/synthdata.hpp"
#include "darkmatter/trainer.hpp"

namespace dm {

using NamedMatrix = std::pair<std::string, const Matrix*>;

struct ComponentNorms {
    double x = 0.0;
    double sae = 0.0;
    double sae_error = 0.0;
    double linear_error = 0.0;
    double nonlinear_error = 0.0;
};

struct ErrorDecomposition {
    ActivationBatch sae_error;
    ActivationBatch linear_error;    // map applied to x, bias included
    ActivationBatch nonlinear_error; // sae_error - linear_error
    LinearMap vector_probe;
    LinearProbe norm_probe;
    /// Held-out pooled FVUs, normalised by the variance of x.
    double fvu_sae = 0.0;
    double fvu_nonlinear = 0.0;
    double fvu_sae_train = 0.0;
    double fvu_nonlinear_train = 0.0;
    ComponentNorms mean_norms;
};

/// Probe x -> |error|^2.
LinearProbe predict_error_norm(const Matrix& x, const Matrix& errors, const SplitSpec& split);

ErrorDecomposition predict_error_vector(const Matrix& x, const Matrix& errors, const SplitSpec& split);
/// Same, reusing a solver already factored for x.
ErrorDecomposition predict_error_vector(const OlsSolver& solver, const Matrix& x, const Matrix& errors);

/// |e_small|^2 -> |e_large|^2.
LinearProbe per_token_scaling_probe(const Matrix& errors_small, const Matrix& errors_large, const SplitSpec& split,
                                    bool intercept = true);

struct TokenProbeComparison {
    LinearProbe c_star;
    LinearProbe d_star;
    /// 100 * (FVU_c - FVU_d) / FVU_c on held-out rows; 0 when FVU_c is 0.
    double percent_fvu_decrease = 0.0;
};

/// [|e_small|^2, |nonlinear_small|^2] -> |e_large|^2, compared with the one-regressor probe.
TokenProbeComparison per_token_scaling_probe_with_nonlinear(const Matrix& errors_small, const Matrix& nonlinear_small,
                                                            const Matrix& errors_large, const SplitSpec& split,
                                                            bool intercept = true);

struct ComponentR2 {
    std::string name;
    double test_r2 = 0.0;
    double train_r2 = 0.0;
};

std::vector<ComponentR2> norm_prediction_test(const std::vector<NamedMatrix>& components, const Matrix& x,
                                              const SplitSpec& split);
/// Runs the test on x, Sae(x), SaeError, LinearError and NonlinearError.
std::vector<ComponentR2> norm_prediction_test(const ErrorDecomposition& decomp, const Matrix& x,
                                              const SplitSpec& split);

/// Everything fixed across a noise grid or a mask sweep.
struct SyntheticSetup {
    FeatureDictionary dict;
    WeightModel weights;
    Index samples = 0;
    SplitSpec split;
    std::uint64_t seed = 0;
};

struct MaskSweepPoint {
    double keep_fraction = 0.0;
    Index kept = 0;
    double fvu_sae = 0.0;
    double fvu_nonlinear = 0.0;
    double fvu_sae_train = 0.0;
    double fvu_nonlinear_train = 0.0;
};

struct MaskSweepResult {
    std::vector<MaskSweepPoint> points;
    /// Population standard deviation of fvu_nonlinear across fractions.
    double flatness_std = 0.0;
};

/// keep_fractions must be strictly increasing and number at least 4.
MaskSweepResult masking_sweep(const SyntheticSetup& setup, double x_noise_sigma, double recon_noise_sigma,
                              const std::vector<double>& keep_fractions);

struct NoiseCell {
    Index x_index = 0;
    Index recon_index = 0;
    double x_noise_sigma = 0.0;
    double recon_noise_sigma = 0.0;
    MaskSweepResult sweep;
    PowerLawFit fit;
    double nonlinear_level = 0.0;
    /// fit.c - nonlinear_level
    double dense_estimate = 0.0;
    /// nonlinear_level
    double introduced_estimate = 0.0;
};

/// Rows: injected {x-noise variance, recon-noise variance};
/// columns: estimated {Dense, Introduced}.
using CorrelationMatrix = Eigen::Matrix2d;

CorrelationMatrix correlation_matrix(const std::vector<NoiseCell>& cells);

struct NoiseGridResult {
    std::vector<NoiseCell> cells; // row-major over (x_index, recon_index)
    CorrelationMatrix correlation;
};

NoiseGridResult noise_injection_correlation(const SyntheticSetup& setup, const std::vector<double>& x_noise_sigmas,
                                            const std::vector<double>& recon_noise_sigmas,
                                            const std::vector<double>& keep_fractions);

struct BreakdownRow {
    double width = 0.0;
    double fvu_sae = 0.0;
    double fvu_nonlinear = 0.0;
    std::optional<double> fvu_nonlinear_ito;
    double absent_features = 0.0;
    double linear_error = 0.0;
    double nonlinear = 0.0;
    double encoder = 0.0;
    /// Total amount removed by clipping bands at zero.
    double clipped = 0.0;
};

struct ScalingBreakdown {
    std::vector<BreakdownRow> rows;
    PowerLawFit fit;
    double nonlinear_level = 0.0;
    /// Set when the nonlinear level sits above the fitted asymptote.
    bool linear_band_clipped = false;
};

ScalingBreakdown breakdown_curve(const std::vector<double>& widths, const std::vector<double>& fvu_sae,
                                 const std::vector<double>& fvu_nonlinear,
                                 const std::optional<std::vector<double>>& fvu_nonlinear_ito = std::nullopt);

struct ShrinkageResult {
    double mean_cosine = 0.0;
    double mean_norm_ratio = 0.0;
    Vector cosines;
    Vector norm_ratios;
    Index excluded = 0;
};

/// Cosine between the linear-error prediction and x, and |Sae(x)| / |x|.
ShrinkageResult shrinkage_diagnostic(const ErrorDecomposition& decomp, const Matrix& x);

struct AuxR2 {
    std::string source;
    std::string target;
    double mean_r2 = 0.0;
    double pooled_r2 = 0.0;
};

std::vector<AuxR2> regress_error_from_aux(const std::vector<NamedMatrix>& aux,
                                          const std::vector<NamedMatrix>& targets, const SplitSpec& split);

struct RetrainComparison {
    double fvu_linear = 0.0;
    double fvu_nonlinear = 0.0;
};

RetrainComparison component_retrain_comparison(const ErrorDecomposition& decomp, const TrainConfig& config,
                                               const ActivationRule& rule, Index latents);

} // namespace dm
