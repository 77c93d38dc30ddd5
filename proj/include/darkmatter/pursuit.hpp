#pragma once

// Greedy gradient pursuit over a frozen decoder.
//
// Each round adds the atom with the largest residual correlation, then takes
// exact-line-search gradient steps on the active coefficients.

#include <optional>

#include "darkmatter/sae.hpp"

namespace dm {

struct PursuitConfig {
    /// Fixed per-example budget. Unset means: match the encoder's L0 per row.
    std::optional<Index> budget;
    /// Extra gradient steps after the first one in each round.
    Index refine_iterations = 3;
    /// Refinement stops once the relative drop in |r|^2 falls below this.
    double tolerance = 1e-9;
    bool nonnegative = true;

    void validate() const;
};

struct SparseCode {
    std::vector<std::pair<Index, double>> entries; // sorted by latent index, zeros dropped
    /// |r| after each coefficient update, starting with |x - bias|.
    std::vector<double> residual_history;
    double residual_norm = 0.0;
};

/// decoder is m x d with unit rows.
SparseCode gradient_pursuit(const Matrix& decoder, const Vector& bias, const Eigen::Ref<const RowVector>& x,
                            Index budget, const PursuitConfig& config);

struct ItoResult {
    Matrix recon;
    std::vector<Index> budgets;
    double mean_l0 = 0.0;
    Index max_l0 = 0;
};

ItoResult ito_reconstruct(const SaeModel& model, const Matrix& x, const PursuitConfig& config);

} // namespace dm
