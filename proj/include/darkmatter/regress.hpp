#pragma once

// Least-squares probes and the two R^2 conventions.
//
//   pooled:   FVU = sum |Y - P|^2 / sum |Y - mean(Y)|^2, R^2 = 1 - FVU
//   per-dim:  R^2_j = 1 - SS_res_j / SS_tot_j, averaged over output columns

#include "json.hpp"

#include <Eigen/Cholesky>

#include "darkmatter/common.hpp"

namespace dm {

struct SplitSpec {
    double train_fraction = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Split {
    std::vector<Index> train;
    std::vector<Index> test;
};

/// Seeded shuffle; both index lists are returned sorted.
Split make_split(Index n, const SplitSpec& spec);

Matrix take_rows(const Matrix& x, const std::vector<Index>& rows);
Vector take_rows(const Vector& x, const std::vector<Index>& rows);

struct LinearProbe {
    Vector weights;
    double bias = 0.0;
    double train_r2 = 0.0;
    double test_r2 = 0.0;
    SplitSpec split;
    bool intercept = true;

    Vector predict(const Matrix& x) const;
};

struct LinearMap {
    Matrix matrix; // q x p
    Vector bias;   // q
    /// Held-out per-output R^2; NaN where the held-out target is constant.
    Vector per_dim_r2;
    double mean_r2 = 0.0;
    double total_fvu = 0.0;
    double train_mean_r2 = 0.0;
    double train_fvu = 0.0;
    SplitSpec split;
    bool intercept = true;

    Matrix predict(const Matrix& x) const;
};

/// Normal-equation solver for a fixed design matrix and split, reusable
/// across targets. Holds a reference to X; X must outlive the solver.
class OlsSolver {
public:
    OlsSolver(const Matrix& x, Split split, SplitSpec spec, bool intercept = true);

    const Split& split() const { return split_; }
    Index regressors() const { return x_.cols(); }

    /// Fits Y (n x q, aligned with X) on the training rows and scores both splits.
    LinearMap fit(const Matrix& y) const;

private:
    const Matrix& x_;
    Split split_;
    SplitSpec spec_;
    bool intercept_;
    RowVector mean_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

LinearProbe fit_probe(const Matrix& x, const Vector& y, const SplitSpec& split, bool intercept = true);
LinearMap fit_map(const Matrix& x, const Matrix& y, const SplitSpec& split, bool intercept = true);

/// 1 - SS_res / SS_tot. Throws DegenerateFit on a constant target.
double r2(const Vector& pred, const Vector& target);
/// 1 - pooled FVU.
double r2_pooled(const Matrix& pred, const Matrix& target);
double fvu_pooled(const Matrix& pred, const Matrix& target);
/// Per-column R^2; NaN for constant columns.
Vector r2_per_dim(const Matrix& pred, const Matrix& target);
/// Mean of the finite entries of r2_per_dim.
double r2_mean(const Matrix& pred, const Matrix& target);

nlohmann::json to_json(const SplitSpec& split);
nlohmann::json to_json(const LinearProbe& probe);
nlohmann::json to_json(const LinearMap& map, bool include_matrix = false);

} // namespace dm
