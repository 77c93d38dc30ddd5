#pragma once

// TopK and JumpReLU sparse autoencoders.
//
//   hidden(x) = sigma(W_enc (x - b_dec) + b_enc)
//   Sae(x)    = W_dec^T hidden(x) + b_dec
//
// W_enc and W_dec are both stored m x d; row i of W_dec is the decoder
// direction of latent i.

#include <cstdint>
#include <filesystem>
#include <variant>

#include <Eigen/SparseCore>

#include "darkmatter/common.hpp"

namespace dm {

struct TopK {
    Index k = 1;
};

struct JumpRelu {
    Vector theta;
    double lambda = 0.0;
    /// Rectangle-kernel bandwidth for the straight-through threshold gradient.
    double bandwidth = 1e-3;
};

using ActivationRule = std::variant<TopK, JumpRelu>;

/// n x m, row-major so that each example's active latents are contiguous.
using LatentBatch = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SaeModel {
    Matrix w_enc;
    Vector b_enc;
    Matrix w_dec;
    Vector b_dec;
    ActivationRule rule = TopK{};

    Index latents() const { return w_dec.rows(); }
    Index dim() const { return w_dec.cols(); }

    void validate() const;

    /// Unit-norm random decoder rows, W_enc = W_dec, zero biases. For
    /// JumpReLU rules, theta keeps whatever the rule carries (resized to m,
    /// filled with zeros if empty).
    static SaeModel initialize(Index d, Index m, ActivationRule rule, std::uint64_t seed);
};

/// Raw encoder pre-activations for one block of rows.
Matrix pre_activations(const SaeModel& model, const Matrix& x);

/// Applies the activation rule to a row of pre-activations. TopK keeps the k
/// largest (ties to lowest index) among the positive entries.
void apply_rule(const ActivationRule& rule, const Eigen::Ref<const RowVector>& pre,
                std::vector<Eigen::Triplet<double>>& out, Index row);

LatentBatch encode(const SaeModel& model, const Matrix& x);
Matrix decode(const SaeModel& model, const LatentBatch& latents);
/// decode(encode(x)), evaluated block-wise without materialising latents.
Matrix reconstruct(const SaeModel& model, const Matrix& x);
/// x - Sae(x)
Matrix sae_error(const SaeModel& model, const Matrix& x);
double measure_l0(const SaeModel& model, const Matrix& x);
/// Per-row count of active latents.
std::vector<Index> row_l0(const SaeModel& model, const Matrix& x);

/// Pooled fraction of variance unexplained, sum|x - recon|^2 / sum|x - mean(x)|^2.
double reconstruction_fvu(const SaeModel& model, const Matrix& x);

/// Mean over true features of the max cosine with any decoder row.
double dictionary_recovery(const Matrix& true_features, const Matrix& decoder);

// DSAE1 checkpoint:
//   magic "DSAE\x01\0\0\0", u32 rule tag (0 = TopK, 1 = JumpReLU),
//   TopK: u64 k | JumpReLU: u64 len, len x f32 theta, f32 lambda, f32 bandwidth,
//   u64 m, u64 d, then f32 blocks W_enc (m*d), b_enc (m), W_dec (m*d), b_dec (d).
void save_checkpoint(const std::filesystem::path& path, const SaeModel& model);
SaeModel load_checkpoint(const std::filesystem::path& path);

} // namespace dm
