#pragma once

// Minibatch trainer for TopK / JumpReLU SAEs.
//
// Loss per batch of B rows: |x - Sae(x)|^2 / (B d) plus, for JumpReLU,
// lambda * mean L0 with a rectangle-kernel straight-through estimator.

#include <memory>

#include "darkmatter/sae.hpp"
#include "darkmatter/synthdata.hpp"

namespace dm {

struct TrainConfig {
    Index steps = 10000;
    Index batch_size = 256;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    /// Latents inactive over this many steps are resampled; 0 disables.
    Index resample_interval = 500;
    /// JumpReLU straight-through bandwidth; overrides the rule's value.
    double bandwidth = 1e-3;
    double grad_clip = 1.0;
    double ema_decay = 0.99;

    void validate() const;
};

class BatchStream {
public:
    virtual ~BatchStream() = default;
    virtual Index dim() const = 0;
    virtual Matrix next(Index rows) = 0;
};

/// Cycles through a fixed matrix in seeded shuffled epochs.
class MatrixStream final : public BatchStream {
public:
    MatrixStream(const Matrix& data, std::uint64_t seed);
    Index dim() const override { return data_.cols(); }
    Matrix next(Index rows) override;

private:
    const Matrix& data_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<Index> order_;
    std::size_t cursor_ = 0;
};

/// Draws fresh synthetic rows for every batch.
class GeneratorStream final : public BatchStream {
public:
    GeneratorStream(FeatureDictionary dict, WeightModel weights, DenseComponentSpec dense, std::uint64_t seed);
    Index dim() const override { return dict_.dim(); }
    Matrix next(Index rows) override;

private:
    FeatureDictionary dict_;
    WeightModel weights_;
    DenseComponentSpec dense_;
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

struct SaeGradients {
    Matrix w_enc;
    Vector b_enc;
    Matrix w_dec;
    Vector b_dec;
    Vector theta; // JumpReLU only

    void zero_like(const SaeModel& model);
    double squared_norm() const;
};

struct LossParts {
    double reconstruction = 0.0;
    double sparsity = 0.0;
    double total() const { return reconstruction + sparsity; }
};

/// Loss on one batch and, when grads is non-null, its gradient. TopK support
/// is held fixed at the evaluation point.
LossParts loss_and_gradients(const SaeModel& model, const Matrix& x, SaeGradients* grads);

struct TrainResult {
    SaeModel model;
    double initial_ema = 0.0;
    double final_ema = 0.0;
    Index resampled = 0;
    std::vector<std::pair<Index, double>> ema_history;
};

TrainResult train(const TrainConfig& config, BatchStream& batches, ActivationRule rule, Index latents);

} // namespace dm
