#include "darkmatter/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dm {

void TrainConfig::validate() const
{
    if (steps < 0) {
        throw InvalidArgument("train: steps must be >= 0");
    }
    if (batch_size <= 0) {
        throw InvalidArgument("train: batch_size must be positive");
    }
    if (!(learning_rate > 0.0) || !(grad_clip > 0.0) || !(bandwidth > 0.0) || !(adam_eps > 0.0)) {
        throw InvalidArgument("train: learning_rate, grad_clip, bandwidth and adam_eps must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(ema_decay >= 0.0 && ema_decay < 1.0)) {
        throw InvalidArgument("train: beta1, beta2 and ema_decay must lie in [0, 1)");
    }
    if (resample_interval < 0) {
        throw InvalidArgument("train: resample_interval must be >= 0");
    }
}

MatrixStream::MatrixStream(const Matrix& data, std::uint64_t seed) : data_(data), seed_(seed)
{
    if (data_.rows() == 0) {
        throw InvalidArgument("MatrixStream: empty data");
    }
    order_.resize(static_cast<std::size_t>(data_.rows()));
    std::iota(order_.begin(), order_.end(), Index{0});
    cursor_ = order_.size();
}

Matrix MatrixStream::next(Index rows)
{
    Matrix out(rows, data_.cols());
    for (Index r = 0; r < rows; ++r) {
        if (cursor_ == order_.size()) {
            std::iota(order_.begin(), order_.end(), Index{0});
            auto rng = make_rng(seed_, stream::batches, epoch_++);
            std::shuffle(order_.begin(), order_.end(), rng);
            cursor_ = 0;
        }
        out.row(r) = data_.row(order_[cursor_++]);
    }
    return out;
}

GeneratorStream::GeneratorStream(FeatureDictionary dict, WeightModel weights, DenseComponentSpec dense,
                                 std::uint64_t seed)
    : dict_(std::move(dict)), weights_(std::move(weights)), dense_(dense), seed_(seed)
{
    weights_.validate();
    dense_.validate();
    require_dims(weights_.size(), dict_.size(), "GeneratorStream weight count");
}

Matrix GeneratorStream::next(Index rows)
{
    const auto seed = mix_seed(seed_, stream::batches, counter_++);
    return sample_batch(dict_, weights_, dense_, rows, seed, {.keep_ground_truth = false}).data;
}

void SaeGradients::zero_like(const SaeModel& model)
{
    w_enc = Matrix::Zero(model.w_enc.rows(), model.w_enc.cols());
    b_enc = Vector::Zero(model.b_enc.size());
    w_dec = Matrix::Zero(model.w_dec.rows(), model.w_dec.cols());
    b_dec = Vector::Zero(model.b_dec.size());
    if (const auto* jr = std::get_if<JumpRelu>(&model.rule)) {
        theta = Vector::Zero(jr->theta.size());
    } else {
        theta.resize(0);
    }
}

double SaeGradients::squared_norm() const
{
    return w_enc.squaredNorm() + b_enc.squaredNorm() + w_dec.squaredNorm() + b_dec.squaredNorm()
           + theta.squaredNorm();
}

namespace {

LossParts loss_impl(const SaeModel& model, const Matrix& x, SaeGradients* grads, std::vector<Index>* fired)
{
    require_dims(x.cols(), model.dim(), "training batch dimension");
    const Index n = x.rows();
    const Index d = model.dim();
    if (n == 0) {
        throw InvalidArgument("loss: empty batch");
    }
    const Matrix xc = x.rowwise() - model.b_dec.transpose();
    Matrix z = xc * model.w_enc.transpose();
    z.rowwise() += model.b_enc.transpose();

    std::vector<Eigen::Triplet<double>> active;
    Matrix resid(n, d);
    for (Index b = 0; b < n; ++b) {
        const std::size_t start = active.size();
        apply_rule(model.rule, z.row(b), active, b);
        RowVector y = model.b_dec.transpose();
        for (std::size_t t = start; t < active.size(); ++t) {
            y += active[t].value() * model.w_dec.row(active[t].col());
        }
        resid.row(b) = y - x.row(b);
    }
    if (fired) {
        for (const auto& t : active) {
            ++(*fired)[static_cast<std::size_t>(t.col())];
        }
    }

    LossParts loss;
    const double scale = static_cast<double>(n) * static_cast<double>(d);
    loss.reconstruction = resid.squaredNorm() / scale;
    const auto* jr = std::get_if<JumpRelu>(&model.rule);
    if (jr) {
        loss.sparsity = jr->lambda * static_cast<double>(active.size()) / static_cast<double>(n);
    }
    if (!grads) {
        return loss;
    }

    grads->zero_like(model);
    const Matrix g = resid * (2.0 / scale);
    grads->b_dec = g.colwise().sum().transpose();
    for (const auto& t : active) {
        const Index b = t.row();
        const Index i = t.col();
        grads->w_dec.row(i) += t.value() * g.row(b);
        const double dz = g.row(b).dot(model.w_dec.row(i));
        grads->w_enc.row(i) += dz * xc.row(b);
        grads->b_enc[i] += dz;
        grads->b_dec -= dz * model.w_enc.row(i).transpose();
    }
    if (jr) {
        const double eps = jr->bandwidth;
        const double l0_grad = jr->lambda / (static_cast<double>(n) * eps);
        for (Index b = 0; b < n; ++b) {
            for (Index i = 0; i < model.latents(); ++i) {
                if (std::abs(z(b, i) - jr->theta[i]) < 0.5 * eps) {
                    const double dh = g.row(b).dot(model.w_dec.row(i));
                    grads->theta[i] += -(jr->theta[i] / eps) * dh - l0_grad;
                }
            }
        }
    }
    return loss;
}

struct AdamState {
    SaeGradients m;
    SaeGradients v;
};

template <typename P, typename G>
void adam_step(P& param, const G& grad, G& m, G& v, const TrainConfig& cfg, double c1, double c2)
{
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
}

void resample_dead(SaeModel& model, AdamState& adam, const Matrix& x, const std::vector<Index>& fired,
                   std::uint64_t seed, Index step, Index& count)
{
    std::vector<Index> dead;
    for (Index i = 0; i < model.latents(); ++i) {
        if (fired[static_cast<std::size_t>(i)] == 0) {
            dead.push_back(i);
        }
    }
    if (dead.empty()) {
        return;
    }
    const Matrix err = x - reconstruct(model, x);
    const Vector w = err.rowwise().squaredNorm();
    if (!(w.sum() > 0.0)) {
        return;
    }
    std::discrete_distribution<Index> pick(w.data(), w.data() + w.size());
    auto rng = make_rng(seed, stream::resample, static_cast<std::uint64_t>(step));
    for (Index i : dead) {
        const Index b = pick(rng);
        const RowVector dir = err.row(b).normalized();
        model.w_dec.row(i) = dir;
        model.w_enc.row(i) = 0.2 * dir;
        model.b_enc[i] = 0.0;
        for (auto* s : {&adam.m, &adam.v}) {
            s->w_dec.row(i).setZero();
            s->w_enc.row(i).setZero();
            s->b_enc[i] = 0.0;
        }
        ++count;
    }
}

} // namespace

LossParts loss_and_gradients(const SaeModel& model, const Matrix& x, SaeGradients* grads)
{
    return loss_impl(model, x, grads, nullptr);
}

TrainResult train(const TrainConfig& config, BatchStream& batches, ActivationRule rule, Index latents)
{
    config.validate();
    if (auto* jr = std::get_if<JumpRelu>(&rule)) {
        jr->bandwidth = config.bandwidth;
    }
    TrainResult result;
    result.model = SaeModel::initialize(batches.dim(), latents, std::move(rule), config.seed);
    if (config.steps == 0) {
        return result;
    }
    SaeModel& model = result.model;

    Matrix x = batches.next(config.batch_size);
    model.b_dec = x.colwise().mean().transpose();

    AdamState adam;
    adam.m.zero_like(model);
    adam.v.zero_like(model);
    SaeGradients g;
    std::vector<Index> fired(static_cast<std::size_t>(latents), 0);
    const Index record_every = std::max<Index>(1, config.steps / 200);
    double ema = 0.0;

    for (Index step = 0; step < config.steps; ++step) {
        if (step > 0) {
            x = batches.next(config.batch_size);
        }
        const double loss = loss_impl(model, x, &g, &fired).total();
        if (!std::isfinite(loss)) {
            throw NumericalError("train: non-finite loss at step " + std::to_string(step));
        }

        // Keep decoder rows on the unit sphere: drop the radial gradient part.
        for (Index i = 0; i < latents; ++i) {
            g.w_dec.row(i) -= g.w_dec.row(i).dot(model.w_dec.row(i)) * model.w_dec.row(i);
        }
        const double norm = std::sqrt(g.squared_norm());
        if (norm > config.grad_clip) {
            const double s = config.grad_clip / norm;
            g.w_enc *= s;
            g.b_enc *= s;
            g.w_dec *= s;
            g.b_dec *= s;
            g.theta *= s;
        }

        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(config.beta1, t);
        const double c2 = 1.0 - std::pow(config.beta2, t);
        adam_step(model.w_enc, g.w_enc, adam.m.w_enc, adam.v.w_enc, config, c1, c2);
        adam_step(model.b_enc, g.b_enc, adam.m.b_enc, adam.v.b_enc, config, c1, c2);
        adam_step(model.w_dec, g.w_dec, adam.m.w_dec, adam.v.w_dec, config, c1, c2);
        adam_step(model.b_dec, g.b_dec, adam.m.b_dec, adam.v.b_dec, config, c1, c2);
        if (auto* jr = std::get_if<JumpRelu>(&model.rule)) {
            adam_step(jr->theta, g.theta, adam.m.theta, adam.v.theta, config, c1, c2);
        }
        model.w_dec.rowwise().normalize();

        ema = step == 0 ? loss : config.ema_decay * ema + (1.0 - config.ema_decay) * loss;
        if (step == 0) {
            result.initial_ema = ema;
        }
        if (step % record_every == 0 || step + 1 == config.steps) {
            result.ema_history.emplace_back(step, ema);
        }

        if (config.resample_interval > 0 && (step + 1) % config.resample_interval == 0) {
            if (step + 1 < config.steps) {
                resample_dead(model, adam, x, fired, config.seed, step, result.resampled);
            }
            std::fill(fired.begin(), fired.end(), 0);
        }
    }
    result.final_ema = ema;
    return result;
}

} // namespace dm
