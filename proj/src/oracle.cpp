#include "darkmatter/oracle.hpp"

#include <cmath>

namespace dm {

namespace {

constexpr Index kMcBlock = 50000;

void check_aligned(const FeatureDictionary& dict, const WeightModel& weights)
{
    weights.validate();
    require_dims(weights.size(), dict.size(), "weight count vs dictionary size");
}

} // namespace

AnalyticNormModel analytic_norm_model(const FeatureDictionary& dict, const WeightModel& weights)
{
    check_aligned(dict, weights);
    AnalyticNormModel model;
    model.gram = dict.gram();
    const Vector mu = weights.mean();
    model.autocorr = mu * mu.transpose();
    model.autocorr.diagonal() = weights.second_moment();
    model.probe_coeffs = analytic_probe_coefficients(weights);
    return model;
}

double expected_norm_sq(const FeatureDictionary& dict, const WeightModel& weights)
{
    check_aligned(dict, weights);
    const Vector mu = weights.mean();
    const Vector second = weights.second_moment();
    const Vector diag = dict.vectors.rowwise().squaredNorm();
    // Tr(R G) = sum_i Var(w_i) G_ii + mu^T G mu
    const double var_part = ((second.array() - mu.array().square()) * diag.array()).sum();
    const double mean_part = (dict.vectors.transpose() * mu).squaredNorm();
    return var_part + mean_part;
}

Vector analytic_probe_coefficients(const WeightModel& weights)
{
    weights.validate();
    const Vector mu = weights.mean();
    const Vector second = weights.second_moment();
    Vector b(mu.size());
    for (Index i = 0; i < mu.size(); ++i) {
        if (!(mu[i] > 0.0)) {
            throw InvalidArgument("analytic probe: latent " + std::to_string(i) + " has zero mean");
        }
        b[i] = second[i] / mu[i];
    }
    return b;
}

Vector analytic_norm_probe(const FeatureDictionary& dict, const WeightModel& weights)
{
    check_aligned(dict, weights);
    return dict.vectors.transpose() * analytic_probe_coefficients(weights);
}

double analytic_norm_correlation(const WeightModel& weights)
{
    const Vector b = analytic_probe_coefficients(weights);
    double num = 0.0;
    double var_probe = 0.0;
    double var_norm = 0.0;
    for (Index i = 0; i < b.size(); ++i) {
        const double m1 = weights.moment(i, 1);
        const double m2 = weights.moment(i, 2);
        const double m3 = weights.moment(i, 3);
        const double m4 = weights.moment(i, 4);
        num += b[i] * (m3 - m1 * m2);
        var_probe += b[i] * b[i] * (m2 - m1 * m1);
        var_norm += m4 - m2 * m2;
    }
    if (!(var_probe > 0.0) || !(var_norm > 0.0)) {
        throw DegenerateFit("analytic correlation: zero variance");
    }
    return num / std::sqrt(var_probe * var_norm);
}

namespace {

struct Moments {
    double n = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
};

template <typename Fn>
Moments accumulate_blocks(const FeatureDictionary& dict, const WeightModel& weights, Index n, std::uint64_t seed,
                          Fn&& per_row)
{
    Moments total;
    for (Index begin = 0, block = 0; begin < n; begin += kMcBlock, ++block) {
        const Index rows = std::min(kMcBlock, n - begin);
        const auto batch = sample_batch(dict, weights, DenseComponentSpec{}, rows,
                                        mix_seed(seed, stream::experiment, static_cast<std::uint64_t>(block)),
                                        {.keep_ground_truth = false});
        for (Index r = 0; r < rows; ++r) {
            const auto [a, b] = per_row(batch.data.row(r));
            total.n += 1;
            total.sa += a;
            total.sb += b;
            total.saa += a * a;
            total.sbb += b * b;
            total.sab += a * b;
        }
    }
    return total;
}

} // namespace

MonteCarloEstimate monte_carlo_norm_sq(const FeatureDictionary& dict, const WeightModel& weights, Index n,
                                       std::uint64_t seed)
{
    check_aligned(dict, weights);
    if (n < 2) {
        throw InvalidArgument("monte carlo: need at least 2 samples");
    }
    const auto m = accumulate_blocks(dict, weights, n, seed, [](const auto& row) {
        return std::pair{row.squaredNorm(), 0.0};
    });
    MonteCarloEstimate est;
    est.samples = n;
    est.value = m.sa / m.n;
    const double var = (m.saa - m.n * est.value * est.value) / (m.n - 1);
    est.std_error = std::sqrt(std::max(var, 0.0) / m.n);
    return est;
}

MonteCarloEstimate monte_carlo_norm_correlation(const FeatureDictionary& dict, const WeightModel& weights,
                                                Index n, std::uint64_t seed)
{
    check_aligned(dict, weights);
    if (n < 3) {
        throw InvalidArgument("monte carlo: need at least 3 samples");
    }
    const Vector probe = analytic_norm_probe(dict, weights);
    const auto m = accumulate_blocks(dict, weights, n, seed, [&](const auto& row) {
        return std::pair{row.dot(probe.transpose()), row.squaredNorm()};
    });
    const double cov = m.sab / m.n - (m.sa / m.n) * (m.sb / m.n);
    const double va = m.saa / m.n - (m.sa / m.n) * (m.sa / m.n);
    const double vb = m.sbb / m.n - (m.sb / m.n) * (m.sb / m.n);
    if (!(va > 0.0) || !(vb > 0.0)) {
        throw DegenerateFit("monte carlo correlation: zero variance");
    }
    MonteCarloEstimate est;
    est.samples = n;
    est.value = cov / std::sqrt(va * vb);
    est.std_error = (1.0 - est.value * est.value) / std::sqrt(static_cast<double>(n - 1));
    return est;
}

LearnedNormResult learned_norm_correlation(const FeatureDictionary& dict, const WeightModel& weights, Index n,
                                           std::uint64_t seed, const SplitSpec& split)
{
    check_aligned(dict, weights);
    const auto batch = sample_batch(dict, weights, DenseComponentSpec{}, n, seed, {.keep_ground_truth = false});
    const Vector target = batch.data.rowwise().squaredNorm();
    LearnedNormResult result;
    result.probe = fit_probe(batch.data, target, split);
    const Split rows = make_split(n, split);
    Vector pred(static_cast<Index>(rows.test.size()));
    Vector truth(pred.size());
    for (std::size_t i = 0; i < rows.test.size(); ++i) {
        const Index r = rows.test[i];
        pred[static_cast<Index>(i)] = batch.data.row(r).dot(result.probe.weights.transpose()) + result.probe.bias;
        truth[static_cast<Index>(i)] = target[r];
    }
    result.correlation = pearson(pred, truth);
    const Vector analytic = analytic_norm_probe(dict, weights);
    result.cosine_to_analytic = result.probe.weights.dot(analytic) / (result.probe.weights.norm() * analytic.norm());
    return result;
}

} // namespace dm
