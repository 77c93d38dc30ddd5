#include "darkmatter/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dm {

namespace {

constexpr Index kBlockRows = 1024;

Index block_count(Index n) { return (n + kBlockRows - 1) / kBlockRows; }

} // namespace

const char* to_string(DictionaryMode mode)
{
    return mode == DictionaryMode::orthonormal ? "orthonormal" : "random-unit";
}

DictionaryMode parse_dictionary_mode(const std::string& s)
{
    if (s == "orthonormal") {
        return DictionaryMode::orthonormal;
    }
    if (s == "random-unit") {
        return DictionaryMode::random_unit;
    }
    throw InvalidArgument("unknown dictionary mode '" + s + "'");
}

FeatureDictionary build_dictionary(Index d, Index m, DictionaryMode mode, std::uint64_t seed)
{
    if (d <= 0 || m <= 0) {
        throw InvalidArgument("build_dictionary: d and m must be positive");
    }
    if (mode == DictionaryMode::orthonormal && m > d) {
        throw InvalidArgument("build_dictionary: orthonormal mode requires m <= d (m=" + std::to_string(m)
                              + ", d=" + std::to_string(d) + ")");
    }
    auto rng = make_rng(seed, stream::dictionary);
    std::normal_distribution<double> normal(0.0, 1.0);

    FeatureDictionary dict;
    dict.mode = mode;
    dict.seed = seed;
    if (mode == DictionaryMode::orthonormal) {
        Eigen::MatrixXd g(d, d);
        for (Index i = 0; i < d; ++i) {
            for (Index j = 0; j < d; ++j) {
                g(i, j) = normal(rng);
            }
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        const Eigen::MatrixXd q = qr.householderQ();
        dict.vectors = q.leftCols(m).transpose();
        // Householder output is orthonormal to rounding; tidy the norms anyway.
        dict.vectors.rowwise().normalize();
    } else {
        dict.vectors.resize(m, d);
        for (Index i = 0; i < m; ++i) {
            double norm = 0.0;
            do {
                for (Index j = 0; j < d; ++j) {
                    dict.vectors(i, j) = normal(rng);
                }
                norm = dict.vectors.row(i).norm();
            } while (norm == 0.0);
            dict.vectors.row(i) /= norm;
        }
    }
    dict.coherence = m > 1 ? (dict.gram() - Matrix::Identity(m, m)).cwiseAbs().maxCoeff() : 0.0;
    return dict;
}

const char* to_string(WeightKind kind)
{
    switch (kind) {
    case WeightKind::bernoulli: return "bernoulli";
    case WeightKind::poisson: return "poisson";
    case WeightKind::power_law_bernoulli: return "power-law-bernoulli";
    }
    return "unknown";
}

WeightKind parse_weight_kind(const std::string& s)
{
    if (s == "bernoulli") {
        return WeightKind::bernoulli;
    }
    if (s == "poisson") {
        return WeightKind::poisson;
    }
    if (s == "power-law-bernoulli") {
        return WeightKind::power_law_bernoulli;
    }
    throw InvalidArgument("unknown weight kind '" + s + "'");
}

WeightModel WeightModel::bernoulli(Vector p, Vector s)
{
    WeightModel w;
    w.kind = WeightKind::bernoulli;
    w.probability = std::move(p);
    w.scale = std::move(s);
    w.validate();
    return w;
}

WeightModel WeightModel::poisson(Vector lambda)
{
    WeightModel w;
    w.kind = WeightKind::poisson;
    w.rate = std::move(lambda);
    w.validate();
    return w;
}

WeightModel WeightModel::power_law_bernoulli(double exponent, double expected_l0, Vector s)
{
    WeightModel w;
    w.kind = WeightKind::power_law_bernoulli;
    w.exponent = exponent;
    w.target_l0 = expected_l0;
    w.probability = power_law_probabilities(s.size(), exponent, expected_l0);
    w.scale = std::move(s);
    w.validate();
    return w;
}

Index WeightModel::size() const
{
    return kind == WeightKind::poisson ? rate.size() : probability.size();
}

void WeightModel::validate() const
{
    if (kind == WeightKind::poisson) {
        if (rate.size() == 0) {
            throw InvalidArgument("weight model: empty rate vector");
        }
        if (!(rate.array() > 0.0).all() || !rate.allFinite()) {
            throw InvalidArgument("weight model: Poisson rates must be positive");
        }
        return;
    }
    if (probability.size() == 0 || probability.size() != scale.size()) {
        throw InvalidArgument("weight model: probability and scale vectors must be non-empty and aligned");
    }
    if (!(probability.array() >= 0.0).all() || !(probability.array() <= 1.0).all()) {
        throw InvalidArgument("weight model: probabilities must lie in [0, 1]");
    }
    if (!(scale.array() > 0.0).all() || !scale.allFinite()) {
        throw InvalidArgument("weight model: scales must be positive");
    }
}

double WeightModel::moment(Index i, int order) const
{
    if (kind == WeightKind::poisson) {
        const double l = rate[i];
        switch (order) {
        case 1: return l;
        case 2: return l * l + l;
        case 3: return l * l * l + 3 * l * l + l;
        case 4: return l * l * l * l + 6 * l * l * l + 7 * l * l + l;
        default: break;
        }
    } else if (order >= 1 && order <= 4) {
        return probability[i] * std::pow(scale[i], order);
    }
    throw InvalidArgument("moment order must be 1..4");
}

Vector WeightModel::mean() const
{
    Vector out(size());
    for (Index i = 0; i < size(); ++i) {
        out[i] = moment(i, 1);
    }
    return out;
}

Vector WeightModel::second_moment() const
{
    Vector out(size());
    for (Index i = 0; i < size(); ++i) {
        out[i] = moment(i, 2);
    }
    return out;
}

double WeightModel::expected_l0() const
{
    if (kind == WeightKind::poisson) {
        return (1.0 - (-rate.array()).exp()).sum();
    }
    return probability.sum();
}

double WeightModel::l0_variance() const
{
    if (kind == WeightKind::poisson) {
        const Eigen::ArrayXd q = 1.0 - (-rate.array()).exp();
        return (q * (1.0 - q)).sum();
    }
    return (probability.array() * (1.0 - probability.array())).sum();
}

Vector power_law_probabilities(Index m, double exponent, double expected_l0)
{
    if (m <= 0) {
        throw InvalidArgument("power law: m must be positive");
    }
    if (!(expected_l0 > 0.0) || expected_l0 > static_cast<double>(m)) {
        throw InvalidArgument("power law: expected L0 must lie in (0, m]");
    }
    Vector raw(m);
    for (Index i = 0; i < m; ++i) {
        raw[i] = std::pow(static_cast<double>(i + 1), -exponent);
    }
    // Water-filling: clip at 1 and rescale the unclipped tail until the sum matches.
    Vector p(m);
    std::vector<bool> clipped(static_cast<std::size_t>(m), false);
    for (int iter = 0; iter <= m; ++iter) {
        double fixed = 0.0;
        double free_mass = 0.0;
        for (Index i = 0; i < m; ++i) {
            if (clipped[static_cast<std::size_t>(i)]) {
                fixed += 1.0;
            } else {
                free_mass += raw[i];
            }
        }
        const double factor = (expected_l0 - fixed) / free_mass;
        bool changed = false;
        for (Index i = 0; i < m; ++i) {
            if (clipped[static_cast<std::size_t>(i)]) {
                p[i] = 1.0;
                continue;
            }
            p[i] = raw[i] * factor;
            if (p[i] > 1.0) {
                clipped[static_cast<std::size_t>(i)] = true;
                changed = true;
            }
        }
        if (!changed) {
            break;
        }
    }
    return p;
}

Vector constant_scales(Index m, double s) { return Vector::Constant(m, s); }

Vector uniform_scales(Index m, double lo, double hi, std::uint64_t seed)
{
    if (!(lo > 0.0) || hi < lo) {
        throw InvalidArgument("uniform scales need 0 < lo <= hi");
    }
    auto rng = make_rng(seed, stream::scales);
    std::uniform_real_distribution<double> u(lo, hi);
    Vector s(m);
    for (Index i = 0; i < m; ++i) {
        s[i] = u(rng);
    }
    return s;
}

Vector log_uniform_scales(Index m, double lo, double hi, std::uint64_t seed)
{
    if (!(lo > 0.0) || hi < lo) {
        throw InvalidArgument("log-uniform scales need 0 < lo <= hi");
    }
    auto rng = make_rng(seed, stream::scales);
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    Vector s(m);
    for (Index i = 0; i < m; ++i) {
        s[i] = std::exp(u(rng));
    }
    return s;
}

Vector power_scales(Index m, double base, double exponent)
{
    Vector s(m);
    for (Index i = 0; i < m; ++i) {
        s[i] = base * std::pow(static_cast<double>(i + 1), -exponent);
    }
    return s;
}

void DenseComponentSpec::validate() const
{
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw InvalidArgument("dense component: sigma must be a finite nonnegative number");
    }
}

ActivationBatch ActivationBatch::derived(Matrix data, std::string detail)
{
    ActivationBatch b;
    b.data = std::move(data);
    b.provenance.source = Provenance::Source::derived;
    b.provenance.detail = std::move(detail);
    return b;
}

ActivationBatch sample_batch(const FeatureDictionary& dict, const WeightModel& weights,
                             const DenseComponentSpec& dense, Index n, std::uint64_t seed,
                             const SampleOptions& options)
{
    weights.validate();
    dense.validate();
    require_dims(weights.size(), dict.size(), "sample_batch: weight model latent count vs dictionary size");
    if (n <= 0) {
        throw InvalidArgument("sample_batch: n must be positive");
    }
    const Index m = dict.size();
    const Index d = dict.dim();
    const bool with_dense = dense.kind == DenseKind::isotropic_gaussian;

    ActivationBatch batch;
    batch.data.resize(n, d);
    batch.provenance = {Provenance::Source::generated, seed, "synthetic"};
    std::vector<SparseRow> truth;
    if (options.keep_ground_truth) {
        truth.resize(static_cast<std::size_t>(n));
    }
    if (with_dense) {
        batch.dense = Matrix(n, d);
    }

    // Scales are used as float so that stored ground truth matches the data exactly.
    std::vector<float> scale32;
    if (weights.kind != WeightKind::poisson) {
        scale32.resize(static_cast<std::size_t>(m));
        for (Index i = 0; i < m; ++i) {
            scale32[static_cast<std::size_t>(i)] = static_cast<float>(weights.scale[i]);
        }
    }

    parallel_for(block_count(n), [&](Index block) {
        const Index begin = block * kBlockRows;
        const Index rows = std::min(kBlockRows, n - begin);
        Matrix w = Matrix::Zero(rows, m);
        for (Index r = 0; r < rows; ++r) {
            const Index row = begin + r;
            auto rng = make_rng(seed, stream::weights, static_cast<std::uint64_t>(row));
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            SparseRow* gt = options.keep_ground_truth ? &truth[static_cast<std::size_t>(row)] : nullptr;
            for (Index i = 0; i < m; ++i) {
                float value = 0.0f;
                if (weights.kind == WeightKind::poisson) {
                    std::poisson_distribution<int> poisson(weights.rate[i]);
                    value = static_cast<float>(poisson(rng));
                } else if (unit(rng) < weights.probability[i]) {
                    value = scale32[static_cast<std::size_t>(i)];
                }
                if (value != 0.0f) {
                    w(r, i) = value;
                    if (gt) {
                        gt->push_back({static_cast<std::uint32_t>(i), value});
                    }
                }
            }
            if (with_dense) {
                std::normal_distribution<double> normal(0.0, dense.sigma);
                for (Index j = 0; j < d; ++j) {
                    (*batch.dense)(row, j) = dense.sigma > 0.0 ? normal(rng) : 0.0;
                }
            }
        }
        batch.data.middleRows(begin, rows).noalias() = w * dict.vectors;
        if (with_dense) {
            batch.data.middleRows(begin, rows) += batch.dense->middleRows(begin, rows);
        }
    });
    if (options.keep_ground_truth) {
        batch.ground_truth = std::move(truth);
    }
    return batch;
}

double ground_truth_residual(const ActivationBatch& batch, const FeatureDictionary& dict)
{
    if (!batch.ground_truth) {
        throw InvalidArgument("ground_truth_residual: batch carries no ground truth");
    }
    require_dims(batch.dim(), dict.dim(), "ground_truth_residual: dimension");
    double worst = 0.0;
    for (Index r = 0; r < batch.rows(); ++r) {
        RowVector x = RowVector::Zero(dict.dim());
        for (const auto& e : (*batch.ground_truth)[static_cast<std::size_t>(r)]) {
            x += static_cast<double>(e.value) * dict.vectors.row(e.index);
        }
        if (batch.dense) {
            x += batch.dense->row(r);
        }
        worst = std::max(worst, (batch.data.row(r) - x).cwiseAbs().maxCoeff());
    }
    return worst;
}

double mean_l0(const std::vector<SparseRow>& rows)
{
    if (rows.empty()) {
        return 0.0;
    }
    std::size_t total = 0;
    for (const auto& r : rows) {
        total += r.size();
    }
    return static_cast<double>(total) / static_cast<double>(rows.size());
}

std::vector<Index> rank_by_expected_activation(const WeightModel& weights)
{
    const Vector mu = weights.mean();
    std::vector<Index> order(static_cast<std::size_t>(mu.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return mu[a] > mu[b]; });
    return order;
}

Index kept_count(Index m, double keep_fraction)
{
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
        throw InvalidArgument("keep_fraction must lie in (0, 1]");
    }
    // Guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4.
    const double raw = keep_fraction * static_cast<double>(m);
    const auto k = static_cast<Index>(std::ceil(raw - 1e-9));
    return std::clamp<Index>(k, 1, m);
}

MaskedReconstruction masked_reconstruction(const ActivationBatch& batch, const FeatureDictionary& dict,
                                           const WeightModel& weights, double keep_fraction,
                                           double recon_noise_sigma, std::uint64_t seed)
{
    if (!batch.ground_truth) {
        throw InvalidArgument("masked_reconstruction: batch carries no ground-truth weights");
    }
    if (!(recon_noise_sigma >= 0.0)) {
        throw InvalidArgument("masked_reconstruction: recon_noise_sigma must be nonnegative");
    }
    require_dims(weights.size(), dict.size(), "masked_reconstruction: weight model vs dictionary");
    require_dims(batch.dim(), dict.dim(), "masked_reconstruction: batch dimension");
    const Index m = dict.size();
    const Index keep = kept_count(m, keep_fraction);
    const auto order = rank_by_expected_activation(weights);

    MaskedReconstruction out;
    out.kept.assign(order.begin(), order.begin() + keep);
    std::vector<bool> kept_mask(static_cast<std::size_t>(m), false);
    for (Index i : out.kept) {
        kept_mask[static_cast<std::size_t>(i)] = true;
    }

    const Index n = batch.rows();
    const Index d = batch.dim();
    Matrix recon = Matrix::Zero(n, d);
    out.noise = Matrix::Zero(n, d);
    const auto& truth = *batch.ground_truth;
    parallel_for(block_count(n), [&](Index block) {
        const Index begin = block * kBlockRows;
        const Index end = std::min(n, begin + kBlockRows);
        for (Index row = begin; row < end; ++row) {
            for (const auto& e : truth[static_cast<std::size_t>(row)]) {
                if (kept_mask[e.index]) {
                    recon.row(row) += static_cast<double>(e.value) * dict.vectors.row(e.index);
                }
            }
            if (recon_noise_sigma > 0.0) {
                auto rng = make_rng(seed, stream::recon_noise, static_cast<std::uint64_t>(row));
                std::normal_distribution<double> normal(0.0, recon_noise_sigma);
                for (Index j = 0; j < d; ++j) {
                    out.noise(row, j) = normal(rng);
                }
                recon.row(row) += out.noise.row(row);
            }
        }
    });
    out.error = ActivationBatch::derived(batch.data - recon, "masked error");
    out.recon = ActivationBatch::derived(std::move(recon), "masked reconstruction");
    out.recon.provenance.seed = seed;
    out.error.provenance.seed = seed;
    return out;
}

} // namespace dm
