#include "darkmatter/pipelines.hpp"

#include <algorithm>
#include <cmath>

#include "darkmatter/sae.hpp"

namespace dm {

namespace {

void require_aligned(const Matrix& a, const Matrix& b, const char* what)
{
    require_dims(b.rows(), a.rows(), what);
}

double pooled_sum(const Matrix& m, const std::vector<Index>& rows)
{
    double s = 0.0;
    for (Index r : rows) {
        s += m.row(r).squaredNorm();
    }
    return s;
}

double centered_sum(const Matrix& m, const std::vector<Index>& rows)
{
    RowVector mean = RowVector::Zero(m.cols());
    for (Index r : rows) {
        mean += m.row(r);
    }
    mean /= static_cast<double>(rows.size());
    double s = 0.0;
    for (Index r : rows) {
        s += (m.row(r) - mean).squaredNorm();
    }
    return s;
}

double mean_row_norm(const Matrix& m)
{
    return m.rows() == 0 ? 0.0 : m.rowwise().norm().mean();
}

double population_std(const std::vector<double>& v)
{
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) {
        var += (x - mean) * (x - mean);
    }
    return std::sqrt(var / static_cast<double>(v.size()));
}

} // namespace

LinearProbe predict_error_norm(const Matrix& x, const Matrix& errors, const SplitSpec& split)
{
    require_aligned(x, errors, "error rows");
    const Vector target = errors.rowwise().squaredNorm();
    return fit_probe(x, target, split);
}

ErrorDecomposition predict_error_vector(const OlsSolver& solver, const Matrix& x, const Matrix& errors)
{
    require_aligned(x, errors, "error rows");
    require_dims(errors.cols(), x.cols(), "error dimension");
    ErrorDecomposition out;
    out.vector_probe = solver.fit(errors);
    const Vector norm_target = errors.rowwise().squaredNorm();
    const LinearMap norm_map = solver.fit(Matrix(norm_target));
    out.norm_probe.weights = norm_map.matrix.row(0).transpose();
    out.norm_probe.bias = norm_map.bias[0];
    out.norm_probe.test_r2 = std::isnan(norm_map.mean_r2) ? 0.0 : norm_map.mean_r2;
    out.norm_probe.train_r2 = std::isnan(norm_map.train_mean_r2) ? 0.0 : norm_map.train_mean_r2;
    out.norm_probe.split = norm_map.split;
    out.norm_probe.intercept = norm_map.intercept;

    out.sae_error = ActivationBatch::derived(errors, "sae_error");
    out.linear_error = ActivationBatch::derived(out.vector_probe.predict(x), "linear_error");
    out.nonlinear_error = ActivationBatch::derived(errors - out.linear_error.data, "nonlinear_error");

    const auto& split = solver.split();
    const double tot_test = centered_sum(x, split.test);
    const double tot_train = centered_sum(x, split.train);
    if (!(tot_test > 0.0) || !(tot_train > 0.0)) {
        throw DegenerateFit("error decomposition: x has zero variance on a split");
    }
    out.fvu_sae = pooled_sum(errors, split.test) / tot_test;
    out.fvu_nonlinear = pooled_sum(out.nonlinear_error.data, split.test) / tot_test;
    out.fvu_sae_train = pooled_sum(errors, split.train) / tot_train;
    out.fvu_nonlinear_train = pooled_sum(out.nonlinear_error.data, split.train) / tot_train;

    out.mean_norms.x = mean_row_norm(x);
    out.mean_norms.sae = mean_row_norm(x - errors);
    out.mean_norms.sae_error = mean_row_norm(errors);
    out.mean_norms.linear_error = mean_row_norm(out.linear_error.data);
    out.mean_norms.nonlinear_error = mean_row_norm(out.nonlinear_error.data);
    return out;
}

ErrorDecomposition predict_error_vector(const Matrix& x, const Matrix& errors, const SplitSpec& split)
{
    require_aligned(x, errors, "error rows");
    OlsSolver solver(x, make_split(x.rows(), split), split);
    return predict_error_vector(solver, x, errors);
}

LinearProbe per_token_scaling_probe(const Matrix& errors_small, const Matrix& errors_large, const SplitSpec& split,
                                    bool intercept)
{
    require_aligned(errors_small, errors_large, "per-token rows");
    const Matrix reg = errors_small.rowwise().squaredNorm();
    const Vector target = errors_large.rowwise().squaredNorm();
    return fit_probe(reg, target, split, intercept);
}

TokenProbeComparison per_token_scaling_probe_with_nonlinear(const Matrix& errors_small, const Matrix& nonlinear_small,
                                                            const Matrix& errors_large, const SplitSpec& split,
                                                            bool intercept)
{
    require_aligned(errors_small, errors_large, "per-token rows");
    require_aligned(errors_small, nonlinear_small, "per-token rows");
    TokenProbeComparison out;
    out.c_star = per_token_scaling_probe(errors_small, errors_large, split, intercept);
    Matrix reg(errors_small.rows(), 2);
    reg.col(0) = errors_small.rowwise().squaredNorm();
    reg.col(1) = nonlinear_small.rowwise().squaredNorm();
    const Vector target = errors_large.rowwise().squaredNorm();
    out.d_star = fit_probe(reg, target, split, intercept);
    const double fvu_c = 1.0 - out.c_star.test_r2;
    const double fvu_d = 1.0 - out.d_star.test_r2;
    out.percent_fvu_decrease = fvu_c > 0.0 ? 100.0 * (fvu_c - fvu_d) / fvu_c : 0.0;
    return out;
}

std::vector<ComponentR2> norm_prediction_test(const std::vector<NamedMatrix>& components, const Matrix& x,
                                              const SplitSpec& split)
{
    OlsSolver solver(x, make_split(x.rows(), split), split);
    std::vector<ComponentR2> out;
    for (const auto& [name, data] : components) {
        require_aligned(x, *data, "norm-test component rows");
        const LinearMap map = solver.fit(Matrix(data->rowwise().squaredNorm()));
        out.push_back({name, std::isnan(map.mean_r2) ? 0.0 : map.mean_r2,
                       std::isnan(map.train_mean_r2) ? 0.0 : map.train_mean_r2});
    }
    return out;
}

std::vector<ComponentR2> norm_prediction_test(const ErrorDecomposition& decomp, const Matrix& x,
                                              const SplitSpec& split)
{
    const Matrix sae = x - decomp.sae_error.data;
    return norm_prediction_test({{"x", &x},
                                 {"sae", &sae},
                                 {"sae_error", &decomp.sae_error.data},
                                 {"linear_error", &decomp.linear_error.data},
                                 {"nonlinear_error", &decomp.nonlinear_error.data}},
                                x, split);
}

MaskSweepResult masking_sweep(const SyntheticSetup& setup, double x_noise_sigma, double recon_noise_sigma,
                              const std::vector<double>& keep_fractions)
{
    if (keep_fractions.size() < 4) {
        throw InvalidArgument("mask sweep needs at least 4 keep fractions");
    }
    for (std::size_t i = 1; i < keep_fractions.size(); ++i) {
        if (!(keep_fractions[i] > keep_fractions[i - 1])) {
            throw InvalidArgument("mask sweep: keep fractions must be strictly increasing");
        }
    }
    if (x_noise_sigma < 0.0 || recon_noise_sigma < 0.0) {
        throw InvalidArgument("mask sweep: noise sigmas must be >= 0");
    }
    const DenseComponentSpec dense =
        x_noise_sigma > 0.0 ? DenseComponentSpec::gaussian(x_noise_sigma) : DenseComponentSpec{};
    const auto batch = sample_batch(setup.dict, setup.weights, dense, setup.samples, setup.seed);
    OlsSolver solver(batch.data, make_split(batch.rows(), setup.split), setup.split);

    MaskSweepResult result;
    std::vector<double> nonlinear;
    for (double frac : keep_fractions) {
        const auto masked = masked_reconstruction(batch, setup.dict, setup.weights, frac, recon_noise_sigma, setup.seed);
        const auto decomp = predict_error_vector(solver, batch.data, masked.error.data);
        MaskSweepPoint p;
        p.keep_fraction = frac;
        p.kept = static_cast<Index>(masked.kept.size());
        p.fvu_sae = decomp.fvu_sae;
        p.fvu_nonlinear = decomp.fvu_nonlinear;
        p.fvu_sae_train = decomp.fvu_sae_train;
        p.fvu_nonlinear_train = decomp.fvu_nonlinear_train;
        result.points.push_back(p);
        nonlinear.push_back(p.fvu_nonlinear);
    }
    result.flatness_std = population_std(nonlinear);
    return result;
}

CorrelationMatrix correlation_matrix(const std::vector<NoiseCell>& cells)
{
    const auto n = static_cast<Index>(cells.size());
    Vector xv(n), rv(n), dense(n), intro(n);
    for (Index i = 0; i < n; ++i) {
        const auto& c = cells[static_cast<std::size_t>(i)];
        xv[i] = c.x_noise_sigma * c.x_noise_sigma;
        rv[i] = c.recon_noise_sigma * c.recon_noise_sigma;
        dense[i] = c.dense_estimate;
        intro[i] = c.introduced_estimate;
    }
    CorrelationMatrix m;
    m(0, 0) = pearson(xv, dense);
    m(0, 1) = pearson(xv, intro);
    m(1, 0) = pearson(rv, dense);
    m(1, 1) = pearson(rv, intro);
    return m;
}

namespace {

std::size_t distinct_levels(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

} // namespace

NoiseGridResult noise_injection_correlation(const SyntheticSetup& setup, const std::vector<double>& x_noise_sigmas,
                                            const std::vector<double>& recon_noise_sigmas,
                                            const std::vector<double>& keep_fractions)
{
    if (distinct_levels(x_noise_sigmas) < 3 || distinct_levels(recon_noise_sigmas) < 3) {
        throw InvalidArgument("noise grid: need at least 3 distinct levels per axis");
    }
    const auto nx = static_cast<Index>(x_noise_sigmas.size());
    const auto nr = static_cast<Index>(recon_noise_sigmas.size());
    NoiseGridResult result;
    result.cells.resize(static_cast<std::size_t>(nx * nr));
    parallel_for(nx * nr, [&](Index cell) {
        NoiseCell c;
        c.x_index = cell / nr;
        c.recon_index = cell % nr;
        c.x_noise_sigma = x_noise_sigmas[static_cast<std::size_t>(c.x_index)];
        c.recon_noise_sigma = recon_noise_sigmas[static_cast<std::size_t>(c.recon_index)];
        c.sweep = masking_sweep(setup, c.x_noise_sigma, c.recon_noise_sigma, keep_fractions);
        Vector widths(static_cast<Index>(c.sweep.points.size()));
        Vector fvus(widths.size());
        double level = 0.0;
        for (std::size_t i = 0; i < c.sweep.points.size(); ++i) {
            widths[static_cast<Index>(i)] = static_cast<double>(c.sweep.points[i].kept);
            fvus[static_cast<Index>(i)] = c.sweep.points[i].fvu_sae;
            level += c.sweep.points[i].fvu_nonlinear;
        }
        c.fit = fit_power_law_with_constant(widths, fvus);
        c.nonlinear_level = level / static_cast<double>(c.sweep.points.size());
        c.dense_estimate = c.fit.c - c.nonlinear_level;
        c.introduced_estimate = c.nonlinear_level;
        result.cells[static_cast<std::size_t>(cell)] = std::move(c);
    });
    result.correlation = correlation_matrix(result.cells);
    return result;
}

ScalingBreakdown breakdown_curve(const std::vector<double>& widths, const std::vector<double>& fvu_sae,
                                 const std::vector<double>& fvu_nonlinear,
                                 const std::optional<std::vector<double>>& fvu_nonlinear_ito)
{
    const auto k = widths.size();
    if (fvu_sae.size() != k || fvu_nonlinear.size() != k || (fvu_nonlinear_ito && fvu_nonlinear_ito->size() != k)) {
        throw DimensionMismatch("breakdown: per-width lists must have equal length");
    }
    if (k < 4) {
        throw InvalidArgument("breakdown: need at least 4 widths");
    }
    ScalingBreakdown out;
    out.fit = fit_power_law_with_constant(Eigen::Map<const Vector>(widths.data(), static_cast<Index>(k)),
                                          Eigen::Map<const Vector>(fvu_sae.data(), static_cast<Index>(k)));
    double level = 0.0;
    for (double v : fvu_nonlinear) {
        level += v;
    }
    out.nonlinear_level = level / static_cast<double>(k);
    out.linear_band_clipped = out.nonlinear_level > out.fit.c;

    auto clip = [](double v, double& clipped) {
        if (v < 0.0) {
            clipped += -v;
            return 0.0;
        }
        return v;
    };
    for (std::size_t i = 0; i < k; ++i) {
        BreakdownRow row;
        row.width = widths[i];
        row.fvu_sae = fvu_sae[i];
        row.fvu_nonlinear = fvu_nonlinear[i];
        row.absent_features = clip(fvu_sae[i] - out.fit.c, row.clipped);
        row.linear_error = clip(out.fit.c - out.nonlinear_level, row.clipped);
        double encoder = 0.0;
        if (fvu_nonlinear_ito) {
            row.fvu_nonlinear_ito = (*fvu_nonlinear_ito)[i];
            encoder = clip(fvu_nonlinear[i] - (*fvu_nonlinear_ito)[i], row.clipped);
        }
        row.encoder = encoder;
        row.nonlinear = clip(out.nonlinear_level - encoder, row.clipped);
        out.rows.push_back(row);
    }
    return out;
}

ShrinkageResult shrinkage_diagnostic(const ErrorDecomposition& decomp, const Matrix& x)
{
    require_aligned(x, decomp.sae_error.data, "shrinkage rows");
    const Matrix& pred = decomp.linear_error.data;
    const Matrix sae = x - decomp.sae_error.data;
    std::vector<double> cosines;
    std::vector<double> ratios;
    ShrinkageResult out;
    for (Index r = 0; r < x.rows(); ++r) {
        const double nx = x.row(r).norm();
        const double np = pred.row(r).norm();
        if (!(nx > 0.0) || !(np > 0.0)) {
            ++out.excluded;
            continue;
        }
        cosines.push_back(pred.row(r).dot(x.row(r)) / (nx * np));
        ratios.push_back(sae.row(r).norm() / nx);
    }
    out.cosines = Eigen::Map<Vector>(cosines.data(), static_cast<Index>(cosines.size()));
    out.norm_ratios = Eigen::Map<Vector>(ratios.data(), static_cast<Index>(ratios.size()));
    if (!cosines.empty()) {
        out.mean_cosine = out.cosines.mean();
        out.mean_norm_ratio = out.norm_ratios.mean();
    }
    return out;
}

std::vector<AuxR2> regress_error_from_aux(const std::vector<NamedMatrix>& aux,
                                          const std::vector<NamedMatrix>& targets, const SplitSpec& split)
{
    std::vector<AuxR2> out;
    for (const auto& [source, a] : aux) {
        OlsSolver solver(*a, make_split(a->rows(), split), split);
        for (const auto& [target, t] : targets) {
            require_aligned(*a, *t, "aux regression rows");
            const LinearMap map = solver.fit(*t);
            out.push_back({source, target, map.mean_r2, 1.0 - map.total_fvu});
        }
    }
    return out;
}

RetrainComparison component_retrain_comparison(const ErrorDecomposition& decomp, const TrainConfig& config,
                                               const ActivationRule& rule, Index latents)
{
    const auto run = [&](const Matrix& target, const char* name) {
        const RowVector mean = target.colwise().mean();
        if (!((target.rowwise() - mean).squaredNorm() > 0.0)) {
            throw DegenerateFit(std::string("retrain: ") + name + " has zero variance");
        }
        MatrixStream stream(target, config.seed);
        const auto trained = train(config, stream, rule, latents);
        return reconstruction_fvu(trained.model, target);
    };
    RetrainComparison out;
    out.fvu_linear = run(decomp.linear_error.data, "linear_error");
    out.fvu_nonlinear = run(decomp.nonlinear_error.data, "nonlinear_error");
    return out;
}

} // namespace dm
