#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "darkmatter/pipelines.hpp"
#include "darkmatter/sae.hpp"

using namespace dm;

namespace {

Matrix gaussian(Index n, Index d, std::uint64_t seed, double sigma = 1.0)
{
    auto rng = make_rng(seed, 77);
    std::normal_distribution<double> z(0.0, sigma);
    Matrix m(n, d);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = z(rng);
    }
    return m;
}

SyntheticSetup small_setup(Index d, Index n, std::uint64_t seed)
{
    SyntheticSetup s;
    s.dict = build_dictionary(d, d, DictionaryMode::orthonormal, seed);
    s.weights = WeightModel::power_law_bernoulli(1.0, 4.0, constant_scales(d, 1.0));
    s.samples = n;
    s.split = {0.6, seed};
    s.seed = seed;
    return s;
}

struct MaskedData {
    FeatureDictionary dict;
    WeightModel weights;
    ActivationBatch batch;
    MaskedReconstruction masked;
};

MaskedData masked_data(Index d, Index n, double keep, double recon_sigma, std::uint64_t seed)
{
    MaskedData out;
    out.dict = build_dictionary(d, d, DictionaryMode::orthonormal, seed);
    out.weights = WeightModel::bernoulli(Vector::LinSpaced(d, 0.02, 0.2), uniform_scales(d, 0.5, 2.0, seed));
    out.batch = sample_batch(out.dict, out.weights, {}, n, seed);
    out.masked = masked_reconstruction(out.batch, out.dict, out.weights, keep, recon_sigma, seed);
    return out;
}

} // namespace

TEST_CASE("decomposition identity and in-sample improvement")
{
    const auto data = masked_data(32, 3000, 0.5, 0.05, 1);
    const auto decomp = predict_error_vector(data.batch.data, data.masked.error.data, {});
    const Matrix sum = decomp.linear_error.data + decomp.nonlinear_error.data;
    CHECK((sum - decomp.sae_error.data).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(decomp.fvu_nonlinear_train <= decomp.fvu_sae_train + 1e-9);
    CHECK(decomp.mean_norms.x > 0.0);
    CHECK(decomp.mean_norms.nonlinear_error > 0.0);
}

TEST_CASE("masked orthogonal features are fully linear error")
{
    const auto data = masked_data(32, 3000, 0.5, 0.0, 2);
    const auto decomp = predict_error_vector(data.batch.data, data.masked.error.data, {});
    CHECK(decomp.fvu_sae > 0.1);
    CHECK(decomp.fvu_nonlinear < 1e-6);
}

TEST_CASE("row-shuffled errors carry no linear signal")
{
    const Matrix x = gaussian(8000, 8, 3);
    std::vector<Index> perm(8000);
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(4, 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix shuffled = take_rows(x, perm);
    const auto decomp = predict_error_vector(x, shuffled, {});
    CHECK(std::abs(decomp.vector_probe.mean_r2) < 0.01);
}

TEST_CASE("error-norm probe")
{
    const auto data = masked_data(32, 4000, 0.5, 0.0, 5);
    CHECK(predict_error_norm(data.batch.data, data.masked.error.data, {}).test_r2 >= 0.99);

    const Matrix x = gaussian(500, 6, 6);
    Matrix signs = gaussian(500, 6, 7).array().sign().matrix();
    CHECK(predict_error_norm(x, signs, {}).test_r2 == doctest::Approx(0.0));
}

TEST_CASE("per-token probe exact cases")
{
    const Matrix e = gaussian(1000, 8, 8);
    const auto self = per_token_scaling_probe(e, e, {});
    CHECK(self.weights[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(self.bias) < 1e-6);
    CHECK(self.test_r2 == doctest::Approx(1.0).epsilon(1e-6));

    const auto scaled = per_token_scaling_probe(e, 0.8 * e, {});
    CHECK(scaled.weights[0] == doctest::Approx(0.64).epsilon(1e-6));
    CHECK(scaled.test_r2 == doctest::Approx(1.0).epsilon(1e-6));

    const Matrix large = 0.7 * e + gaussian(1000, 8, 9, 0.3);
    const auto zero = per_token_scaling_probe_with_nonlinear(e, Matrix::Zero(1000, 8), large, {});
    CHECK(std::abs(zero.percent_fvu_decrease) < 1e-6);
    const auto same = per_token_scaling_probe_with_nonlinear(e, e, large, {});
    CHECK(std::abs(same.percent_fvu_decrease) < 1e-6);

    const auto no_bias = per_token_scaling_probe(e, e, {}, false);
    CHECK(no_bias.bias == 0.0);
    CHECK_FALSE(no_bias.intercept);
}

TEST_CASE("norm prediction on components")
{
    const auto data = masked_data(32, 4000, 0.5, 0.05, 10);
    const Matrix noise = gaussian(4000, 32, 11);
    const auto generic = norm_prediction_test({{"x", &data.batch.data}, {"noise", &noise}}, data.batch.data, {});
    CHECK(generic[0].test_r2 >= 0.95);
    CHECK(std::abs(generic[1].test_r2) < 0.02);

    const auto decomp = predict_error_vector(data.batch.data, data.masked.error.data, {});
    const auto table = norm_prediction_test(decomp, data.batch.data, {});
    REQUIRE(table.size() == 5);
    CHECK(table[3].name == "linear_error");
    CHECK(table[4].name == "nonlinear_error");
    CHECK(table[3].test_r2 > table[4].test_r2);
}

TEST_CASE("mask sweep flatness and endpoints")
{
    auto setup = small_setup(64, 4000, 12);
    const std::vector<double> fractions{0.3, 0.5, 0.7, 0.9};
    const auto noisy = masking_sweep(setup, 0.02, 0.05, fractions);
    REQUIRE(noisy.points.size() == 4);
    CHECK(noisy.flatness_std <= 0.02);
    for (std::size_t i = 1; i < 4; ++i) {
        CHECK(noisy.points[i].fvu_sae < noisy.points[i - 1].fvu_sae);
    }

    const auto clean = masking_sweep(setup, 0.0, 0.0, fractions);
    for (const auto& p : clean.points) {
        CHECK(p.fvu_nonlinear < 1e-6);
    }

    const auto end = masking_sweep(setup, 0.0, 0.05, {0.25, 0.5, 0.75, 1.0});
    const auto batch = sample_batch(setup.dict, setup.weights, {}, setup.samples, setup.seed);
    const auto masked = masked_reconstruction(batch, setup.dict, setup.weights, 1.0, 0.05, setup.seed);
    const auto split = make_split(setup.samples, setup.split);
    double noise = 0.0;
    for (Index r : split.test) {
        noise += masked.noise.row(r).squaredNorm();
    }
    const Matrix xt = take_rows(batch.data, split.test);
    const double total = (xt.rowwise() - xt.colwise().mean()).squaredNorm();
    CHECK(end.points.back().fvu_sae == doctest::Approx(noise / total).epsilon(1e-9));

    CHECK_THROWS_AS(masking_sweep(setup, 0.0, 0.0, {0.1, 0.2, 0.3}), InvalidArgument);
    CHECK_THROWS_AS(masking_sweep(setup, 0.0, 0.0, {0.1, 0.3, 0.2, 0.4}), InvalidArgument);
}

TEST_CASE("correlation matrix follows an axis relabeling")
{
    std::vector<NoiseCell> cells, swapped;
    auto rng = make_rng(13, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            NoiseCell c;
            c.x_noise_sigma = 0.01 * (i + 1);
            c.recon_noise_sigma = 0.02 * (j + 1);
            c.dense_estimate = c.x_noise_sigma * c.x_noise_sigma + 1e-4 * u(rng);
            c.introduced_estimate = c.recon_noise_sigma * c.recon_noise_sigma + 1e-4 * u(rng);
            cells.push_back(c);
            NoiseCell s = c;
            std::swap(s.x_noise_sigma, s.recon_noise_sigma);
            std::swap(s.dense_estimate, s.introduced_estimate);
            swapped.push_back(s);
        }
    }
    const auto a = correlation_matrix(cells);
    const auto b = correlation_matrix(swapped);
    Eigen::Matrix2d swap;
    swap << 0, 1, 1, 0;
    CHECK((b - swap * a * swap).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a(0, 0) > 0.9);
    CHECK(a(1, 1) > 0.9);
}

TEST_CASE("noise grid rejects degenerate axes")
{
    const auto setup = small_setup(16, 500, 14);
    CHECK_THROWS_AS(noise_injection_correlation(setup, {0.1, 0.1, 0.2}, {0.1, 0.2, 0.3}, {0.2, 0.4, 0.6, 0.8}),
                    InvalidArgument);
}

TEST_CASE("breakdown bands on a planted curve")
{
    std::vector<double> widths, sae, nl, ito;
    for (int i = 10; i <= 17; ++i) {
        const double w = std::pow(2.0, i);
        widths.push_back(w);
        sae.push_back(20.0 * std::pow(w, -0.7) + 0.2);
        nl.push_back(0.12);
        ito.push_back(0.1);
    }
    const auto out = breakdown_curve(widths, sae, nl, ito);
    CHECK(out.fit.c == doctest::Approx(0.2).epsilon(1e-4));
    CHECK(out.nonlinear_level == doctest::Approx(0.12));
    CHECK_FALSE(out.linear_band_clipped);
    for (const auto& r : out.rows) {
        CHECK(r.linear_error == doctest::Approx(0.08).epsilon(1e-3));
        CHECK(r.encoder == doctest::Approx(0.02));
        CHECK(r.nonlinear == doctest::Approx(0.10));
        CHECK(r.absent_features >= 0.0);
        const double sum = r.absent_features + r.linear_error + r.nonlinear + r.encoder;
        CHECK(std::abs(sum - r.fvu_sae) <= 1e-6 + r.clipped);
    }
    CHECK(out.rows.back().absent_features < out.rows.front().absent_features);
    CHECK(out.rows.back().absent_features < 0.01);

    const auto same = breakdown_curve(widths, sae, nl, nl);
    for (const auto& r : same.rows) {
        CHECK(r.encoder == 0.0);
    }

    const auto high = breakdown_curve(widths, sae, std::vector<double>(8, 0.3));
    CHECK(high.linear_band_clipped);
    for (const auto& r : high.rows) {
        CHECK(r.linear_error == 0.0);
        CHECK(r.clipped > 0.0);
        CHECK(std::abs(r.absent_features + r.linear_error + r.nonlinear + r.encoder - r.fvu_sae) <= 1e-6 + r.clipped);
    }
    CHECK_THROWS_AS(breakdown_curve(widths, sae, {0.1}), DimensionMismatch);
}

TEST_CASE("shrinkage diagnostic extremes")
{
    const Matrix x = gaussian(50, 4, 15);
    ErrorDecomposition decomp;
    decomp.sae_error = ActivationBatch::derived(0.5 * x);
    decomp.linear_error = ActivationBatch::derived(x);
    const auto same = shrinkage_diagnostic(decomp, x);
    CHECK(same.mean_cosine == doctest::Approx(1.0));
    CHECK(same.mean_norm_ratio == doctest::Approx(0.5));

    Matrix ortho(50, 4);
    ortho.col(0) = -x.col(1);
    ortho.col(1) = x.col(0);
    ortho.col(2) = -x.col(3);
    ortho.col(3) = x.col(2);
    decomp.linear_error = ActivationBatch::derived(ortho);
    CHECK(std::abs(shrinkage_diagnostic(decomp, x).mean_cosine) < 1e-12);

    Matrix with_zero = ortho;
    with_zero.row(0).setZero();
    decomp.linear_error = ActivationBatch::derived(with_zero);
    CHECK(shrinkage_diagnostic(decomp, x).excluded == 1);
}

TEST_CASE("auxiliary regressions")
{
    const Matrix target = gaussian(2000, 6, 16);
    const Matrix noise = gaussian(2000, 10, 17);
    const auto rows = regress_error_from_aux({{"self", &target}, {"noise", &noise}}, {{"target", &target}}, {});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mean_r2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rows[0].pooled_r2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(rows[1].mean_r2) < 0.02);
}

TEST_CASE("component retraining")
{
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.batch_size = 64;
    cfg.seed = 18;

    const Matrix shared = gaussian(400, 8, 19);
    ErrorDecomposition same;
    same.linear_error = ActivationBatch::derived(shared);
    same.nonlinear_error = ActivationBatch::derived(shared);
    const auto eq = component_retrain_comparison(same, cfg, TopK{2}, 16);
    CHECK(eq.fvu_linear == eq.fvu_nonlinear);

    ErrorDecomposition zero = same;
    zero.nonlinear_error = ActivationBatch::derived(Matrix::Constant(400, 8, 3.0));
    CHECK_THROWS_AS(component_retrain_comparison(zero, cfg, TopK{2}, 16), DegenerateFit);
}

TEST_CASE("sparse linear error retrains better than gaussian nonlinear error")
{
    const auto data = masked_data(32, 6000, 0.5, 0.0, 20);
    ErrorDecomposition decomp;
    decomp.linear_error = data.masked.error;
    decomp.nonlinear_error = ActivationBatch::derived(gaussian(6000, 32, 21, 0.2));
    TrainConfig cfg;
    cfg.steps = 1500;
    cfg.batch_size = 128;
    cfg.seed = 22;
    const auto cmp = component_retrain_comparison(decomp, cfg, TopK{4}, 64);
    MESSAGE("retrain fvu linear " << cmp.fvu_linear << " nonlinear " << cmp.fvu_nonlinear);
    CHECK(cmp.fvu_linear + 0.05 <= cmp.fvu_nonlinear);
}
