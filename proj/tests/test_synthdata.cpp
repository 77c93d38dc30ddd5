#include "doctest.h"

#include <cmath>

#include "darkmatter/synthdata.hpp"

using namespace dm;

namespace {

double brute_coherence(const Matrix& y)
{
    double worst = 0.0;
    for (Index i = 0; i < y.rows(); ++i) {
        for (Index j = 0; j < y.rows(); ++j) {
            if (i == j) {
                continue;
            }
            double dot = 0.0;
            for (Index k = 0; k < y.cols(); ++k) {
                dot += y(i, k) * y(j, k);
            }
            worst = std::max(worst, std::abs(dot));
        }
    }
    return worst;
}

double weight_norm_sq(const SparseRow& row)
{
    double s = 0.0;
    for (const auto& e : row) {
        s += static_cast<double>(e.value) * e.value;
    }
    return s;
}

} // namespace

TEST_CASE("orthonormal dictionary")
{
    const auto dict = build_dictionary(4, 4, DictionaryMode::orthonormal, 0);
    const Matrix g = dict.gram();
    CHECK((g - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(dict.coherence < 1e-6);

    const auto wide = build_dictionary(16, 8, DictionaryMode::orthonormal, 3);
    CHECK((wide.vectors.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(brute_coherence(wide.vectors) < 1e-6);
}

TEST_CASE("random-unit coherence matches a brute-force double loop")
{
    const auto dict = build_dictionary(64, 256, DictionaryMode::random_unit, 7);
    CHECK((dict.vectors.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(dict.coherence == doctest::Approx(brute_coherence(dict.vectors)).epsilon(1e-12));
    CHECK(dict.coherence > 0.1);
}

TEST_CASE("dictionary argument checks")
{
    CHECK_THROWS_AS(build_dictionary(4, 5, DictionaryMode::orthonormal, 0), InvalidArgument);
    CHECK_THROWS_AS(build_dictionary(0, 4, DictionaryMode::random_unit, 0), InvalidArgument);
    CHECK_THROWS_AS(build_dictionary(4, 0, DictionaryMode::random_unit, 0), InvalidArgument);
    CHECK(parse_dictionary_mode("random-unit") == DictionaryMode::random_unit);
    CHECK_THROWS(parse_dictionary_mode("sparse"));
}

TEST_CASE("dictionary is deterministic in its seed")
{
    const auto a = build_dictionary(32, 48, DictionaryMode::random_unit, 11);
    const auto b = build_dictionary(32, 48, DictionaryMode::random_unit, 11);
    const auto c = build_dictionary(32, 48, DictionaryMode::random_unit, 12);
    CHECK(a.vectors == b.vectors);
    CHECK(a.vectors != c.vectors);
}

TEST_CASE("weight model moments")
{
    const auto b = WeightModel::bernoulli(Vector::Constant(3, 0.1), Vector::Constant(3, 2.0));
    CHECK(b.moment(0, 1) == doctest::Approx(0.2));
    CHECK(b.moment(0, 2) == doctest::Approx(0.4));
    CHECK(b.moment(0, 4) == doctest::Approx(1.6));
    CHECK(b.expected_l0() == doctest::Approx(0.3));

    const auto p = WeightModel::poisson(Vector::Constant(2, 2.0));
    CHECK(p.moment(0, 1) == doctest::Approx(2.0));
    CHECK(p.moment(0, 2) == doctest::Approx(6.0));
    CHECK(p.moment(0, 3) == doctest::Approx(8 + 12 + 2));
    CHECK(p.moment(0, 4) == doctest::Approx(16 + 48 + 28 + 2));
    CHECK(p.expected_l0() == doctest::Approx(2 * (1 - std::exp(-2.0))));

    CHECK_THROWS_AS(WeightModel::bernoulli(Vector::Constant(2, 1.5), Vector::Ones(2)), InvalidArgument);
    CHECK_THROWS_AS(WeightModel::bernoulli(Vector::Constant(2, 0.5), Vector::Zero(2)), InvalidArgument);
    CHECK_THROWS_AS(WeightModel::poisson(Vector::Zero(2)), InvalidArgument);
}

TEST_CASE("power-law probabilities sum to the expected L0 and stay in [0, 1]")
{
    const Vector p = power_law_probabilities(256, 1.0, 4.0);
    CHECK(p.sum() == doctest::Approx(4.0));
    CHECK(p.maxCoeff() <= 1.0);
    for (Index i = 1; i < p.size(); ++i) {
        CHECK(p[i] <= p[i - 1]);
    }
    const Vector clipped = power_law_probabilities(16, 2.0, 6.0);
    CHECK(clipped.sum() == doctest::Approx(6.0));
    CHECK(clipped[0] == doctest::Approx(1.0));
    CHECK(clipped.maxCoeff() <= 1.0);
}

TEST_CASE("zero probabilities give zero rows")
{
    const auto dict = build_dictionary(8, 8, DictionaryMode::orthonormal, 1);
    const auto w = WeightModel::bernoulli(Vector::Zero(8), Vector::Ones(8));
    const auto batch = sample_batch(dict, w, {}, 50, 2);
    CHECK(batch.data.cwiseAbs().maxCoeff() == 0.0);
    CHECK(mean_l0(*batch.ground_truth) == 0.0);
}

TEST_CASE("orthonormal norm law and ground-truth bookkeeping")
{
    const auto dict = build_dictionary(32, 32, DictionaryMode::orthonormal, 3);
    const auto w = WeightModel::poisson(Vector::Ones(32));
    const auto batch = sample_batch(dict, w, {}, 500, 4);
    REQUIRE(batch.has_ground_truth());
    for (Index r = 0; r < batch.rows(); ++r) {
        CHECK(std::abs(batch.data.row(r).squaredNorm() - weight_norm_sq((*batch.ground_truth)[r])) < 1e-6);
    }
    CHECK(ground_truth_residual(batch, dict) < 1e-5);

    const auto noisy = sample_batch(dict, w, DenseComponentSpec::gaussian(0.1), 100, 4);
    REQUIRE(noisy.dense);
    CHECK(ground_truth_residual(noisy, dict) < 1e-5);
    for (const auto& e : (*noisy.ground_truth)[0]) {
        CHECK(e.value >= 0.0f);
    }
}

TEST_CASE("sampling is deterministic and dense draws do not perturb weights")
{
    const auto dict = build_dictionary(16, 24, DictionaryMode::random_unit, 5);
    const auto w = WeightModel::bernoulli(Vector::Constant(24, 0.2), uniform_scales(24, 0.5, 2.0, 9));
    const auto a = sample_batch(dict, w, {}, 300, 6);
    const auto b = sample_batch(dict, w, {}, 300, 6);
    CHECK(a.data == b.data);
    const auto c = sample_batch(dict, w, DenseComponentSpec::gaussian(0.5), 300, 6);
    CHECK((c.data - *c.dense - a.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("empirical L0 is within 3 standard errors of the expectation")
{
    const auto dict = build_dictionary(64, 64, DictionaryMode::orthonormal, 1);
    const auto w = WeightModel::power_law_bernoulli(1.0, 6.0, Vector::Ones(64));
    const Index n = 20000;
    const auto batch = sample_batch(dict, w, {}, n, 2);
    const double se = std::sqrt(w.l0_variance() / static_cast<double>(n));
    CHECK(std::abs(mean_l0(*batch.ground_truth) - w.expected_l0()) < 3 * se);
}

TEST_CASE("sample_batch rejects mismatched weights")
{
    const auto dict = build_dictionary(8, 8, DictionaryMode::orthonormal, 1);
    const auto w = WeightModel::poisson(Vector::Ones(7));
    CHECK_THROWS_AS(sample_batch(dict, w, {}, 10, 1), DimensionMismatch);
}

TEST_CASE("masked reconstruction")
{
    const auto dict = build_dictionary(16, 16, DictionaryMode::orthonormal, 1);
    const auto w = WeightModel::bernoulli(Vector::LinSpaced(16, 0.5, 0.05), Vector::LinSpaced(16, 1.0, 2.0));
    const auto batch = sample_batch(dict, w, {}, 400, 2);

    SUBCASE("keeping everything without noise leaves zero error")
    {
        const auto m = masked_reconstruction(batch, dict, w, 1.0, 0.0, 3);
        CHECK(m.error.data.cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("masked error norms equal the dropped weights")
    {
        const auto m = masked_reconstruction(batch, dict, w, 0.5, 0.0, 3);
        REQUIRE(m.kept.size() == 8);
        const auto rank = rank_by_expected_activation(w);
        std::vector<char> kept(16, 0);
        for (Index i : m.kept) {
            kept[static_cast<std::size_t>(i)] = 1;
        }
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(kept[static_cast<std::size_t>(rank[i])] == 1);
        }
        for (Index r = 0; r < batch.rows(); ++r) {
            double dropped = 0.0;
            for (const auto& e : (*batch.ground_truth)[r]) {
                if (!kept[e.index]) {
                    dropped += static_cast<double>(e.value) * e.value;
                }
            }
            CHECK(std::abs(m.error.data.row(r).squaredNorm() - dropped) < 1e-6);
        }
        CHECK((m.recon.data + m.error.data - batch.data).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("noise is recorded")
    {
        const auto clean = masked_reconstruction(batch, dict, w, 0.5, 0.0, 3);
        const auto noisy = masked_reconstruction(batch, dict, w, 0.5, 0.3, 3);
        CHECK((noisy.recon.data - clean.recon.data - noisy.noise).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(noisy.noise.squaredNorm() > 0.0);
    }
    SUBCASE("argument checks")
    {
        CHECK_THROWS_AS(masked_reconstruction(batch, dict, w, 0.0, 0.0, 3), InvalidArgument);
        CHECK_THROWS_AS(masked_reconstruction(batch, dict, w, 1.5, 0.0, 3), InvalidArgument);
        auto bare = batch;
        bare.ground_truth.reset();
        CHECK_THROWS_AS(masked_reconstruction(bare, dict, w, 0.5, 0.0, 3), InvalidArgument);
    }
}

TEST_CASE("kept_count is a ceiling")
{
    CHECK(kept_count(256, 1.0 / 32) == 8);
    CHECK(kept_count(10, 0.25) == 3);
    CHECK(kept_count(10, 0.3) == 3);
    CHECK(kept_count(10, 1.0) == 10);
}
