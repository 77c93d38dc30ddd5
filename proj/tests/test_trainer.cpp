#include "doctest.h"

#include <cmath>
#include <limits>

#include "darkmatter/trainer.hpp"

using namespace dm;

namespace {

Matrix gaussian(Index n, Index d, std::uint64_t seed)
{
    auto rng = make_rng(seed, 77);
    std::normal_distribution<double> z;
    Matrix m(n, d);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = z(rng);
    }
    return m;
}

template <typename Param, typename Grad>
void check_block(SaeModel& model, const Matrix& x, Param& param, const Grad& analytic, const char* name)
{
    constexpr double h = 1e-6;
    for (Index i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + h;
        const double up = loss_and_gradients(model, x, nullptr).total();
        param.data()[i] = saved - h;
        const double down = loss_and_gradients(model, x, nullptr).total();
        param.data()[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double a = analytic.data()[i];
        const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
        INFO(name << "[" << i << "] analytic=" << a << " numeric=" << numeric);
        CHECK(std::abs(a - numeric) / scale < 1e-4);
    }
}

SaeModel tiny_model(ActivationRule rule)
{
    auto model = SaeModel::initialize(3, 4, std::move(rule), 5);
    model.w_enc = gaussian(4, 3, 6);
    model.b_enc = gaussian(4, 1, 7).col(0) * 0.3;
    model.b_dec = gaussian(3, 1, 8).col(0) * 0.3;
    return model;
}

} // namespace

TEST_CASE("analytic gradients match central differences on a tiny TopK model")
{
    auto model = tiny_model(TopK{2});
    const Matrix x = gaussian(6, 3, 9);
    SaeGradients g;
    loss_and_gradients(model, x, &g);
    check_block(model, x, model.w_enc, g.w_enc, "w_enc");
    check_block(model, x, model.b_enc, g.b_enc, "b_enc");
    check_block(model, x, model.w_dec, g.w_dec, "w_dec");
    check_block(model, x, model.b_dec, g.b_dec, "b_dec");
}

TEST_CASE("JumpReLU gradients away from the threshold match central differences")
{
    JumpRelu jr;
    jr.theta = Vector::Constant(4, 0.1);
    auto model = tiny_model(jr);
    const Matrix x = gaussian(6, 3, 10);
    SaeGradients g;
    loss_and_gradients(model, x, &g);
    check_block(model, x, model.w_enc, g.w_enc, "w_enc");
    check_block(model, x, model.w_dec, g.w_dec, "w_dec");
    check_block(model, x, model.b_dec, g.b_dec, "b_dec");
}

TEST_CASE("JumpReLU threshold gradient uses the rectangle kernel")
{
    JumpRelu jr;
    jr.theta = Vector::Zero(4);
    jr.lambda = 0.5;
    jr.bandwidth = 10.0; // wide enough that every entry sits inside the window
    auto model = tiny_model(jr);
    const Matrix x = gaussian(5, 3, 11) * 0.01;
    SaeGradients g;
    loss_and_gradients(model, x, &g);
    // theta = 0 zeroes the reconstruction term; what remains is -lambda/(B eps) per in-window entry.
    CHECK(g.theta.maxCoeff() <= 0.0);
    CHECK(g.theta[0] == doctest::Approx(-0.5 / (5 * 10.0) * 5));
}

TEST_CASE("zero steps return the initialization")
{
    const Matrix data = gaussian(64, 8, 1);
    MatrixStream stream(data, 2);
    TrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 3;
    const auto result = train(cfg, stream, TopK{2}, 16);
    const auto init = SaeModel::initialize(8, 16, TopK{2}, 3);
    CHECK(result.model.w_enc == init.w_enc);
    CHECK(result.model.w_dec == init.w_dec);
    CHECK(result.model.b_dec == init.b_dec);
}

TEST_CASE("training lowers the smoothed loss, keeps unit decoder rows and is deterministic")
{
    const auto dict = build_dictionary(16, 16, DictionaryMode::orthonormal, 1);
    const auto w = WeightModel::bernoulli(Vector::Constant(16, 2.0 / 16), Vector::Ones(16));
    TrainConfig cfg;
    cfg.steps = 600;
    cfg.batch_size = 64;
    cfg.seed = 4;
    cfg.resample_interval = 100;
    GeneratorStream s1(dict, w, {}, 5);
    GeneratorStream s2(dict, w, {}, 5);
    const auto a = train(cfg, s1, TopK{2}, 16);
    const auto b = train(cfg, s2, TopK{2}, 16);
    CHECK(a.final_ema <= a.initial_ema);
    CHECK((a.model.w_dec.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(a.model.w_dec == b.model.w_dec);
    CHECK(a.model.w_enc == b.model.w_enc);
    CHECK(a.final_ema == b.final_ema);
}

TEST_CASE("non-finite loss aborts")
{
    Matrix data = gaussian(32, 4, 1);
    data(3, 2) = std::numeric_limits<double>::quiet_NaN();
    MatrixStream stream(data, 1);
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch_size = 32;
    CHECK_THROWS_AS(train(cfg, stream, TopK{2}, 8), NumericalError);
}

TEST_CASE("config validation")
{
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.bandwidth = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.beta2 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("MatrixStream visits every row once per epoch")
{
    Matrix data(10, 1);
    for (Index i = 0; i < 10; ++i) {
        data(i, 0) = static_cast<double>(i);
    }
    MatrixStream stream(data, 3);
    const Matrix epoch = stream.next(10);
    std::vector<int> seen(10, 0);
    for (Index i = 0; i < 10; ++i) {
        seen[static_cast<std::size_t>(epoch(i, 0))] += 1;
    }
    for (int s : seen) {
        CHECK(s == 1);
    }
}

TEST_CASE("JumpReLU with lambda 0 and theta 0 reconstructs better than a very sparse TopK")
{
    const auto dict = build_dictionary(32, 64, DictionaryMode::random_unit, 2);
    const auto w = WeightModel::bernoulli(Vector::Constant(64, 8.0 / 64), log_uniform_scales(64, 0.2, 1.0, 3));
    const Matrix eval = sample_batch(dict, w, {}, 2000, 9).data;
    TrainConfig cfg;
    cfg.steps = 1500;
    cfg.batch_size = 128;
    cfg.seed = 6;
    GeneratorStream s1(dict, w, {}, 7);
    GeneratorStream s2(dict, w, {}, 7);
    JumpRelu jr;
    jr.theta = Vector::Zero(64);
    const auto dense = train(cfg, s1, jr, 64);
    const auto sparse = train(cfg, s2, TopK{2}, 64);
    const double fvu_dense = reconstruction_fvu(dense.model, eval);
    const double fvu_sparse = reconstruction_fvu(sparse.model, eval);
    INFO("jumprelu fvu " << fvu_dense << " topk fvu " << fvu_sparse);
    CHECK(fvu_dense < fvu_sparse);
}
