#include "darkmatter/cli/verbs.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "darkmatter/cli/report.hpp"
#include "darkmatter/dmat.hpp"
#include "darkmatter/oracle.hpp"
#include "darkmatter/pipelines.hpp"
#include "darkmatter/pursuit.hpp"
#include "darkmatter/sae.hpp"
#include "darkmatter/trainer.hpp"

namespace dm::cli {

namespace {

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json nums(const std::vector<double>& v)
{
    Json out = Json::array();
    for (double x : v) {
        out.push_back(num(x));
    }
    return out;
}

Json summary(const Vector& v)
{
    if (v.size() == 0) {
        return nullptr;
    }
    return {{"min", num(v.minCoeff())}, {"max", num(v.maxCoeff())}, {"mean", num(v.mean())}};
}

// ---------------------------------------------------------------- data

Vector vector_param(ConfigReader& r, const std::string& key, Index m, std::uint64_t seed,
                    std::optional<double> fallback)
{
    if (!r.has(key)) {
        return Vector::Constant(m, r.number(key, fallback));
    }
    const Json& v = r.raw(key);
    if (v.is_number()) {
        return Vector::Constant(m, r.number(key));
    }
    if (!v.is_object() || v.size() != 1) {
        throw SchemaError("config: '" + r.path() + "." + key
                          + "' must be a number or one of {uniform|log_uniform|power: [a, b]}");
    }
    const auto& [kind, args] = *v.items().begin();
    if (!args.is_array() || args.size() != 2 || !args[0].is_number() || !args[1].is_number()) {
        throw SchemaError("config: '" + r.path() + "." + key + "." + kind + "' must be a pair of numbers");
    }
    const double a = args[0].get<double>();
    const double b = args[1].get<double>();
    r.set(key, v);
    if (kind == "uniform") {
        return uniform_scales(m, a, b, seed);
    }
    if (kind == "log_uniform") {
        return log_uniform_scales(m, a, b, seed);
    }
    if (kind == "power") {
        return power_scales(m, a, b);
    }
    throw SchemaError("config: unknown generator '" + kind + "' in '" + r.path() + "." + key + "'");
}

WeightModel read_weight_model(ConfigReader& r, Index m, std::uint64_t seed)
{
    const auto kind = parse_weight_kind(r.string("kind"));
    switch (kind) {
    case WeightKind::bernoulli: {
        Vector p = vector_param(r, "probability", m, mix_seed(seed, stream::scales, 1), std::nullopt);
        Vector s = vector_param(r, "scale", m, mix_seed(seed, stream::scales, 2), 1.0);
        return WeightModel::bernoulli(std::move(p), std::move(s));
    }
    case WeightKind::poisson:
        return WeightModel::poisson(vector_param(r, "rate", m, mix_seed(seed, stream::scales, 3), std::nullopt));
    case WeightKind::power_law_bernoulli: {
        const double exponent = r.number("exponent");
        const double l0 = r.number("expected_l0");
        Vector s = vector_param(r, "scale", m, mix_seed(seed, stream::scales, 2), 1.0);
        return WeightModel::power_law_bernoulli(exponent, l0, std::move(s));
    }
    }
    throw SchemaError("config: unsupported weight kind");
}

struct SyntheticSpec {
    FeatureDictionary dict;
    WeightModel weights;
    double dense_sigma = 0.0;
    Index samples = 0;
};

struct FileSpec {
    std::string path;
    ActivationFormat format = ActivationFormat::dmat;
    Index rows = 0;
    Index dim = 0;
};

struct DataSpec {
    std::optional<SyntheticSpec> synthetic;
    std::optional<FileSpec> file;
};

FileSpec read_file_spec(ConfigReader& r)
{
    FileSpec f;
    f.path = r.string("path");
    f.format = parse_activation_format(r.string("format", "dmat"));
    if (f.format == ActivationFormat::raw) {
        f.rows = r.integer("rows");
        f.dim = r.integer("dim");
    }
    return f;
}

struct DataOptions {
    bool allow_file = true;
    bool allow_dense = true;
    Index default_samples = 4000;
};

DataSpec read_data(ConfigReader& root, std::uint64_t seed, const DataOptions& opts)
{
    auto r = root.child("data");
    DataSpec spec;
    if (r.has("input")) {
        if (!opts.allow_file) {
            throw SchemaError("config: this experiment needs synthetic data; 'data.input' is not allowed");
        }
        auto in = r.child("input");
        spec.file = read_file_spec(in);
        r.adopt("input", in);
    } else {
        SyntheticSpec s;
        const Index d = r.integer("dim");
        const Index m = r.integer("features", d);
        const auto mode = parse_dictionary_mode(r.string("dictionary", "orthonormal"));
        s.dict = build_dictionary(d, m, mode, mix_seed(seed, stream::dictionary));
        auto w = r.child("weights");
        s.weights = read_weight_model(w, m, seed);
        r.adopt("weights", w);
        s.dense_sigma = opts.allow_dense ? r.number("dense_sigma", 0.0) : 0.0;
        s.samples = r.integer("samples", opts.default_samples);
        if (s.samples < 2) {
            throw SchemaError("config: 'data.samples' must be at least 2");
        }
        spec.synthetic = std::move(s);
    }
    root.adopt("data", r);
    return spec;
}

DenseComponentSpec dense_of(const SyntheticSpec& s)
{
    return s.dense_sigma > 0.0 ? DenseComponentSpec::gaussian(s.dense_sigma) : DenseComponentSpec{};
}

ActivationBatch load_data(const DataSpec& spec, std::uint64_t seed, std::uint64_t salt = 0)
{
    if (spec.file) {
        const auto& f = *spec.file;
        return import_activations(f.path, f.format, static_cast<std::uint64_t>(f.rows),
                                  static_cast<std::uint64_t>(f.dim));
    }
    const auto& s = *spec.synthetic;
    return sample_batch(s.dict, s.weights, dense_of(s), s.samples, mix_seed(seed, stream::experiment, salt));
}

SplitSpec read_split(ConfigReader& root, std::uint64_t seed)
{
    auto r = root.optional_child("split");
    SplitSpec s;
    s.train_fraction = r.number("train_fraction", 0.6);
    s.seed = r.seed("seed", mix_seed(seed, stream::split));
    s.validate();
    root.adopt("split", r);
    return s;
}

// ---------------------------------------------------------------- SAEs

TrainConfig read_train(ConfigReader& r, std::uint64_t default_seed)
{
    TrainConfig t;
    t.steps = r.integer("steps", t.steps);
    t.batch_size = r.integer("batch_size", t.batch_size);
    t.learning_rate = r.number("learning_rate", t.learning_rate);
    t.beta1 = r.number("beta1", t.beta1);
    t.beta2 = r.number("beta2", t.beta2);
    t.adam_eps = r.number("adam_eps", t.adam_eps);
    t.seed = r.seed("seed", default_seed);
    t.resample_interval = r.integer("resample_interval", t.resample_interval);
    t.bandwidth = r.number("bandwidth", t.bandwidth);
    t.grad_clip = r.number("grad_clip", t.grad_clip);
    t.ema_decay = r.number("ema_decay", t.ema_decay);
    try {
        t.validate();
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    return t;
}

struct TrainedSpec {
    Index latents = 0;
    ActivationRule rule;
    TrainConfig train;
};

TrainedSpec read_trained(ConfigReader& r, std::uint64_t seed, std::uint64_t salt)
{
    TrainedSpec s;
    s.latents = r.integer("latents");
    const auto rule = r.string("rule", "topk");
    if (rule == "topk") {
        s.rule = TopK{r.integer("k")};
    } else if (rule == "jumprelu") {
        JumpRelu jr;
        jr.theta = Vector::Constant(1, r.number("theta", 0.0));
        jr.lambda = r.number("lambda", 0.0);
        s.rule = jr;
    } else {
        throw SchemaError("config: '" + r.path() + ".rule' must be topk or jumprelu");
    }
    auto t = r.optional_child("train");
    s.train = read_train(t, mix_seed(seed, stream::sae_init, salt));
    r.adopt("train", t);
    return s;
}

struct SaeSpec {
    enum class Kind { checkpoint, masked, trained } kind = Kind::trained;
    std::string checkpoint;
    double keep_fraction = 1.0;
    double recon_sigma = 0.0;
    TrainedSpec trained;
};

SaeSpec read_sae(ConfigReader& root, const std::string& key, std::uint64_t seed, std::uint64_t salt)
{
    auto r = root.child(key);
    SaeSpec s;
    if (r.has("checkpoint")) {
        s.kind = SaeSpec::Kind::checkpoint;
        s.checkpoint = r.string("checkpoint");
    } else if (r.has("masked")) {
        s.kind = SaeSpec::Kind::masked;
        auto m = r.child("masked");
        s.keep_fraction = m.number("keep_fraction");
        s.recon_sigma = m.number("recon_sigma", 0.0);
        r.adopt("masked", m);
    } else {
        s.kind = SaeSpec::Kind::trained;
        s.trained = read_trained(r, seed, salt);
    }
    root.adopt(key, r);
    return s;
}

struct SaeRun {
    std::optional<SaeModel> model;
    Matrix errors;
    Json info = Json::object();
};

TrainResult run_training(const TrainedSpec& spec, const DataSpec& data, const Matrix& batch, std::uint64_t seed,
                         std::uint64_t salt)
{
    if (data.synthetic) {
        const auto& s = *data.synthetic;
        GeneratorStream stream(s.dict, s.weights, dense_of(s), mix_seed(seed, stream::batches, salt));
        return train(spec.train, stream, spec.rule, spec.latents);
    }
    MatrixStream stream(batch, mix_seed(seed, stream::batches, salt));
    return train(spec.train, stream, spec.rule, spec.latents);
}

SaeRun run_sae(const SaeSpec& spec, const DataSpec& data, const ActivationBatch& batch, std::uint64_t seed,
               std::uint64_t salt)
{
    SaeRun run;
    switch (spec.kind) {
    case SaeSpec::Kind::checkpoint:
        run.model = load_checkpoint(spec.checkpoint);
        run.info["source"] = "checkpoint";
        break;
    case SaeSpec::Kind::masked: {
        if (!data.synthetic) {
            throw SchemaError("config: masked SAEs need synthetic data");
        }
        const auto masked = masked_reconstruction(batch, data.synthetic->dict, data.synthetic->weights,
                                                  spec.keep_fraction, spec.recon_sigma,
                                                  mix_seed(seed, stream::recon_noise, salt));
        run.errors = masked.error.data;
        run.info["source"] = "masked";
        run.info["kept"] = masked.kept.size();
        return run;
    }
    case SaeSpec::Kind::trained: {
        const auto result = run_training(spec.trained, data, batch.data, seed, salt);
        run.model = result.model;
        run.info["source"] = "trained";
        run.info["initial_ema_loss"] = num(result.initial_ema);
        run.info["final_ema_loss"] = num(result.final_ema);
        run.info["resampled"] = result.resampled;
        break;
    }
    }
    run.errors = sae_error(*run.model, batch.data);
    run.info["l0"] = num(measure_l0(*run.model, batch.data));
    run.info["latents"] = run.model->latents();
    return run;
}

PursuitConfig read_pursuit(ConfigReader& root)
{
    auto r = root.optional_child("pursuit");
    PursuitConfig p;
    if (r.has("budget")) {
        p.budget = r.integer("budget");
    } else {
        r.set("budget", "encoder-l0");
    }
    p.refine_iterations = r.integer("refine_iterations", p.refine_iterations);
    p.tolerance = r.number("tolerance", p.tolerance);
    p.nonnegative = r.boolean("nonnegative", p.nonnegative);
    try {
        p.validate();
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    root.adopt("pursuit", r);
    return p;
}

Json decomposition_json(const ErrorDecomposition& d)
{
    return {{"fvu_sae", num(d.fvu_sae)},
            {"fvu_nonlinear", num(d.fvu_nonlinear)},
            {"fvu_sae_train", num(d.fvu_sae_train)},
            {"fvu_nonlinear_train", num(d.fvu_nonlinear_train)},
            {"norm_probe_test_r2", num(d.norm_probe.test_r2)},
            {"norm_probe_train_r2", num(d.norm_probe.train_r2)},
            {"vector_probe_mean_r2", num(d.vector_probe.mean_r2)},
            {"vector_probe_pooled_r2", num(1.0 - d.vector_probe.total_fvu)},
            {"mean_norms",
             {{"x", num(d.mean_norms.x)},
              {"sae", num(d.mean_norms.sae)},
              {"sae_error", num(d.mean_norms.sae_error)},
              {"linear_error", num(d.mean_norms.linear_error)},
              {"nonlinear_error", num(d.mean_norms.nonlinear_error)}}}};
}

Json data_json(const ActivationBatch& batch)
{
    return {{"rows", batch.rows()}, {"dim", batch.dim()}, {"has_ground_truth", batch.has_ground_truth()}};
}

// ---------------------------------------------------------------- verbs

using Execute = std::function<Json(ReportWriter&)>;
using Prepare = std::function<Execute(ConfigReader&, std::uint64_t)>;

Execute prepare_oracle(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {.allow_file = false, .allow_dense = false});
    const Index mc = root.integer("monte_carlo_samples", 200000);
    const Index learned = root.integer("learned_samples", 200000);
    const auto split = read_split(root, seed);
    if (mc < 3) {
        throw SchemaError("config: 'monte_carlo_samples' must be at least 3");
    }
    return [=](ReportWriter&) {
        const auto& s = *data.synthetic;
        const bool perpendicular = s.dict.mode == DictionaryMode::orthonormal && s.dict.size() <= s.dict.dim();
        const auto norm_mc = monte_carlo_norm_sq(s.dict, s.weights, mc, mix_seed(seed, stream::experiment, 1));
        const auto rho_mc = monte_carlo_norm_correlation(s.dict, s.weights, mc, mix_seed(seed, stream::experiment, 2));
        Json res{{"dictionary", {{"mode", to_string(s.dict.mode)}, {"coherence", num(s.dict.coherence)}}},
                 {"weights", {{"kind", to_string(s.weights.kind)}, {"expected_l0", num(s.weights.expected_l0())}}},
                 {"expected_norm_sq",
                  {{"analytic", num(expected_norm_sq(s.dict, s.weights))},
                   {"monte_carlo", num(norm_mc.value)},
                   {"monte_carlo_se", num(norm_mc.std_error)}}},
                 {"probe_coeffs", summary(analytic_probe_coefficients(s.weights))},
                 {"analytic_probe_norm", num(analytic_norm_probe(s.dict, s.weights).norm())}};
        Json rho{{"monte_carlo", num(rho_mc.value)}, {"monte_carlo_se", num(rho_mc.std_error)}};
        rho["analytic"] = perpendicular ? num(analytic_norm_correlation(s.weights)) : Json(nullptr);
        if (learned > 0) {
            const auto l = learned_norm_correlation(s.dict, s.weights, learned, mix_seed(seed, stream::experiment, 3),
                                                    split);
            rho["learned"] = num(l.correlation);
            rho["learned_test_r2"] = num(l.probe.test_r2);
            rho["learned_cosine_to_analytic"] = num(l.cosine_to_analytic);
        }
        res["rho"] = rho;
        return res;
    };
}

Execute prepare_generate(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {.allow_file = false});
    return [=](ReportWriter& w) {
        const auto batch = load_data(data, seed);
        const auto& s = *data.synthetic;
        export_activations(w.artifact_path("dmat"), batch);
        w.add_artifact("dmat");
        w.add_artifact("dmat.weights");
        Json res = data_json(batch);
        res["mean_l0"] = num(mean_l0(*batch.ground_truth));
        res["expected_l0"] = num(s.weights.expected_l0());
        res["coherence"] = num(s.dict.coherence);
        res["ground_truth_residual"] = num(ground_truth_residual(batch, s.dict));
        res["mean_norm_sq"] = num(batch.data.rowwise().squaredNorm().mean());
        return res;
    };
}

Execute prepare_train(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {});
    auto r = root.child("sae");
    const auto spec = read_trained(r, seed, 0);
    root.adopt("sae", r);
    return [=](ReportWriter& w) {
        const auto batch = load_data(data, seed);
        const auto result = run_training(spec, data, batch.data, seed, 0);
        save_checkpoint(w.artifact_path("dsae"), result.model);
        w.add_artifact("dsae");
        std::vector<std::vector<double>> rows;
        for (const auto& [step, ema] : result.ema_history) {
            rows.push_back({static_cast<double>(step), ema});
        }
        write_csv(w.artifact_path("loss.csv"), {"step", "ema_loss"}, rows);
        w.add_artifact("loss.csv");
        Json res{{"data", data_json(batch)},
                 {"fvu", num(reconstruction_fvu(result.model, batch.data))},
                 {"l0", num(measure_l0(result.model, batch.data))},
                 {"initial_ema_loss", num(result.initial_ema)},
                 {"final_ema_loss", num(result.final_ema)},
                 {"resampled", result.resampled}};
        if (data.synthetic && data.synthetic->dict.dim() == result.model.dim()) {
            res["dictionary_recovery"] = num(dictionary_recovery(data.synthetic->dict.vectors, result.model.w_dec));
        }
        return res;
    };
}

Execute prepare_decompose(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {});
    const auto sae = read_sae(root, "sae", seed, 0);
    const auto split = read_split(root, seed);
    std::optional<TrainedSpec> retrain;
    if (root.has("retrain")) {
        auto r = root.child("retrain");
        retrain = read_trained(r, seed, 7);
        root.adopt("retrain", r);
    }
    return [=](ReportWriter&) {
        const auto batch = load_data(data, seed);
        const auto run = run_sae(sae, data, batch, seed, 0);
        const Matrix& x = batch.data;
        const auto decomp = predict_error_vector(x, run.errors, split);
        const auto norm_probe = predict_error_norm(x, run.errors, split);
        Json res{{"data", data_json(batch)}, {"sae", run.info}, {"decomposition", decomposition_json(decomp)}};
        res["error_norm_probe"] = to_json(norm_probe);

        Json norm_test = Json::object();
        for (const auto& c : norm_prediction_test(decomp, x, split)) {
            norm_test[c.name] = {{"test_r2", num(c.test_r2)}, {"train_r2", num(c.train_r2)}};
        }
        res["norm_test"] = norm_test;

        const auto shrink = shrinkage_diagnostic(decomp, x);
        res["shrinkage"] = {{"mean_cosine", num(shrink.mean_cosine)},
                            {"mean_norm_ratio", num(shrink.mean_norm_ratio)},
                            {"excluded_rows", shrink.excluded}};

        const Matrix sae_out = x - run.errors;
        Json aux = Json::array();
        for (const auto& a : regress_error_from_aux({{"sae", &sae_out}},
                                                    {{"sae_error", &decomp.sae_error.data},
                                                     {"linear_error", &decomp.linear_error.data},
                                                     {"nonlinear_error", &decomp.nonlinear_error.data}},
                                                    split)) {
            aux.push_back({{"source", a.source},
                           {"target", a.target},
                           {"mean_r2", num(a.mean_r2)},
                           {"pooled_r2", num(a.pooled_r2)}});
        }
        res["aux_regression"] = aux;

        if (retrain) {
            const auto cmp = component_retrain_comparison(decomp, retrain->train, retrain->rule, retrain->latents);
            res["retrain"] = {{"fvu_linear_error", num(cmp.fvu_linear)},
                              {"fvu_nonlinear_error", num(cmp.fvu_nonlinear)}};
        }
        return res;
    };
}

SyntheticSetup setup_of(const DataSpec& data, const SplitSpec& split, std::uint64_t seed)
{
    const auto& s = *data.synthetic;
    return {s.dict, s.weights, s.samples, split, mix_seed(seed, stream::experiment, 0)};
}

Execute prepare_noise_grid(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {.allow_file = false, .allow_dense = false});
    auto g = root.child("grid");
    const auto xs = g.numbers("x_noise_sigmas");
    const auto rs = g.numbers("recon_noise_sigmas");
    const auto fractions = g.numbers("keep_fractions");
    root.adopt("grid", g);
    const auto split = read_split(root, seed);
    return [=](ReportWriter& w) {
        const auto grid = noise_injection_correlation(setup_of(data, split, seed), xs, rs, fractions);
        Json cells = Json::array();
        std::vector<std::vector<double>> rows;
        for (const auto& c : grid.cells) {
            std::vector<double> fs, fn;
            for (const auto& p : c.sweep.points) {
                fs.push_back(p.fvu_sae);
                fn.push_back(p.fvu_nonlinear);
            }
            cells.push_back({{"x_noise_sigma", c.x_noise_sigma},
                             {"recon_noise_sigma", c.recon_noise_sigma},
                             {"fvu_sae", nums(fs)},
                             {"fvu_nonlinear", nums(fn)},
                             {"fit", {{"alpha", num(c.fit.alpha)}, {"beta", num(c.fit.beta)}, {"c", num(c.fit.c)}}},
                             {"dense_estimate", num(c.dense_estimate)},
                             {"introduced_estimate", num(c.introduced_estimate)},
                             {"flatness_std", num(c.sweep.flatness_std)}});
            rows.push_back({c.x_noise_sigma, c.recon_noise_sigma, c.fit.c, c.dense_estimate, c.introduced_estimate,
                            c.sweep.flatness_std});
        }
        write_csv(w.artifact_path("cells.csv"),
                  {"x_noise_sigma", "recon_noise_sigma", "asymptote", "dense_estimate", "introduced_estimate",
                   "flatness_std"},
                  rows);
        w.add_artifact("cells.csv");
        const auto& m = grid.correlation;
        return Json{{"cells", cells},
                    {"correlation",
                     {{"x_noise_vs_dense", num(m(0, 0))},
                      {"x_noise_vs_introduced", num(m(0, 1))},
                      {"recon_noise_vs_dense", num(m(1, 0))},
                      {"recon_noise_vs_introduced", num(m(1, 1))}}}};
    };
}

Execute prepare_mask_sweep(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {.allow_file = false, .allow_dense = false});
    auto s = root.child("sweep");
    const double x_sigma = s.number("x_noise_sigma", 0.0);
    const double r_sigma = s.number("recon_noise_sigma", 0.0);
    const auto fractions = s.numbers("keep_fractions");
    root.adopt("sweep", s);
    const auto split = read_split(root, seed);
    return [=](ReportWriter& w) {
        const auto sweep = masking_sweep(setup_of(data, split, seed), x_sigma, r_sigma, fractions);
        Json points = Json::array();
        std::vector<std::vector<double>> rows;
        for (const auto& p : sweep.points) {
            points.push_back({{"keep_fraction", p.keep_fraction},
                              {"kept", p.kept},
                              {"fvu_sae", num(p.fvu_sae)},
                              {"fvu_nonlinear", num(p.fvu_nonlinear)},
                              {"fvu_sae_train", num(p.fvu_sae_train)},
                              {"fvu_nonlinear_train", num(p.fvu_nonlinear_train)}});
            rows.push_back({p.keep_fraction, static_cast<double>(p.kept), p.fvu_sae, p.fvu_nonlinear});
        }
        write_csv(w.artifact_path("curve.csv"), {"keep_fraction", "kept", "fvu_sae", "fvu_nonlinear"}, rows);
        w.add_artifact("curve.csv");
        return Json{{"points", points}, {"flatness_std", num(sweep.flatness_std)}};
    };
}

Execute prepare_scaling(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {.allow_file = false});
    const auto widths = root.numbers("widths");
    auto r = root.child("sae");
    const Index k = r.integer("k");
    auto t = r.optional_child("train");
    const auto train_cfg = read_train(t, mix_seed(seed, stream::sae_init));
    r.adopt("train", t);
    root.adopt("sae", r);
    const bool ito = root.boolean("ito", true);
    const auto pursuit = read_pursuit(root);
    const auto split = read_split(root, seed);
    for (double wdt : widths) {
        if (!(wdt >= 1.0) || wdt != std::floor(wdt)) {
            throw SchemaError("config: 'widths' must be positive integers");
        }
    }
    return [=](ReportWriter& w) {
        const auto batch = load_data(data, seed);
        std::vector<double> fs, fn, fi;
        Json per_width = Json::array();
        for (std::size_t i = 0; i < widths.size(); ++i) {
            TrainedSpec spec{static_cast<Index>(widths[i]), TopK{k}, train_cfg};
            const auto result = run_training(spec, data, batch.data, seed, i + 1);
            const Matrix err = sae_error(result.model, batch.data);
            const OlsSolver solver(batch.data, make_split(batch.rows(), split), split);
            const auto decomp = predict_error_vector(solver, batch.data, err);
            fs.push_back(decomp.fvu_sae);
            fn.push_back(decomp.fvu_nonlinear);
            Json entry{{"width", widths[i]}, {"decomposition", decomposition_json(decomp)}};
            if (ito) {
                const auto rec = ito_reconstruct(result.model, batch.data, pursuit);
                const auto d_ito = predict_error_vector(solver, batch.data, batch.data - rec.recon);
                fi.push_back(d_ito.fvu_nonlinear);
                entry["ito"] = {{"fvu_sae", num(d_ito.fvu_sae)},
                                {"fvu_nonlinear", num(d_ito.fvu_nonlinear)},
                                {"mean_l0", num(rec.mean_l0)}};
            }
            per_width.push_back(entry);
        }
        const auto bd = breakdown_curve(widths, fs, fn, ito ? std::optional(fi) : std::nullopt);
        Json bands = Json::array();
        std::vector<std::vector<double>> rows;
        for (const auto& row : bd.rows) {
            bands.push_back({{"width", row.width},
                             {"absent_features", num(row.absent_features)},
                             {"linear_error", num(row.linear_error)},
                             {"nonlinear", num(row.nonlinear)},
                             {"encoder", num(row.encoder)},
                             {"clipped", num(row.clipped)}});
            rows.push_back({row.width, row.fvu_sae, row.fvu_nonlinear, row.fvu_nonlinear_ito.value_or(NAN),
                            row.absent_features, row.linear_error, row.nonlinear, row.encoder});
        }
        write_csv(w.artifact_path("curve.csv"),
                  {"width", "fvu_sae", "fvu_nonlinear", "fvu_nonlinear_ito", "absent_features", "linear_error",
                   "nonlinear", "encoder"},
                  rows);
        w.add_artifact("curve.csv");
        return Json{{"widths", per_width},
                    {"fit", {{"alpha", num(bd.fit.alpha)}, {"beta", num(bd.fit.beta)}, {"c", num(bd.fit.c)}}},
                    {"nonlinear_level", num(bd.nonlinear_level)},
                    {"linear_band_clipped", bd.linear_band_clipped},
                    {"bands", bands}};
    };
}

Execute prepare_pursuit(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {});
    const auto sae = read_sae(root, "sae", seed, 0);
    if (sae.kind == SaeSpec::Kind::masked) {
        throw SchemaError("config: pursuit needs a checkpoint or trained SAE");
    }
    const auto pursuit = read_pursuit(root);
    const auto split = read_split(root, seed);
    return [=](ReportWriter&) {
        const auto batch = load_data(data, seed);
        const auto run = run_sae(sae, data, batch, seed, 0);
        const auto rec = ito_reconstruct(*run.model, batch.data, pursuit);
        const Matrix ito_err = batch.data - rec.recon;
        const OlsSolver solver(batch.data, make_split(batch.rows(), split), split);
        const auto enc = predict_error_vector(solver, batch.data, run.errors);
        const auto itd = predict_error_vector(solver, batch.data, ito_err);
        const double fvu_enc = fvu_pooled(batch.data - run.errors, batch.data);
        const double fvu_ito = fvu_pooled(rec.recon, batch.data);
        return Json{{"data", data_json(batch)},
                    {"sae", run.info},
                    {"fvu_encoder", num(fvu_enc)},
                    {"fvu_ito", num(fvu_ito)},
                    {"percent_fvu_decrease", num(fvu_enc > 0.0 ? 100.0 * (fvu_enc - fvu_ito) / fvu_enc : 0.0)},
                    {"ito_mean_l0", num(rec.mean_l0)},
                    {"ito_max_l0", rec.max_l0},
                    {"fvu_nonlinear_encoder", num(enc.fvu_nonlinear)},
                    {"fvu_nonlinear_ito", num(itd.fvu_nonlinear)}};
    };
}

Execute prepare_per_token(ConfigReader& root, std::uint64_t seed)
{
    const auto data = read_data(root, seed, {});
    const auto small = read_sae(root, "sae_small", seed, 1);
    const auto large = read_sae(root, "sae_large", seed, 2);
    const bool intercept = root.boolean("intercept", true);
    const auto split = read_split(root, seed);
    return [=](ReportWriter&) {
        const auto batch = load_data(data, seed);
        const auto run_s = run_sae(small, data, batch, seed, 1);
        const auto run_l = run_sae(large, data, batch, seed, 2);
        const auto decomp = predict_error_vector(batch.data, run_s.errors, split);
        const auto cmp = per_token_scaling_probe_with_nonlinear(run_s.errors, decomp.nonlinear_error.data,
                                                                run_l.errors, split, intercept);
        return Json{{"data", data_json(batch)},
                    {"sae_small", run_s.info},
                    {"sae_large", run_l.info},
                    {"c_star", to_json(cmp.c_star)},
                    {"d_star", to_json(cmp.d_star)},
                    {"percent_fvu_decrease", num(cmp.percent_fvu_decrease)}};
    };
}

Execute prepare_import(ConfigReader& root, std::uint64_t)
{
    auto in = root.child("input");
    const auto file = read_file_spec(in);
    root.adopt("input", in);
    const bool reexport = root.boolean("export", false);
    return [=](ReportWriter& w) {
        const auto batch = import_activations(file.path, file.format, static_cast<std::uint64_t>(file.rows),
                                              static_cast<std::uint64_t>(file.dim));
        if (reexport) {
            export_activations(w.artifact_path("dmat"), batch);
            w.add_artifact("dmat");
            if (batch.ground_truth) {
                w.add_artifact("dmat.weights");
            }
        }
        Json res = data_json(batch);
        res["provenance"] = "loaded";
        res["mean_norm_sq"] = num(batch.data.rowwise().squaredNorm().mean());
        if (batch.ground_truth) {
            res["mean_l0"] = num(mean_l0(*batch.ground_truth));
        }
        return res;
    };
}

struct VerbEntry {
    VerbInfo info;
    Prepare prepare;
};

const std::vector<VerbEntry>& registry()
{
    static const std::vector<VerbEntry> entries{
        {{"oracle-check",
          "closed-form norm statistics against Monte Carlo and a learned probe",
          {"expected_norm_sq", "analytic_norm_probe", "analytic_norm_correlation", "monte_carlo_norm_correlation",
           "fit_probe"}},
         prepare_oracle},
        {{"generate", "sample a synthetic activation batch to DMAT1", {"sample_batch", "export_activations"}},
         prepare_generate},
        {{"train", "train a TopK or JumpReLU SAE and save a DSAE1 checkpoint", {"train", "save_checkpoint"}},
         prepare_train},
        {{"decompose",
          "split SAE error into linear and nonlinear parts and run the diagnostics",
          {"predict_error_norm", "predict_error_vector", "norm_prediction_test", "shrinkage_diagnostic",
           "regress_error_from_aux", "component_retrain_comparison"}},
         prepare_decompose},
        {{"noise-grid", "noise injection correlations over a sigma grid", {"noise_injection_correlation"}},
         prepare_noise_grid},
        {{"mask-sweep", "FVU curves over dictionary keep fractions", {"masking_sweep"}}, prepare_mask_sweep},
        {{"scaling",
          "train SAEs over widths and break the FVU curve into bands",
          {"breakdown_curve", "ito_reconstruct", "fit_power_law_with_constant"}},
         prepare_scaling},
        {{"pursuit", "inference-time gradient pursuit against the encoder", {"gradient_pursuit", "ito_reconstruct"}},
         prepare_pursuit},
        {{"per-token",
          "predict one SAE's per-token error norm from another's",
          {"per_token_scaling_probe", "per_token_scaling_probe_with_nonlinear"}},
         prepare_per_token},
        {{"import", "load DMAT1 or raw f32 activations", {"import_activations"}}, prepare_import},
    };
    return entries;
}

} // namespace

const std::vector<VerbInfo>& verbs()
{
    static const std::vector<VerbInfo> list = [] {
        std::vector<VerbInfo> out;
        for (const auto& e : registry()) {
            out.push_back(e.info);
        }
        return out;
    }();
    return list;
}

int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::schema:
    case ErrorKind::invalid_argument:
        return 2;
    case ErrorKind::io:
        return 3;
    case ErrorKind::numerical:
    case ErrorKind::degenerate_fit:
    case ErrorKind::dimension_mismatch:
        return 4;
    }
    return 1;
}

std::filesystem::path run_verb(const std::string& verb, const RunOptions& options)
{
    const auto& reg = registry();
    const auto it = std::find_if(reg.begin(), reg.end(), [&](const VerbEntry& e) { return e.info.name == verb; });
    if (it == reg.end()) {
        throw SchemaError("unknown experiment '" + verb + "'");
    }
    Json cfg = load_config(options.config);
    std::filesystem::path out_dir = options.out_dir;
    if (cfg.contains("output")) {
        if (!cfg["output"].is_string()) {
            throw SchemaError("config: 'output' must be a string");
        }
        if (out_dir.empty() || out_dir == ".") {
            out_dir = cfg["output"].get<std::string>();
        }
        cfg.erase("output");
    }
    ConfigReader root(cfg, "");
    if (root.has("experiment")) {
        const auto named = root.string("experiment");
        if (named != verb) {
            throw SchemaError("config: experiment '" + named + "' does not match verb '" + verb + "'");
        }
    }
    root.set("experiment", verb);
    std::uint64_t seed = 0;
    if (options.seed) {
        seed = *options.seed;
        root.set("seed", seed);
    } else {
        seed = root.seed("seed", 0);
    }
    Execute execute = it->prepare(root, seed);
    root.finish();
    ReportWriter writer(out_dir, verb, root.resolved());
    const Json results = execute(writer);
    writer.write(results, seed);
    return writer.report_path();
}

} // namespace dm::cli
