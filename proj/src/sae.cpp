#include "darkmatter/sae.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <numeric>

namespace dm {

namespace {

constexpr Index kBlockRows = 512;

Index block_count(Index n) { return (n + kBlockRows - 1) / kBlockRows; }

void check_input(const SaeModel& model, const Matrix& x)
{
    require_dims(x.cols(), model.dim(), "SAE input dimension");
}

} // namespace

void SaeModel::validate() const
{
    const Index m = w_dec.rows();
    const Index d = w_dec.cols();
    if (m <= 0 || d <= 0) {
        throw InvalidArgument("SAE model: empty weights");
    }
    require_dims(w_enc.rows(), m, "SAE W_enc rows");
    require_dims(w_enc.cols(), d, "SAE W_enc cols");
    require_dims(b_enc.size(), m, "SAE b_enc");
    require_dims(b_dec.size(), d, "SAE b_dec");
    if (const auto* topk = std::get_if<TopK>(&rule)) {
        if (topk->k <= 0) {
            throw InvalidArgument("TopK rule needs k >= 1");
        }
    } else {
        const auto& jr = std::get<JumpRelu>(rule);
        require_dims(jr.theta.size(), m, "JumpReLU theta");
        if (!(jr.bandwidth > 0.0)) {
            throw InvalidArgument("JumpReLU bandwidth must be positive");
        }
    }
}

SaeModel SaeModel::initialize(Index d, Index m, ActivationRule rule, std::uint64_t seed)
{
    if (d <= 0 || m <= 0) {
        throw InvalidArgument("SAE initialize: d and m must be positive");
    }
    auto rng = make_rng(seed, stream::sae_init);
    std::normal_distribution<double> normal(0.0, 1.0);
    SaeModel model;
    model.w_dec.resize(m, d);
    for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < d; ++j) {
            model.w_dec(i, j) = normal(rng);
        }
    }
    model.w_dec.rowwise().normalize();
    model.w_enc = model.w_dec;
    model.b_enc = Vector::Zero(m);
    model.b_dec = Vector::Zero(d);
    if (auto* jr = std::get_if<JumpRelu>(&rule)) {
        if (jr->theta.size() == 0) {
            jr->theta = Vector::Zero(m);
        } else if (jr->theta.size() == 1) {
            jr->theta = Vector::Constant(m, jr->theta[0]);
        }
    }
    model.rule = std::move(rule);
    model.validate();
    return model;
}

Matrix pre_activations(const SaeModel& model, const Matrix& x)
{
    check_input(model, x);
    Matrix centered = x.rowwise() - model.b_dec.transpose();
    Matrix pre = centered * model.w_enc.transpose();
    pre.rowwise() += model.b_enc.transpose();
    return pre;
}

void apply_rule(const ActivationRule& rule, const Eigen::Ref<const RowVector>& pre,
                std::vector<Eigen::Triplet<double>>& out, Index row)
{
    const Index m = pre.size();
    if (const auto* topk = std::get_if<TopK>(&rule)) {
        thread_local std::vector<Index> candidates;
        candidates.clear();
        for (Index i = 0; i < m; ++i) {
            if (pre[i] > 0.0) {
                candidates.push_back(i);
            }
        }
        auto by_value = [&](Index a, Index b) { return pre[a] > pre[b] || (pre[a] == pre[b] && a < b); };
        if (static_cast<Index>(candidates.size()) > topk->k) {
            std::partial_sort(candidates.begin(), candidates.begin() + topk->k, candidates.end(), by_value);
            candidates.resize(static_cast<std::size_t>(topk->k));
            std::sort(candidates.begin(), candidates.end());
        }
        for (Index i : candidates) {
            out.emplace_back(row, i, pre[i]);
        }
        return;
    }
    const auto& jr = std::get<JumpRelu>(rule);
    for (Index i = 0; i < m; ++i) {
        if (pre[i] - jr.theta[i] > 0.0) {
            out.emplace_back(row, i, pre[i]);
        }
    }
}

LatentBatch encode(const SaeModel& model, const Matrix& x)
{
    check_input(model, x);
    const Index n = x.rows();
    const Index blocks = block_count(n);
    std::vector<std::vector<Eigen::Triplet<double>>> parts(static_cast<std::size_t>(blocks));
    parallel_for(blocks, [&](Index b) {
        const Index begin = b * kBlockRows;
        const Index rows = std::min(kBlockRows, n - begin);
        const Matrix pre = pre_activations(model, x.middleRows(begin, rows));
        auto& out = parts[static_cast<std::size_t>(b)];
        for (Index r = 0; r < rows; ++r) {
            apply_rule(model.rule, pre.row(r), out, begin + r);
        }
    });
    std::vector<Eigen::Triplet<double>> all;
    for (auto& p : parts) {
        all.insert(all.end(), p.begin(), p.end());
    }
    LatentBatch latents(n, model.latents());
    latents.setFromTriplets(all.begin(), all.end());
    return latents;
}

Matrix decode(const SaeModel& model, const LatentBatch& latents)
{
    require_dims(latents.cols(), model.latents(), "latent width");
    Matrix out = latents * model.w_dec;
    out.rowwise() += model.b_dec.transpose();
    return out;
}

Matrix reconstruct(const SaeModel& model, const Matrix& x)
{
    check_input(model, x);
    const Index n = x.rows();
    Matrix out(n, model.dim());
    parallel_for(block_count(n), [&](Index b) {
        const Index begin = b * kBlockRows;
        const Index rows = std::min(kBlockRows, n - begin);
        const Matrix pre = pre_activations(model, x.middleRows(begin, rows));
        std::vector<Eigen::Triplet<double>> active;
        for (Index r = 0; r < rows; ++r) {
            active.clear();
            apply_rule(model.rule, pre.row(r), active, r);
            RowVector y = model.b_dec.transpose();
            for (const auto& t : active) {
                y += t.value() * model.w_dec.row(t.col());
            }
            out.row(begin + r) = y;
        }
    });
    return out;
}

Matrix sae_error(const SaeModel& model, const Matrix& x) { return x - reconstruct(model, x); }

std::vector<Index> row_l0(const SaeModel& model, const Matrix& x)
{
    check_input(model, x);
    const Index n = x.rows();
    std::vector<Index> counts(static_cast<std::size_t>(n), 0);
    parallel_for(block_count(n), [&](Index b) {
        const Index begin = b * kBlockRows;
        const Index rows = std::min(kBlockRows, n - begin);
        const Matrix pre = pre_activations(model, x.middleRows(begin, rows));
        std::vector<Eigen::Triplet<double>> active;
        for (Index r = 0; r < rows; ++r) {
            active.clear();
            apply_rule(model.rule, pre.row(r), active, r);
            counts[static_cast<std::size_t>(begin + r)] = static_cast<Index>(active.size());
        }
    });
    return counts;
}

double measure_l0(const SaeModel& model, const Matrix& x)
{
    const auto counts = row_l0(model, x);
    if (counts.empty()) {
        return 0.0;
    }
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    return total / static_cast<double>(counts.size());
}

double reconstruction_fvu(const SaeModel& model, const Matrix& x)
{
    const Matrix err = sae_error(model, x);
    const RowVector mean = x.colwise().mean();
    const double total = (x.rowwise() - mean).squaredNorm();
    if (!(total > 0.0)) {
        throw DegenerateFit("reconstruction_fvu: input has zero variance");
    }
    return err.squaredNorm() / total;
}

double dictionary_recovery(const Matrix& true_features, const Matrix& decoder)
{
    require_dims(decoder.cols(), true_features.cols(), "dictionary_recovery dimension");
    const Matrix t = true_features.rowwise().normalized();
    const Matrix dec = decoder.rowwise().normalized();
    const Matrix cos = t * dec.transpose();
    return cos.rowwise().maxCoeff().mean();
}

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'D', 'S', 'A', 'E', '\x01', '\0', '\0', '\0'};

template <typename T>
void put(std::ostream& out, T v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw IoError("'" + path.string() + "': truncated checkpoint");
    }
    return v;
}

template <typename Derived>
void put_block(std::ostream& out, const Eigen::DenseBase<Derived>& block)
{
    for (Index i = 0; i < block.rows(); ++i) {
        for (Index j = 0; j < block.cols(); ++j) {
            put<float>(out, static_cast<float>(block(i, j)));
        }
    }
}

template <typename Derived>
void get_block(std::istream& in, Eigen::DenseBase<Derived>& block, const std::filesystem::path& path)
{
    for (Index i = 0; i < block.rows(); ++i) {
        for (Index j = 0; j < block.cols(); ++j) {
            block(i, j) = static_cast<double>(get<float>(in, path));
        }
    }
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const SaeModel& model)
{
    model.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    if (const auto* topk = std::get_if<TopK>(&model.rule)) {
        put<std::uint32_t>(out, 0);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(topk->k));
    } else {
        const auto& jr = std::get<JumpRelu>(model.rule);
        put<std::uint32_t>(out, 1);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(jr.theta.size()));
        put_block(out, jr.theta);
        put<float>(out, static_cast<float>(jr.lambda));
        put<float>(out, static_cast<float>(jr.bandwidth));
    }
    put<std::uint64_t>(out, static_cast<std::uint64_t>(model.latents()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(model.dim()));
    put_block(out, model.w_enc);
    put_block(out, model.b_enc);
    put_block(out, model.w_dec);
    put_block(out, model.b_dec);
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

SaeModel load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) {
        throw IoError("'" + path.string() + "': bad magic, not a DSAE1 checkpoint");
    }
    SaeModel model;
    const auto tag = get<std::uint32_t>(in, path);
    if (tag == 0) {
        model.rule = TopK{static_cast<Index>(get<std::uint64_t>(in, path))};
    } else if (tag == 1) {
        JumpRelu jr;
        const auto len = get<std::uint64_t>(in, path);
        if (len > (1ULL << 32)) {
            throw IoError("'" + path.string() + "': implausible theta length");
        }
        jr.theta.resize(static_cast<Index>(len));
        get_block(in, jr.theta, path);
        jr.lambda = get<float>(in, path);
        jr.bandwidth = get<float>(in, path);
        model.rule = std::move(jr);
    } else {
        throw IoError("'" + path.string() + "': unknown rule tag " + std::to_string(tag));
    }
    const auto m = get<std::uint64_t>(in, path);
    const auto d = get<std::uint64_t>(in, path);
    if (m == 0 || d == 0 || m > (1ULL << 32) || d > (1ULL << 32)) {
        throw IoError("'" + path.string() + "': implausible shape");
    }
    model.w_enc.resize(static_cast<Index>(m), static_cast<Index>(d));
    model.b_enc.resize(static_cast<Index>(m));
    model.w_dec.resize(static_cast<Index>(m), static_cast<Index>(d));
    model.b_dec.resize(static_cast<Index>(d));
    get_block(in, model.w_enc, path);
    get_block(in, model.b_enc, path);
    get_block(in, model.w_dec, path);
    get_block(in, model.b_dec, path);
    model.validate();
    return model;
}

} // namespace dm
