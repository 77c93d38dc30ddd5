#include "darkmatter/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dm {

namespace {

constexpr Index kGramBlock = 4096;
constexpr double kJitter = 1e-8;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

void SplitSpec::validate() const
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidArgument("split: train_fraction must lie in (0, 1)");
    }
}

Split make_split(Index n, const SplitSpec& spec)
{
    spec.validate();
    if (n < 2) {
        throw InvalidArgument("split: need at least 2 rows");
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    auto rng = make_rng(spec.seed, stream::split);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<Index>(std::llround(spec.train_fraction * static_cast<double>(n)));
    n_train = std::clamp<Index>(n_train, 1, n - 1);
    Split split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.test.assign(order.begin() + n_train, order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Matrix take_rows(const Matrix& x, const std::vector<Index>& rows)
{
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = x.row(rows[i]);
    }
    return out;
}

Vector take_rows(const Vector& x, const std::vector<Index>& rows)
{
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out[static_cast<Index>(i)] = x[rows[i]];
    }
    return out;
}

Vector LinearProbe::predict(const Matrix& x) const
{
    require_dims(x.cols(), weights.size(), "probe input");
    return (x * weights).array() + bias;
}

Matrix LinearMap::predict(const Matrix& x) const
{
    require_dims(x.cols(), matrix.cols(), "map input");
    Matrix out = x * matrix.transpose();
    out.rowwise() += bias.transpose();
    return out;
}

OlsSolver::OlsSolver(const Matrix& x, Split split, SplitSpec spec, bool intercept)
    : x_(x), split_(std::move(split)), spec_(spec), intercept_(intercept)
{
    const Index p = x_.cols();
    const auto n_train = static_cast<Index>(split_.train.size());
    if (split_.test.empty()) {
        throw InvalidArgument("OLS: empty test split");
    }
    if (n_train <= p + 1) {
        throw DegenerateFit("OLS: need more than p + 1 training rows (n_train=" + std::to_string(n_train)
                            + ", p=" + std::to_string(p) + ")");
    }
    mean_ = RowVector::Zero(p);
    if (intercept_) {
        for (Index r : split_.train) {
            mean_ += x_.row(r);
        }
        mean_ /= static_cast<double>(n_train);
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    for (Index begin = 0; begin < n_train; begin += kGramBlock) {
        const Index rows = std::min(kGramBlock, n_train - begin);
        Matrix block(rows, p);
        for (Index r = 0; r < rows; ++r) {
            block.row(r) = x_.row(split_.train[static_cast<std::size_t>(begin + r)]) - mean_;
        }
        gram.noalias() += block.transpose() * block;
    }
    if (!gram.allFinite()) {
        throw DegenerateFit("OLS: non-finite Gram matrix");
    }
    const double trace = gram.trace();
    if (!(trace > 0.0)) {
        throw DegenerateFit("OLS: every regressor is constant on the training split");
    }
    gram.diagonal().array() += kJitter * trace / static_cast<double>(p);
    ldlt_.compute(gram);
    if (ldlt_.info() != Eigen::Success || !(ldlt_.rcond() > 1e-15)) {
        throw DegenerateFit("OLS: Gram matrix is rank deficient beyond jitter (rcond="
                            + std::to_string(ldlt_.rcond()) + ")");
    }
}

namespace {

struct SplitScores {
    Vector per_dim;
    double mean = 0.0;
    double fvu = 0.0;
};

SplitScores score_rows(const Matrix& x, const Matrix& y, const std::vector<Index>& rows, const Matrix& coef,
                       const Vector& bias)
{
    const Index q = y.cols();
    const auto n = static_cast<double>(rows.size());
    RowVector mean = RowVector::Zero(q);
    for (Index r : rows) {
        mean += y.row(r);
    }
    mean /= n;
    Vector ss_res = Vector::Zero(q);
    Vector ss_tot = Vector::Zero(q);
    for (Index r : rows) {
        const RowVector pred = x.row(r) * coef + bias.transpose();
        ss_res += (y.row(r) - pred).array().square().matrix().transpose();
        ss_tot += (y.row(r) - mean).array().square().matrix().transpose();
    }
    SplitScores s;
    s.per_dim.resize(q);
    double sum = 0.0;
    Index finite = 0;
    for (Index j = 0; j < q; ++j) {
        if (ss_tot[j] > 0.0) {
            s.per_dim[j] = 1.0 - ss_res[j] / ss_tot[j];
            sum += s.per_dim[j];
            ++finite;
        } else {
            s.per_dim[j] = kNaN;
        }
    }
    s.mean = finite > 0 ? sum / static_cast<double>(finite) : kNaN;
    const double tot = ss_tot.sum();
    s.fvu = tot > 0.0 ? ss_res.sum() / tot : kNaN;
    return s;
}

} // namespace

LinearMap OlsSolver::fit(const Matrix& y) const
{
    require_dims(y.rows(), x_.rows(), "OLS target rows");
    const Index p = x_.cols();
    const Index q = y.cols();
    const auto n_train = static_cast<Index>(split_.train.size());
    RowVector y_mean = RowVector::Zero(q);
    if (intercept_) {
        for (Index r : split_.train) {
            y_mean += y.row(r);
        }
        y_mean /= static_cast<double>(n_train);
    }
    Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(p, q);
    for (Index begin = 0; begin < n_train; begin += kGramBlock) {
        const Index rows = std::min(kGramBlock, n_train - begin);
        Matrix xb(rows, p);
        Matrix yb(rows, q);
        for (Index r = 0; r < rows; ++r) {
            const Index src = split_.train[static_cast<std::size_t>(begin + r)];
            xb.row(r) = x_.row(src) - mean_;
            yb.row(r) = y.row(src) - y_mean;
        }
        xty.noalias() += xb.transpose() * yb;
    }
    const Eigen::MatrixXd coef = ldlt_.solve(xty); // p x q
    if (!coef.allFinite()) {
        throw DegenerateFit("OLS: non-finite solution");
    }
    LinearMap map;
    map.matrix = coef.transpose();
    map.bias = (y_mean - mean_ * coef).transpose();
    map.split = spec_;
    map.intercept = intercept_;

    const Matrix coef_rm = coef;
    const SplitScores test = score_rows(x_, y, split_.test, coef_rm, map.bias);
    const SplitScores train = score_rows(x_, y, split_.train, coef_rm, map.bias);
    map.per_dim_r2 = test.per_dim;
    map.mean_r2 = test.mean;
    map.total_fvu = test.fvu;
    map.train_mean_r2 = train.mean;
    map.train_fvu = train.fvu;
    return map;
}

LinearMap fit_map(const Matrix& x, const Matrix& y, const SplitSpec& split, bool intercept)
{
    require_dims(y.rows(), x.rows(), "fit_map rows");
    OlsSolver solver(x, make_split(x.rows(), split), split, intercept);
    return solver.fit(y);
}

LinearProbe fit_probe(const Matrix& x, const Vector& y, const SplitSpec& split, bool intercept)
{
    require_dims(y.size(), x.rows(), "fit_probe rows");
    const Matrix y_col = y;
    const LinearMap map = fit_map(x, y_col, split, intercept);
    LinearProbe probe;
    probe.weights = map.matrix.row(0).transpose();
    probe.bias = map.bias[0];
    // A constant held-out target has nothing left to explain.
    probe.test_r2 = std::isnan(map.mean_r2) ? 0.0 : map.mean_r2;
    probe.train_r2 = std::isnan(map.train_mean_r2) ? 0.0 : map.train_mean_r2;
    probe.split = split;
    probe.intercept = intercept;
    return probe;
}

double r2(const Vector& pred, const Vector& target)
{
    require_dims(pred.size(), target.size(), "r2 length");
    const double mean = target.mean();
    const double tot = (target.array() - mean).square().sum();
    if (!(tot > 0.0)) {
        throw DegenerateFit("r2: target has zero variance");
    }
    return 1.0 - (target - pred).squaredNorm() / tot;
}

double fvu_pooled(const Matrix& pred, const Matrix& target)
{
    require_dims(pred.rows(), target.rows(), "fvu rows");
    require_dims(pred.cols(), target.cols(), "fvu cols");
    const RowVector mean = target.colwise().mean();
    const double tot = (target.rowwise() - mean).squaredNorm();
    if (!(tot > 0.0)) {
        throw DegenerateFit("fvu: target has zero variance");
    }
    return (target - pred).squaredNorm() / tot;
}

double r2_pooled(const Matrix& pred, const Matrix& target) { return 1.0 - fvu_pooled(pred, target); }

Vector r2_per_dim(const Matrix& pred, const Matrix& target)
{
    require_dims(pred.rows(), target.rows(), "r2 rows");
    require_dims(pred.cols(), target.cols(), "r2 cols");
    const RowVector mean = target.colwise().mean();
    Vector out(target.cols());
    for (Index j = 0; j < target.cols(); ++j) {
        const double tot = (target.col(j).array() - mean[j]).square().sum();
        out[j] = tot > 0.0 ? 1.0 - (target.col(j) - pred.col(j)).squaredNorm() / tot : kNaN;
    }
    return out;
}

double r2_mean(const Matrix& pred, const Matrix& target)
{
    const Vector per = r2_per_dim(pred, target);
    double sum = 0.0;
    Index finite = 0;
    for (Index j = 0; j < per.size(); ++j) {
        if (!std::isnan(per[j])) {
            sum += per[j];
            ++finite;
        }
    }
    if (finite == 0) {
        throw DegenerateFit("r2: every target column has zero variance");
    }
    return sum / static_cast<double>(finite);
}

namespace {

nlohmann::json number(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json numbers(const Vector& v)
{
    auto out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(number(v[i]));
    }
    return out;
}

} // namespace

nlohmann::json to_json(const SplitSpec& split)
{
    return {{"train_fraction", split.train_fraction}, {"seed", split.seed}};
}

nlohmann::json to_json(const LinearProbe& probe)
{
    return {{"weights", numbers(probe.weights)},
            {"bias", number(probe.bias)},
            {"intercept", probe.intercept},
            {"train_r2", number(probe.train_r2)},
            {"test_r2", number(probe.test_r2)},
            {"split", to_json(probe.split)}};
}

nlohmann::json to_json(const LinearMap& map, bool include_matrix)
{
    nlohmann::json j{{"shape", {map.matrix.rows(), map.matrix.cols()}},
                     {"bias", numbers(map.bias)},
                     {"intercept", map.intercept},
                     {"per_dim_r2", numbers(map.per_dim_r2)},
                     {"mean_r2", number(map.mean_r2)},
                     {"total_fvu", number(map.total_fvu)},
                     {"train_mean_r2", number(map.train_mean_r2)},
                     {"train_fvu", number(map.train_fvu)},
                     {"split", to_json(map.split)}};
    if (include_matrix) {
        auto rows = nlohmann::json::array();
        for (Index i = 0; i < map.matrix.rows(); ++i) {
            rows.push_back(numbers(map.matrix.row(i).transpose()));
        }
        j["weights"] = std::move(rows);
    }
    return j;
}

} // namespace dm
