#include "darkmatter/pursuit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dm {

void PursuitConfig::validate() const
{
    if (budget && *budget < 0) {
        throw InvalidArgument("pursuit: budget must be >= 0");
    }
    if (refine_iterations < 0) {
        throw InvalidArgument("pursuit: refine_iterations must be >= 0");
    }
    if (!(tolerance > 0.0)) {
        throw InvalidArgument("pursuit: tolerance must be positive");
    }
}

SparseCode gradient_pursuit(const Matrix& decoder, const Vector& bias, const Eigen::Ref<const RowVector>& x,
                            Index budget, const PursuitConfig& config)
{
    const Index m = decoder.rows();
    require_dims(x.size(), decoder.cols(), "pursuit input");
    require_dims(bias.size(), decoder.cols(), "pursuit bias");
    if (budget < 0) {
        throw InvalidArgument("pursuit: budget must be >= 0");
    }
    RowVector r = x - bias.transpose();
    if (!r.allFinite()) {
        throw NumericalError("pursuit: non-finite input");
    }
    std::vector<Index> active;
    std::vector<double> coef;
    std::vector<char> in_support(static_cast<std::size_t>(m), 0);
    SparseCode code;
    double rr = r.squaredNorm();
    code.residual_history.push_back(std::sqrt(rr));

    Vector g;
    for (Index round = 0; round < std::min(budget, m); ++round) {
        const Vector corr = decoder * r.transpose();
        Index pick = -1;
        double best = 0.0;
        for (Index j = 0; j < m; ++j) {
            if (in_support[static_cast<std::size_t>(j)]) {
                continue;
            }
            const double score = config.nonnegative ? corr[j] : std::abs(corr[j]);
            if (score > best) {
                best = score;
                pick = j;
            }
        }
        if (pick < 0 || best <= 1e-14 * std::sqrt(rr)) {
            break;
        }
        in_support[static_cast<std::size_t>(pick)] = 1;
        active.push_back(pick);
        coef.push_back(0.0);

        const auto k = static_cast<Index>(active.size());
        for (Index it = 0; it <= config.refine_iterations; ++it) {
            g.resize(k);
            for (Index s = 0; s < k; ++s) {
                g[s] = decoder.row(active[static_cast<std::size_t>(s)]).dot(r);
                if (config.nonnegative && coef[static_cast<std::size_t>(s)] <= 0.0 && g[s] < 0.0) {
                    g[s] = 0.0;
                }
            }
            RowVector c = RowVector::Zero(r.size());
            for (Index s = 0; s < k; ++s) {
                if (g[s] != 0.0) {
                    c += g[s] * decoder.row(active[static_cast<std::size_t>(s)]);
                }
            }
            const double cc = c.squaredNorm();
            if (!(cc > 0.0)) {
                break;
            }
            double step = g.squaredNorm() / cc;
            if (config.nonnegative) {
                for (Index s = 0; s < k; ++s) {
                    if (g[s] < 0.0) {
                        step = std::min(step, coef[static_cast<std::size_t>(s)] / -g[s]);
                    }
                }
            }
            for (Index s = 0; s < k; ++s) {
                auto& v = coef[static_cast<std::size_t>(s)];
                v += step * g[s];
                if (config.nonnegative && v < 0.0) {
                    v = 0.0;
                }
            }
            r -= step * c;
            const double next = r.squaredNorm();
            if (!std::isfinite(next)) {
                throw NumericalError("pursuit: non-finite residual");
            }
            const double drop = rr - next;
            rr = next;
            code.residual_history.push_back(std::sqrt(rr));
            if (drop <= config.tolerance * std::max(rr + drop, 1e-300)) {
                break;
            }
        }
    }

    for (std::size_t s = 0; s < active.size(); ++s) {
        if (coef[s] != 0.0) {
            code.entries.emplace_back(active[s], coef[s]);
        }
    }
    std::sort(code.entries.begin(), code.entries.end());
    code.residual_norm = std::sqrt(rr);
    return code;
}

ItoResult ito_reconstruct(const SaeModel& model, const Matrix& x, const PursuitConfig& config)
{
    config.validate();
    model.validate();
    require_dims(x.cols(), model.dim(), "ITO input");
    const Vector norms = model.w_dec.rowwise().norm();
    if ((norms.array() - 1.0).abs().maxCoeff() > 1e-6) {
        throw InvalidArgument("ITO: decoder rows must have unit norm");
    }
    ItoResult result;
    const Index n = x.rows();
    if (config.budget) {
        result.budgets.assign(static_cast<std::size_t>(n), *config.budget);
    } else {
        result.budgets = row_l0(model, x);
    }
    result.recon.resize(n, model.dim());
    std::vector<Index> realized(static_cast<std::size_t>(n), 0);
    parallel_for(n, [&](Index row) {
        const auto code = gradient_pursuit(model.w_dec, model.b_dec, x.row(row),
                                           result.budgets[static_cast<std::size_t>(row)], config);
        RowVector y = model.b_dec.transpose();
        for (const auto& [j, v] : code.entries) {
            y += v * model.w_dec.row(j);
        }
        result.recon.row(row) = y;
        realized[static_cast<std::size_t>(row)] = static_cast<Index>(code.entries.size());
    });
    if (n > 0) {
        result.mean_l0 = std::accumulate(realized.begin(), realized.end(), 0.0) / static_cast<double>(n);
        result.max_l0 = *std::max_element(realized.begin(), realized.end());
    }
    return result;
}

} // namespace dm
