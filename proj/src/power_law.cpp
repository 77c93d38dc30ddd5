#include "darkmatter/power_law.hpp"

#include <cmath>
#include <sstream>

namespace dm {

double PowerLawFit::operator()(double width) const { return alpha * std::pow(width, -beta) + c; }

namespace {

PowerLawFit fit_at(const Vector& log_w, const Vector& widths, const Vector& fvus, double c)
{
    const Index k = widths.size();
    Vector log_y(k);
    for (Index i = 0; i < k; ++i) {
        log_y[i] = std::log(fvus[i] - c);
    }
    const double mx = log_w.mean();
    const double my = log_y.mean();
    const double sxx = (log_w.array() - mx).square().sum();
    const double sxy = ((log_w.array() - mx) * (log_y.array() - my)).sum();
    const double slope = sxy / sxx;
    PowerLawFit fit;
    fit.beta = -slope;
    fit.alpha = std::exp(my - slope * mx);
    fit.c = c;
    double rss = 0.0;
    for (Index i = 0; i < k; ++i) {
        const double r = fvus[i] - fit(widths[i]);
        rss += r * r;
    }
    fit.rss = rss;
    return fit;
}

std::string diagnostics(const PowerLawFit& fit, const Vector& widths, const Vector& fvus)
{
    std::ostringstream os;
    os << "alpha=" << fit.alpha << " beta=" << fit.beta << " c=" << fit.c << " residuals=[";
    for (Index i = 0; i < widths.size(); ++i) {
        os << (i ? " " : "") << fvus[i] - fit(widths[i]);
    }
    os << "]";
    return os.str();
}

} // namespace

PowerLawFit fit_power_law_with_constant(const Vector& widths, const Vector& fvus)
{
    require_dims(fvus.size(), widths.size(), "power-law inputs");
    const Index k = widths.size();
    if (k < 4) {
        throw InvalidArgument("power-law fit needs at least 4 points");
    }
    for (Index i = 0; i < k; ++i) {
        if (!(widths[i] > 0.0) || !(fvus[i] > 0.0) || !std::isfinite(widths[i]) || !std::isfinite(fvus[i])) {
            throw InvalidArgument("power-law fit: widths and fvus must be positive and finite");
        }
        if (i > 0 && !(widths[i] > widths[i - 1])) {
            throw InvalidArgument("power-law fit: widths must be strictly increasing");
        }
    }
    const double lo_f = fvus.minCoeff();
    const double hi_f = fvus.maxCoeff();
    if (hi_f - lo_f <= 1e-12 * hi_f) {
        throw DegenerateFit("power-law fit: curve is flat, c and alpha are not separately identifiable");
    }
    const Vector log_w = widths.array().log();

    const double upper = lo_f * (1.0 - 1e-9);
    constexpr int grid = 400;
    int best = 0;
    PowerLawFit best_fit = fit_at(log_w, widths, fvus, 0.0);
    for (int g = 1; g < grid; ++g) {
        const double c = upper * g / grid;
        const auto f = fit_at(log_w, widths, fvus, c);
        if (f.rss < best_fit.rss) {
            best_fit = f;
            best = g;
        }
    }
    double a = upper * std::max(0, best - 1) / grid;
    double b = upper * std::min(grid, best + 1) / grid;
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = fit_at(log_w, widths, fvus, x1).rss;
    double f2 = fit_at(log_w, widths, fvus, x2).rss;
    for (int it = 0; it < 200 && (b - a) > 1e-15 * std::max(1.0, upper); ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = fit_at(log_w, widths, fvus, x1).rss;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = fit_at(log_w, widths, fvus, x2).rss;
        }
    }
    const auto refined = fit_at(log_w, widths, fvus, 0.5 * (a + b));
    if (refined.rss < best_fit.rss) {
        best_fit = refined;
    }
    if (!std::isfinite(best_fit.rss) || !std::isfinite(best_fit.alpha) || !std::isfinite(best_fit.beta)) {
        throw DegenerateFit("power-law fit failed: " + diagnostics(best_fit, widths, fvus));
    }
    if (!(best_fit.beta > 0.0)) {
        throw DegenerateFit("power-law fit: curve is not decreasing; " + diagnostics(best_fit, widths, fvus));
    }
    return best_fit;
}

} // namespace dm
