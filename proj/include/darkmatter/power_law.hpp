#pragma once

// fvu(w) = alpha * w^-beta + c, fitted by least squares in the original
// space. c is searched on [0, min fvu); (alpha, beta) come from a log-space
// linear fit at each candidate c.

#include "darkmatter/common.hpp"

namespace dm {

struct PowerLawFit {
    double alpha = 0.0;
    double beta = 0.0;
    double c = 0.0;
    double rss = 0.0;

    double operator()(double width) const;
};

PowerLawFit fit_power_law_with_constant(const Vector& widths, const Vector& fvus);

} // namespace dm
