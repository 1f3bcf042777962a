#pragma once

#include "core.hpp"

namespace mnp {

struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
};

// Gauss-Legendre nodes on [-1, 1], ascending. Newton on the three-term
// recurrence; accurate to rounding for the sizes used here (n up to a few 1000).
inline GaussRule gauss_legendre(int n)
{
    if (n < 1) throw ValidationError("gauss_legendre: n must be >= 1");
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) { p1 = z; p0 = 1.0; }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) {
                // one more pass for the derivative at the converged node
                p0 = 1.0; p1 = z;
                for (int k = 2; k <= n; ++k) {
                    double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                if (n == 1) { p1 = z; p0 = 1.0; }
                dp = n * (z * p1 - p0) / (z * z - 1.0);
                break;
            }
        }
        double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x[i] = -z;
        r.x[n - 1 - i] = z;
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.x[n / 2] = 0.0;
    return r;
}

// Gauss-Legendre on [a, b]
inline GaussRule gauss_legendre(int n, double a, double b)
{
    GaussRule r = gauss_legendre(n);
    double h = 0.5 * (b - a), c = 0.5 * (b + a);
    for (int i = 0; i < n; ++i) {
        r.x[i] = c + h * r.x[i];
        r.w[i] *= h;
    }
    return r;
}

} // namespace mnp
