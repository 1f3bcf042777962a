#pragma once

#include "core.hpp"

#include <Eigen/Eigenvalues>

namespace mnp {

// ---------------------------------------------------------------------------
// Associated Legendre functions, fully normalized with the Condon-Shortley
// phase folded in, so that Y_n^m(theta, phi) = P[n,m](cos theta) e^{i m phi}
// for m >= 0 and Y_n^{-m} = (-1)^m conj(Y_n^m).
// ---------------------------------------------------------------------------
struct LegendreTable {
    int L = -1;
    std::vector<double> P;   // P[sh_index(n,m)], m >= 0
    std::vector<double> dP;  // d/dtheta
    std::vector<double> d2P; // d^2/dtheta^2 (optional)
    std::vector<double> Ps;  // P / sin(theta), m >= 1 (finite at the poles)

    double p(int n, int m) const { return P[sh_index(n, m)]; }
    double dp(int n, int m) const { return dP[sh_index(n, m)]; }
};

// x = cos(theta), s = sin(theta) >= 0
inline LegendreTable legendre_table(int L, double x, double s, bool second = false)
{
    LegendreTable t;
    t.L = L;
    int D = sh_count(L);
    t.P.assign(D, 0.0);
    t.dP.assign(D, 0.0);
    t.Ps.assign(D, 0.0);
    // Q = P / s^m obeys the same recurrence in n and stays finite at the poles
    std::vector<double> Q(D, 0.0);
    double qmm = 1.0 / std::sqrt(4.0 * pi);
    for (int m = 0; m <= L; ++m) {
        if (m > 0) qmm *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m));
        Q[sh_index(m, m)] = qmm;
        if (m + 1 <= L) Q[sh_index(m + 1, m)] = std::sqrt(2.0 * m + 3.0) * x * qmm;
        for (int n = m + 2; n <= L; ++n) {
            double a = std::sqrt((4.0 * n * n - 1.0) / (double(n) * n - double(m) * m));
            double b = std::sqrt((double(n - 1) * (n - 1) - double(m) * m) /
                                 (4.0 * (n - 1) * (n - 1) - 1.0));
            Q[sh_index(n, m)] = a * (x * Q[sh_index(n - 1, m)] - b * Q[sh_index(n - 2, m)]);
        }
    }
    std::vector<double> spow(L + 2, 1.0);
    for (int m = 1; m <= L + 1; ++m) spow[m] = spow[m - 1] * s;
    for (int n = 0; n <= L; ++n)
        for (int m = 0; m <= n; ++m) {
            int k = sh_index(n, m);
            t.P[k] = spow[m] * Q[k];
            if (m >= 1) t.Ps[k] = spow[m - 1] * Q[k];
        }
    auto Pm = [&](int n, int m) -> double {
        if (m > n) return 0.0;
        if (m >= 0) return t.P[sh_index(n, m)];
        return ((-m) % 2 ? -1.0 : 1.0) * t.P[sh_index(n, -m)];
    };
    for (int n = 0; n <= L; ++n)
        for (int m = 0; m <= n; ++m) {
            double cp = std::sqrt(double(n - m) * (n + m + 1));
            double cm = std::sqrt(double(n + m) * (n - m + 1));
            t.dP[sh_index(n, m)] = 0.5 * cp * Pm(n, m + 1) - 0.5 * cm * Pm(n, m - 1);
        }
    if (second) {
        t.d2P.assign(D, 0.0);
        auto dPm = [&](int n, int m) -> double {
            if (m > n) return 0.0;
            if (m >= 0) return t.dP[sh_index(n, m)];
            return ((-m) % 2 ? -1.0 : 1.0) * t.dP[sh_index(n, -m)];
        };
        for (int n = 0; n <= L; ++n)
            for (int m = 0; m <= n; ++m) {
                double cp = std::sqrt(double(n - m) * (n + m + 1));
                double cm = std::sqrt(double(n + m) * (n - m + 1));
                t.d2P[sh_index(n, m)] = 0.5 * cp * dPm(n, m + 1) - 0.5 * cm * dPm(n, m - 1);
            }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Directions and local frames
// ---------------------------------------------------------------------------
struct SphFrame {
    double theta, phi, ct, st, cp, sp;
    Vec3 r, eth, eph;
};

inline SphFrame sph_frame(const Vec3& d)
{
    SphFrame f;
    double nr = d.norm();
    Vec3 u = d / nr;
    f.ct = std::clamp(u.z(), -1.0, 1.0);
    f.st = std::hypot(u.x(), u.y());
    f.theta = std::atan2(f.st, f.ct);
    f.phi = (f.st > 0.0) ? std::atan2(u.y(), u.x()) : 0.0;
    f.cp = std::cos(f.phi);
    f.sp = std::sin(f.phi);
    f.r = Vec3(f.st * f.cp, f.st * f.sp, f.ct);
    f.eth = Vec3(f.ct * f.cp, f.ct * f.sp, -f.st);
    f.eph = Vec3(-f.sp, f.cp, 0.0);
    return f;
}

inline Vec3 sph_dir(double theta, double phi)
{
    return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
}

// ---------------------------------------------------------------------------
// Scalar and vector spherical harmonics
// ---------------------------------------------------------------------------
inline void check_nm(int n, int m)
{
    if (n < 0 || std::abs(m) > n)
        throw ValidationError("spherical harmonic index out of range: n=" + std::to_string(n) +
                              " m=" + std::to_string(m));
}

// Y value and its S^2 gradient from a precomputed table
inline cplx ynm_from(const LegendreTable& t, int n, int m, double phi)
{
    int am = std::abs(m);
    cplx e = std::polar(1.0, am * phi);
    cplx v = t.P[sh_index(n, am)] * e;
    if (m < 0) v = (am % 2 ? -1.0 : 1.0) * std::conj(v);
    return v;
}

// returns (dY/dtheta, (1/sin theta) dY/dphi)
inline std::pair<cplx, cplx> ynm_grad_from(const LegendreTable& t, int n, int m, double phi)
{
    int am = std::abs(m);
    cplx e = std::polar(1.0, am * phi);
    int k = sh_index(n, am);
    cplx gth = t.dP[k] * e;
    cplx gph = (am >= 1) ? cplx(0.0, am) * t.Ps[k] * e : cplx(0.0);
    if (m < 0) {
        double sg = am % 2 ? -1.0 : 1.0;
        gth = sg * std::conj(gth);
        gph = sg * std::conj(gph);
    }
    return {gth, gph};
}

inline cplx ynm(int n, int m, const Vec3& dir)
{
    check_nm(n, m);
    SphFrame f = sph_frame(dir);
    LegendreTable t = legendre_table(n, f.ct, f.st);
    return ynm_from(t, n, m, f.phi);
}

// grad_S Y_n^m at a unit direction (tangent to the unit sphere)
inline CVec3 ynm_surface_grad(int n, int m, const Vec3& dir)
{
    check_nm(n, m);
    SphFrame f = sph_frame(dir);
    LegendreTable t = legendre_table(n, f.ct, f.st);
    auto [gth, gph] = ynm_grad_from(t, n, m, f.phi);
    return f.eth.cast<cplx>() * gth + f.eph.cast<cplx>() * gph;
}

struct VectorHarmonic {
    int l = 1; // 1: gradient type, 2: rotated
    int n = 1;
    int m = 0;
};

inline CVec3 vector_sph(const VectorHarmonic& h, const Vec3& dir)
{
    if (h.l != 1 && h.l != 2) throw ValidationError("vector_sph: l must be 1 or 2");
    if (h.n < 1) throw ValidationError("vector_sph: n = 0 has no tangential harmonic");
    check_nm(h.n, h.m);
    CVec3 g = ynm_surface_grad(h.n, h.m, dir) / std::sqrt(double(h.n) * (h.n + 1));
    if (h.l == 1) return g;
    Vec3 u = dir.normalized();
    return cross(u.cast<cplx>(), g);
}

// ---------------------------------------------------------------------------
// Wigner rotation blocks. For Q = R_z(a) R_y(b):
//   Y_n^m(Q p) = e^{i m a} sum_{m'} T^n_{m m'}(b) Y_n^{m'}(p)
// T^n(b) = exp(i b L_y)^T with L_y the matrix of the angular momentum
// component in the Y_n^m basis. L_y has integer spectrum, so one Hermitian
// eigendecomposition per degree gives T for every angle.
// ---------------------------------------------------------------------------
class WignerRotator {
public:
    explicit WignerRotator(int L) : L_(L)
    {
        U_.resize(L + 1);
        ev_.resize(L + 1);
        for (int n = 0; n <= L; ++n) {
            int d = 2 * n + 1;
            CMat Ly = CMat::Zero(d, d);
            for (int m = -n; m <= n; ++m) {
                int c = m + n;
                if (m + 1 <= n) {
                    double cp = std::sqrt(double(n - m) * (n + m + 1));
                    Ly(c + 1, c) += cp / cplx(0.0, 2.0);
                }
                if (m - 1 >= -n) {
                    double cm = std::sqrt(double(n + m) * (n - m + 1));
                    Ly(c - 1, c) -= cm / cplx(0.0, 2.0);
                }
            }
            Eigen::SelfAdjointEigenSolver<CMat> es(Ly);
            U_[n] = es.eigenvectors();
            ev_[n] = es.eigenvalues().array().round().matrix();
        }
    }

    int L() const { return L_; }

    // real (2n+1)x(2n+1) block, rows m, cols m'
    RMat block(int n, double beta) const
    {
        const CMat& U = U_[n];
        CVec ph(U.cols());
        for (int k = 0; k < U.cols(); ++k) ph[k] = std::polar(1.0, beta * ev_[n][k]);
        CMat E = U * ph.asDiagonal() * U.adjoint();
        return E.transpose().real();
    }

private:
    int L_;
    std::vector<CMat> U_;
    std::vector<RVec> ev_;
};

// ---------------------------------------------------------------------------
// Spherical Bessel functions of real positive argument
// ---------------------------------------------------------------------------

// j_0..j_N by Miller's downward recurrence, normalized with
// sum_k (2k+1) j_k(z)^2 = 1 and the sign of the closed-form j_0 / j_1.
inline std::vector<double> sph_bessel_j_all(int N, double z)
{
    if (!(z > 0.0)) throw ValidationError("spherical Bessel: z must be > 0");
    std::vector<double> out(N + 1, 0.0);
    int start = std::max(N, static_cast<int>(z)) + 40 + static_cast<int>(std::sqrt(40.0 * std::max(N, 1)));
    std::vector<double> f(start + 2, 0.0);
    f[start + 1] = 0.0;
    f[start] = 1.0;
    for (int k = start; k >= 1; --k) {
        f[k - 1] = (2.0 * k + 1.0) / z * f[k] - f[k + 1];
        if (std::abs(f[k - 1]) > 1e120) {
            for (int q = k - 1; q <= start + 1; ++q) f[q] *= 1e-120;
        }
    }
    double sum = 0.0;
    for (int k = start; k >= 0; --k) sum += (2.0 * k + 1.0) * f[k] * f[k];
    double scale = 1.0 / std::sqrt(sum);
    double j0 = std::sin(z) / z;
    double j1 = std::sin(z) / (z * z) - std::cos(z) / z;
    double sgn = (std::abs(j0) > std::abs(j1)) ? ((j0 * f[0] >= 0) ? 1.0 : -1.0)
                                                : ((j1 * f[1] >= 0) ? 1.0 : -1.0);
    for (int k = 0; k <= N; ++k) out[k] = sgn * scale * f[k];
    if (z > 0.5) {
        // closed forms are accurate here; pin the first two exactly
        out[0] = j0;
        if (N >= 1) out[1] = j1;
    }
    return out;
}

// y_0..y_N by upward recurrence (stable for y)
inline std::vector<double> sph_bessel_y_all(int N, double z)
{
    if (!(z > 0.0)) throw ValidationError("spherical Bessel: z must be > 0");
    std::vector<double> y(N + 1, 0.0);
    y[0] = -std::cos(z) / z;
    if (N >= 1) y[1] = -std::cos(z) / (z * z) - std::sin(z) / z;
    for (int n = 1; n < N; ++n) y[n + 1] = (2.0 * n + 1.0) / z * y[n] - y[n - 1];
    return y;
}

inline double sph_j(int n, double z) { return sph_bessel_j_all(n, z)[n]; }
inline double sph_y(int n, double z) { return sph_bessel_y_all(n, z)[n]; }
inline cplx sph_h1(int n, double z) { return cplx(sph_j(n, z), sph_y(n, z)); }

// derivative from f_n' = f_{n-1} - (n+1)/z f_n, f_0' = -f_1
inline double sph_jp(int n, double z)
{
    auto j = sph_bessel_j_all(n + 1, z);
    return n == 0 ? -j[1] : j[n - 1] - (n + 1.0) / z * j[n];
}
inline double sph_yp(int n, double z)
{
    auto y = sph_bessel_y_all(n + 1, z);
    return n == 0 ? -y[1] : y[n - 1] - (n + 1.0) / z * y[n];
}
inline cplx sph_h1p(int n, double z) { return cplx(sph_jp(n, z), sph_yp(n, z)); }

enum class RadialTag { bessel_j, hankel1, composite_J, composite_H };

struct RadialKind {
    RadialTag tag = RadialTag::bessel_j;
    int n = 0;
};

// f(z) + z f'(z) = z f_{n-1}(z) - n f_n(z) for n >= 1; for n = 0, f - z f_1
inline cplx radial(const RadialKind& k, double z)
{
    if (!(z > 0.0)) throw ValidationError("radial: z must be > 0");
    if (k.n < 0) throw ValidationError("radial: order must be >= 0");
    int n = k.n;
    auto j = sph_bessel_j_all(n + 1, z);
    switch (k.tag) {
    case RadialTag::bessel_j:
        return j[n];
    case RadialTag::hankel1: {
        auto y = sph_bessel_y_all(n, z);
        return cplx(j[n], y[n]);
    }
    case RadialTag::composite_J:
        return n == 0 ? j[0] - z * j[1] : z * j[n - 1] - n * j[n];
    case RadialTag::composite_H: {
        auto y = sph_bessel_y_all(n + 1, z);
        cplx h_n(j[n], y[n]);
        if (n == 0) return h_n - z * cplx(j[1], y[1]);
        return z * cplx(j[n - 1], y[n - 1]) - double(n) * h_n;
    }
    }
    return 0.0;
}

// log((2n+1)!!) via lgamma: (2n+1)!! = (2n+1)! / (2^n n!)
inline double log_double_factorial_odd(int n)
{
    return std::lgamma(2.0 * n + 2.0) - n * std::log(2.0) - std::lgamma(n + 1.0);
}

// Ratio of the exact value to the leading large-n term:
// j_n ~ z^n/(2n+1)!!, h_n ~ (2n-1)!!/(i z^{n+1}), J_n ~ (n+1) z^n/(2n+1)!!,
// H_n ~ -n (2n-1)!!/(i z^{n+1}). Real part of the complex ratio is returned;
// its imaginary part is exponentially small in n.
inline double radial_asymptotic_ratio(RadialTag tag, double z, int n)
{
    if (n < 1) throw ValidationError("radial_asymptotic_ratio: n must be >= 1");
    cplx exact = radial(RadialKind{tag, n}, z);
    double lj = n * std::log(z) - log_double_factorial_odd(n);
    double lh = log_double_factorial_odd(n - 1) - (n + 1) * std::log(z);
    cplx lead;
    switch (tag) {
    case RadialTag::bessel_j: lead = std::exp(lj); break;
    case RadialTag::hankel1: lead = std::exp(lh) / I1; break;
    case RadialTag::composite_J: lead = (n + 1.0) * std::exp(lj); break;
    case RadialTag::composite_H: lead = -double(n) * std::exp(lh) / I1; break;
    }
    return (exact / lead).real();
}

} // namespace mnp
