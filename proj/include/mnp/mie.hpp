#pragma once

#include "potentials.hpp"

#include <numeric>

namespace mnp {

struct Rational {
    long long num = 0, den = 1;
    Rational() = default;
    Rational(long long p, long long q)
    {
        if (q == 0) throw ValidationError("Rational: zero denominator", "den");
        if (q < 0) {
            p = -p;
            q = -q;
        }
        long long g = std::gcd(p < 0 ? -p : p, q);
        num = p / (g ? g : 1);
        den = q / (g ? g : 1);
    }
    double value() const { return double(num) / double(den); }
    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
    bool operator!=(const Rational& o) const { return !(*this == o); }
    Rational operator-() const { return Rational(-num, den); }
    Rational operator+(const Rational& o) const { return Rational(num * o.den + o.num * den, den * o.den); }
    Rational operator-(const Rational& o) const { return *this + (-o); }
    Rational operator*(const Rational& o) const { return Rational(num * o.num, den * o.den); }
    Rational operator/(const Rational& o) const { return Rational(num * o.den, den * o.num); }
    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

inline Rational sphere_mnp_eigenvalue_exact(int l, int n)
{
    if (n < 1) throw ValidationError("sphere_mnp_eigenvalue: n must be >= 1", "n");
    if (l != 1 && l != 2) throw ValidationError("sphere_mnp_eigenvalue: l must be 1 or 2", "l");
    return Rational(l == 1 ? -1 : 1, 2 * (2 * n + 1));
}

inline double sphere_mnp_eigenvalue(int l, int n) { return sphere_mnp_eigenvalue_exact(l, n).value(); }

// K* on the sphere: 1/(2(2n+1)), n >= 0
inline Rational sphere_np_eigenvalue_exact(int n)
{
    if (n < 0) throw ValidationError("sphere_np_eigenvalue: n must be >= 0", "n");
    return Rational(1, 2 * (2 * n + 1));
}

struct SphereMode {
    int l = 2, n = 1, m = 0;
    double r = 1.0;

    void check() const
    {
        if (l != 1 && l != 2) throw ValidationError("SphereMode: l must be 1 or 2", "l");
        if (n < 1) throw ValidationError("SphereMode: n must be >= 1", "n");
        if (std::abs(m) > n) throw ValidationError("SphereMode: |m| <= n required", "m");
        if (!(r > 0)) throw ValidationError("SphereMode: radius must be > 0", "r");
    }
};

enum class CurlKind { curlS, curlcurlS };

// Exact curl S^k[phi_{l,n}^m](x) and curl curl S^k[phi_{l,n}^m](x) for the
// sphere |y| = r. Interior and exterior closed forms from the multipole
// expansion of the dyadic Green's function; the exterior l = 2 signs are
// the ones consistent with div S[phi_2] = 0 and the static limit.
inline CVec3 exact_sphere_potential(const SphereMode& md, double k, const Vec3& x, CurlKind which)
{
    md.check();
    if (!(k > 0)) throw ValidationError("exact_sphere_potential: k must be > 0", "k");
    double rp = x.norm(), r = md.r;
    if (std::abs(rp - r) < 1e-14 * r) throw ValidationError("exact_sphere_potential: |x| = r", "x");
    int n = md.n;
    Vec3 xh = x / rp;
    CVec3 p1 = vector_sph({1, n, md.m}, xh), p2 = vector_sph({2, n, md.m}, xh);
    CVec3 rad = xh.cast<cplx>() * ynm(n, md.m, xh);
    double s = std::sqrt(n * (n + 1.0));
    const cplx ik = I1 * k;
    bool ext = rp > r;
    // inner / outer radial arguments
    double zi = k * (ext ? r : rp), zo = k * (ext ? rp : r);
    cplx j = sph_j(n, zi), J = radial({RadialTag::composite_J, n}, zi);
    cplx h = sph_h1(n, zo), H = radial({RadialTag::composite_H, n}, zo);
    if (md.l == 1) {
        if (which == CurlKind::curlS) return ik * r * (ext ? h * J : j * H) * p2;
        // exterior: -(ikr/r') H(kr') J(kr) phi1 - (ikr s/r') h(kr') J(kr) Y x
        // interior: -(ikr/r') J(kr') H(kr) phi1 - (ikr s/r') j(kr') H(kr) Y x
        if (ext) return -(ik * r / rp) * H * J * p1 - (ik * r * s / rp) * h * J * rad;
        return -(ik * r / rp) * J * H * p1 - (ik * r * s / rp) * j * H * rad;
    }
    if (which == CurlKind::curlS) {
        if (ext) return (ik * r * r / rp) * H * j * p1 + (ik * r * r * s / rp) * h * j * rad;
        return (ik * r * r / rp) * J * h * p1 + (ik * r * r * s / rp) * j * h * rad;
    }
    return -ik * k * k * r * r * h * j * p2;
}

// Sum over a sphere density given as vector-harmonic coefficients
struct SphereDensity {
    double r = 1.0;
    std::vector<std::pair<SphereMode, cplx>> terms;
};

inline CVec3 exact_sphere_potential(const SphereDensity& d, double k, const Vec3& x, CurlKind which)
{
    CVec3 s = CVec3::Zero();
    for (const auto& [md, c] : d.terms) {
        SphereMode m2 = md;
        m2.r = d.r;
        s += c * exact_sphere_potential(m2, k, x, which);
    }
    return s;
}

// ---------------------------------------------------------------------------
// TE / TM multipoles
// ---------------------------------------------------------------------------
enum class MultipoleKind { TE_ext, TM_ext, TE_int, TM_int };

struct EH {
    CVec3 E = CVec3::Zero(), H = CVec3::Zero();
};

// E^{TE} = -sqrt(n(n+1)) z_n(k|x|) phi_2 and its analytic curl
inline EH multipole(MultipoleKind kind, int n, int m, double k, cplx eps, cplx mu, double omega, const Vec3& x)
{
    if (n < 1 || std::abs(m) > n) throw ValidationError("multipole: need n >= 1, |m| <= n", "n");
    double rr = x.norm();
    if (!(rr > 0)) throw ValidationError("multipole: x = 0", "x");
    Vec3 xh = x / rr;
    bool ext = kind == MultipoleKind::TE_ext || kind == MultipoleKind::TM_ext;
    double z = k * rr, s = std::sqrt(n * (n + 1.0));
    cplx zn = ext ? sph_h1(n, z) : cplx(sph_j(n, z));
    cplx Zn = radial({ext ? RadialTag::composite_H : RadialTag::composite_J, n}, z);
    CVec3 p1 = vector_sph({1, n, m}, xh), p2 = vector_sph({2, n, m}, xh);
    CVec3 ETE = -s * zn * p2;
    CVec3 curlETE = (s / rr) * Zn * p1 + (n * (n + 1.0) / rr) * zn * ynm(n, m, xh) * xh.cast<cplx>();
    EH out;
    if (kind == MultipoleKind::TE_ext || kind == MultipoleKind::TE_int) {
        out.E = ETE;
        out.H = -(I1 / (omega * mu)) * curlETE;
    } else {
        out.E = (I1 / (omega * eps)) * curlETE;
        out.H = ETE;
    }
    return out;
}

// central-difference curl of a vector field
template <class F>
CVec3 fd_curl(F&& f, const Vec3& x, double h)
{
    CVec3 d[3][2];
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        d[a][0] = f(x - e);
        d[a][1] = f(x + e);
    }
    auto D = [&](int comp, int dir) { return (d[dir][1][comp] - d[dir][0][comp]) / (2 * h); };
    return CVec3(D(2, 1) - D(1, 2), D(0, 2) - D(2, 0), D(1, 0) - D(0, 1));
}

// ---------------------------------------------------------------------------
// Sphere spectrum relation: {+-1/(2(2n+1))}_{n>=1} = (-sigma(K*) u sigma(K*)) \ {1/2}
// ---------------------------------------------------------------------------
inline bool sphere_spectrum_relation(int n_max)
{
    std::vector<std::pair<long long, long long>> lhs, rhs;
    for (int n = 1; n <= n_max; ++n)
        for (int l : {1, 2}) {
            Rational q = sphere_mnp_eigenvalue_exact(l, n);
            lhs.push_back({q.num, q.den});
        }
    for (int n = 0; n <= n_max; ++n) {
        Rational q = sphere_np_eigenvalue_exact(n);
        for (Rational v : {q, -q})
            if (v != Rational(1, 2)) rhs.push_back({v.num, v.den});
    }
    // -1/2 (n = 0 of -sigma) has no MNP counterpart on the tangential spaces
    rhs.erase(std::remove(rhs.begin(), rhs.end(), std::make_pair(-1LL, 2LL)), rhs.end());
    std::sort(lhs.begin(), lhs.end());
    std::sort(rhs.begin(), rhs.end());
    return lhs == rhs;
}

// ---------------------------------------------------------------------------
// Oracle suite: the 8 closed forms (l = 1, 2; curl S, curl curl S; inside,
// outside) against direct quadrature, worst relative error over n <= n_max
// ---------------------------------------------------------------------------
struct OracleResult {
    int l = 0;
    CurlKind kind = CurlKind::curlS;
    bool interior = false;
    double max_rel_err = 0.0;
    bool pass = false;
    std::string name() const
    {
        return std::string(kind == CurlKind::curlS ? "curlS" : "curlcurlS") + "_phi" + std::to_string(l) +
               (interior ? "_int" : "_ext");
    }
};

inline std::vector<OracleResult> mie_oracle_suite(int n_max = 5, double k = 1.0, double r = 1.0, double tol = 1e-6,
                                                  int L_quad = 40)
{
    if (n_max < 1) throw ValidationError("mie_oracle_suite: n_max must be >= 1", "n_max");
    if (!(k > 0)) throw ValidationError("mie_oracle_suite: k must be > 0", "k");
    if (L_quad < 2 * n_max + 8) throw ValidationError("mie_oracle_suite: L_quad too small for n_max", "L_quad");
    auto g = std::make_shared<SurfaceGrid>(build_surface(sphere_radius_coeffs(r), L_quad));
    std::vector<OracleResult> out;
    for (int l : {1, 2})
        for (CurlKind ck : {CurlKind::curlS, CurlKind::curlcurlS})
            for (bool in : {true, false}) {
                OracleResult o;
                o.l = l;
                o.kind = ck;
                o.interior = in;
                out.push_back(o);
            }
    Vec3 dirs[2] = {sph_dir(1.1, 0.7), sph_dir(2.3, -1.9)};
    for (int n = 1; n <= n_max; ++n)
        for (int m : {0, n > 1 ? -2 : 1, n}) {
            for (int l : {1, 2}) {
                std::vector<CVec3> F(g->size());
                for (int q = 0; q < g->size(); ++q) F[q] = vector_sph({l, n, m}, g->pos[q].normalized());
                OffBoundaryEvaluator ev(g, F);
                for (auto& o : out) {
                    if (o.l != l) continue;
                    for (const Vec3& d : dirs) {
                        Vec3 x = (o.interior ? 0.5 : 2.0) * r * d;
                        OffKind ok = o.kind == CurlKind::curlS ? OffKind::curlS_vec : OffKind::curlcurlS_vec;
                        CVec3 a = exact_sphere_potential(SphereMode{l, n, m, r}, k, x, o.kind);
                        CVec3 b = ev.eval(x, k, ok).vec;
                        o.max_rel_err = std::max(o.max_rel_err, (a - b).norm() / b.norm());
                    }
                }
            }
        }
    for (auto& o : out) o.pass = o.max_rel_err <= tol;
    return out;
}

} // namespace mnp
