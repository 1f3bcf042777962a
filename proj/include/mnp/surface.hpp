#pragma once

#include "core.hpp"
#include "quadrature.hpp"
#include "specfun.hpp"

#include <ostream>

namespace mnp {

// ---------------------------------------------------------------------------
// Coefficient vectors
// ---------------------------------------------------------------------------
struct ShCoeffs {
    int L = 0;
    CVec c;
    bool mean_free = false;

    ShCoeffs() : c(CVec::Zero(1)) {}
    explicit ShCoeffs(int L_, bool mf = false) : L(L_), c(CVec::Zero(sh_count(L_))), mean_free(mf) {}
    ShCoeffs(int L_, CVec v, bool mf = false) : L(L_), c(std::move(v)), mean_free(mf)
    {
        if (c.size() != sh_count(L)) throw ValidationError("ShCoeffs: length must be (L+1)^2", "coeffs");
        if (mean_free) c[0] = 0.0;
    }

    cplx& at(int n, int m) { return c[sh_index(n, m)]; }
    cplx at(int n, int m) const { return c[sh_index(n, m)]; }
    int size() const { return static_cast<int>(c.size()); }

    void make_mean_free()
    {
        mean_free = true;
        c[0] = 0.0;
    }

    // pad with zeros or truncate to degree L2
    ShCoeffs resized(int L2) const
    {
        ShCoeffs r(L2, mean_free);
        int k = std::min(sh_count(L), sh_count(L2));
        r.c.head(k) = c.head(k);
        if (mean_free) r.c[0] = 0.0;
        return r;
    }

    static ShCoeffs unit(int L, int n, int m)
    {
        ShCoeffs r(L);
        r.at(n, m) = 1.0;
        return r;
    }
};

enum class Flavor { div_trace, curl_trace };

// Tangential field as a Helmholtz pair: grad_S X + vec_curl V
struct TangentField {
    ShCoeffs X;
    ShCoeffs V;
    Flavor flavor = Flavor::div_trace;

    TangentField() = default;
    TangentField(ShCoeffs x, ShCoeffs v, Flavor f = Flavor::div_trace)
        : X(std::move(x)), V(std::move(v)), flavor(f)
    {
        X.make_mean_free();
        V.make_mean_free();
    }
    static TangentField zero(int L, Flavor f = Flavor::div_trace)
    {
        return TangentField(ShCoeffs(L, true), ShCoeffs(L, true), f);
    }
    int L() const { return std::max(X.L, V.L); }
};

// ---------------------------------------------------------------------------
// Band-limited evaluation with parameter derivatives
// ---------------------------------------------------------------------------
struct ParamDerivs {
    cplx f = 0.0, ft = 0.0, fp = 0.0, ftt = 0.0, ftp = 0.0, fpp = 0.0;
};

// Ring-wise sums: for a fixed theta, F_m(theta) (and theta-derivatives) of a
// coefficient vector, for m = -L..L. Evaluating at phi then costs O(L).
struct RingSums {
    int L = 0;
    std::vector<cplx> A, At, Att; // index m + L

    ParamDerivs at(double phi, bool second) const
    {
        ParamDerivs d;
        for (int m = -L; m <= L; ++m) {
            cplx e = std::polar(1.0, m * phi);
            cplx a = A[m + L] * e, at = At[m + L] * e;
            d.f += a;
            d.ft += at;
            d.fp += cplx(0.0, m) * a;
            if (second) {
                d.ftt += Att[m + L] * e;
                d.ftp += cplx(0.0, m) * at;
                d.fpp += -double(m) * m * a;
            }
        }
        return d;
    }
};

inline RingSums ring_sums(const CVec& c, int L, const LegendreTable& t, bool second)
{
    RingSums r;
    r.L = L;
    r.A.assign(2 * L + 1, 0.0);
    r.At.assign(2 * L + 1, 0.0);
    if (second) r.Att.assign(2 * L + 1, 0.0);
    for (int n = 0; n <= L; ++n)
        for (int m = 0; m <= n; ++m) {
            int k = sh_index(n, m);
            cplx cp = c[sh_index(n, m)];
            r.A[L + m] += cp * t.P[k];
            r.At[L + m] += cp * t.dP[k];
            if (second) r.Att[L + m] += cp * t.d2P[k];
            if (m > 0) {
                double sg = (m % 2) ? -1.0 : 1.0;
                cplx cn = sg * c[sh_index(n, -m)];
                r.A[L - m] += cn * t.P[k];
                r.At[L - m] += cn * t.dP[k];
                if (second) r.Att[L - m] += cn * t.d2P[k];
            }
        }
    return r;
}

// value and S^2 gradient of Re sum a Y at a direction
struct RadiusSample {
    double rho = 1.0;
    Vec3 grad = Vec3::Zero(); // grad_S rho, tangent to the unit sphere
};

inline RadiusSample eval_radius(const ShCoeffs& a, const Vec3& dir)
{
    SphFrame f = sph_frame(dir);
    LegendreTable t = legendre_table(a.L, f.ct, f.st);
    RadiusSample s;
    s.rho = 0.0;
    cplx gth = 0.0, gph = 0.0;
    for (int n = 0; n <= a.L; ++n)
        for (int m = -n; m <= n; ++m) {
            cplx c = a.at(n, m);
            if (c == 0.0) continue;
            s.rho += (c * ynm_from(t, n, m, f.phi)).real();
            auto [yt, yp] = ynm_grad_from(t, n, m, f.phi);
            gth += c * yt;
            gph += c * yp;
        }
    s.grad = gth.real() * f.eth + gph.real() * f.eph;
    return s;
}

// ---------------------------------------------------------------------------
// Surface grid
// ---------------------------------------------------------------------------
struct SurfaceGrid {
    ShCoeffs radius_coeffs;
    int L_geo = 0;
    int L_quad = 0;
    int nth = 0, nph = 0;
    std::vector<double> theta, ct, st, wgl, phi;

    // per node, index = i * nph + k
    std::vector<Vec3> pos, normal, xt, xp, grad_rho;
    std::vector<double> rho, jac, area_w, sphere_w;
    double h_max = 0.0;
    std::uint64_t id = 0;

    int size() const { return nth * nph; }
    int node(int i, int k) const { return i * nph + k; }
    Vec3 dir(int q) const
    {
        int i = q / nph, k = q % nph;
        return Vec3(st[i] * std::cos(phi[k]), st[i] * std::sin(phi[k]), ct[i]);
    }
    // first fundamental form in (theta, phi)
    Eigen::Matrix2d metric(int q) const
    {
        Eigen::Matrix2d g;
        g(0, 0) = xt[q].dot(xt[q]);
        g(0, 1) = g(1, 0) = xt[q].dot(xp[q]);
        g(1, 1) = xp[q].dot(xp[q]);
        return g;
    }
    double total_area() const
    {
        double s = 0.0;
        for (double w : area_w) s += w;
        return s;
    }
    bool is_sphere() const
    {
        for (int j = 1; j < radius_coeffs.size(); ++j)
            if (std::abs(radius_coeffs.c[j]) > 0.0) return false;
        return true;
    }
    double sphere_radius() const { return radius_coeffs.c[0].real() / std::sqrt(4.0 * pi); }
};

inline ShCoeffs sphere_radius_coeffs(double r)
{
    ShCoeffs a(0);
    a.at(0, 0) = r * std::sqrt(4.0 * pi);
    return a;
}

// rho = r0 + eps Re Y_n^m
inline ShCoeffs perturbed_radius_coeffs(double r0, double eps, int n, int m)
{
    ShCoeffs a(std::max(n, 0));
    a.at(0, 0) = r0 * std::sqrt(4.0 * pi);
    a.at(n, m) += eps;
    return a;
}

inline SurfaceGrid build_surface(const ShCoeffs& radius_coeffs, int L_quad)
{
    if (L_quad < 0) throw ValidationError("build_surface: L_quad must be >= 0", "L_quad");
    int L_geo = 0;
    for (int n = 0; n <= radius_coeffs.L; ++n)
        for (int m = -n; m <= n; ++m)
            if (std::abs(radius_coeffs.at(n, m)) > 0.0) L_geo = n;
    if (L_quad < L_geo)
        throw ResolutionError("build_surface: L_quad (" + std::to_string(L_quad) +
                              ") below the radius degree (" + std::to_string(L_geo) + ")");

    SurfaceGrid g;
    g.radius_coeffs = radius_coeffs.resized(L_geo);
    g.radius_coeffs.mean_free = false;
    g.L_geo = L_geo;
    g.L_quad = L_quad;
    g.nth = 2 * L_quad + 2;
    g.nph = 2 * L_quad + 2;
    GaussRule gl = gauss_legendre(g.nth);
    g.theta.resize(g.nth);
    g.ct.resize(g.nth);
    g.st.resize(g.nth);
    g.wgl = gl.w;
    for (int i = 0; i < g.nth; ++i) {
        // descending cos -> ascending theta
        double x = gl.x[g.nth - 1 - i];
        g.wgl[i] = gl.w[g.nth - 1 - i];
        g.ct[i] = x;
        g.st[i] = std::sqrt(std::max(0.0, 1.0 - x * x));
        g.theta[i] = std::acos(x);
    }
    g.phi.resize(g.nph);
    for (int k = 0; k < g.nph; ++k) g.phi[k] = 2.0 * pi * k / g.nph;

    int N = g.size();
    g.pos.resize(N);
    g.normal.resize(N);
    g.xt.resize(N);
    g.xp.resize(N);
    g.grad_rho.resize(N);
    g.rho.resize(N);
    g.jac.resize(N);
    g.area_w.resize(N);
    g.sphere_w.resize(N);
    double dphi = 2.0 * pi / g.nph;
    std::vector<int> bad(g.nth, 0);

    parallel_for(g.nth, [&](int i) {
        LegendreTable t = legendre_table(L_geo, g.ct[i], g.st[i]);
        RingSums rs = ring_sums(g.radius_coeffs.c, L_geo, t, false);
        double c = g.ct[i], s = g.st[i];
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            ParamDerivs d = rs.at(g.phi[k], false);
            double r = d.f.real(), rt = d.ft.real(), rp = d.fp.real();
            double cp = std::cos(g.phi[k]), sp = std::sin(g.phi[k]);
            Vec3 rh(s * cp, s * sp, c), eth(c * cp, c * sp, -s), eph(-sp, cp, 0.0);
            if (!(r > 0.0)) bad[i] = 1;
            g.rho[q] = r;
            g.pos[q] = r * rh;
            g.xt[q] = rt * rh + r * eth;
            g.xp[q] = rp * rh + r * s * eph;
            g.grad_rho[q] = rt * eth + (rp / s) * eph;
            Vec3 nn = g.xt[q].cross(g.xp[q]);
            double a = nn.norm();
            g.normal[q] = nn / a;
            g.jac[q] = a / s;
            g.sphere_w[q] = g.wgl[i] * dphi;
            g.area_w[q] = g.sphere_w[q] * g.jac[q];
        }
    });
    for (int i = 0; i < g.nth; ++i)
        if (bad[i]) throw StarShapeError("build_surface: radius is not positive at every node");

    // largest distance between neighbouring nodes, used by the off-boundary guard
    double h = 0.0;
    for (int i = 0; i < g.nth; ++i)
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            h = std::max(h, (g.pos[q] - g.pos[g.node(i, (k + 1) % g.nph)]).norm());
            if (i + 1 < g.nth) h = std::max(h, (g.pos[q] - g.pos[g.node(i + 1, k)]).norm());
        }
    g.h_max = h;

    // cheap content id: FNV-1a over the radius coefficients and L_quad
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t j = 0; j < n; ++j) {
            hash ^= b[j];
            hash *= 1099511628211ULL;
        }
    };
    mix(g.radius_coeffs.c.data(), sizeof(cplx) * g.radius_coeffs.c.size());
    mix(&L_quad, sizeof(int));
    g.id = hash;
    return g;
}

// ---------------------------------------------------------------------------
// Transforms (harmonics of the parameter sphere)
// ---------------------------------------------------------------------------
inline void check_transform_degree(const SurfaceGrid& g, int L)
{
    if (L < 0) throw ValidationError("transform degree must be >= 0", "L");
    if (L > g.L_quad)
        throw ResolutionError("degree " + std::to_string(L) + " exceeds grid exactness L_quad = " +
                              std::to_string(g.L_quad));
}

inline ShCoeffs sh_analysis(const CVec& values, const SurfaceGrid& g, int L)
{
    check_transform_degree(g, L);
    if (values.size() != g.size()) throw ValidationError("sh_analysis: one value per node required", "node_values");
    // azimuthal DFT on each ring, then Legendre projection
    std::vector<CVec> F(g.nth);
    CMat E(g.nph, 2 * L + 1);
    for (int k = 0; k < g.nph; ++k)
        for (int m = -L; m <= L; ++m) E(k, m + L) = std::polar(1.0, -m * g.phi[k]);
    std::vector<CVec> partial(g.nth);
    parallel_for(g.nth, [&](int i) {
        CVec row = values.segment(i * g.nph, g.nph);
        CVec Fm = E.transpose() * row * (2.0 * pi / g.nph) * g.wgl[i];
        LegendreTable t = legendre_table(L, g.ct[i], g.st[i]);
        CVec out = CVec::Zero(sh_count(L));
        for (int n = 0; n <= L; ++n)
            for (int m = 0; m <= n; ++m) {
                double p = t.P[sh_index(n, m)];
                out[sh_index(n, m)] = p * Fm[L + m];
                if (m > 0) out[sh_index(n, -m)] = ((m % 2) ? -1.0 : 1.0) * p * Fm[L - m];
            }
        partial[i] = std::move(out);
    });
    ShCoeffs r(L);
    for (int i = 0; i < g.nth; ++i) r.c += partial[i];
    return r;
}

inline ShCoeffs sh_analysis(const RVec& values, const SurfaceGrid& g, int L)
{
    return sh_analysis(CVec(values.cast<cplx>()), g, L);
}

inline CVec sh_synthesis(const ShCoeffs& a, const SurfaceGrid& g)
{
    check_transform_degree(g, a.L);
    CVec out(g.size());
    parallel_for(g.nth, [&](int i) {
        LegendreTable t = legendre_table(a.L, g.ct[i], g.st[i]);
        RingSums rs = ring_sums(a.c, a.L, t, false);
        for (int k = 0; k < g.nph; ++k) {
            cplx s = 0.0;
            for (int m = -a.L; m <= a.L; ++m) s += rs.A[m + a.L] * std::polar(1.0, m * g.phi[k]);
            out[g.node(i, k)] = s;
        }
    });
    return out;
}

// Basis matrix: Y(q, j) = Y_j at node q, j < (L+1)^2
inline CMat basis_matrix(const SurfaceGrid& g, int L)
{
    check_transform_degree(g, L);
    int D = sh_count(L);
    CMat Y(g.size(), D);
    parallel_for(g.nth, [&](int i) {
        LegendreTable t = legendre_table(L, g.ct[i], g.st[i]);
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            for (int n = 0; n <= L; ++n)
                for (int m = -n; m <= n; ++m) Y(q, sh_index(n, m)) = ynm_from(t, n, m, g.phi[k]);
        }
    });
    return Y;
}

// Integral over the surface against the area weights
inline cplx surface_integral(const CVec& f, const SurfaceGrid& g)
{
    cplx s = 0.0;
    for (int q = 0; q < g.size(); ++q) s += g.area_w[q] * f[q];
    return s;
}

// ---------------------------------------------------------------------------
// Surface differential operators from the parametrization
// ---------------------------------------------------------------------------
enum class DiffKind { grad, vec_curl, scal_curl, div, laplace_beltrami };

struct NodeGeometry2 {
    Vec3 xt, xp, xtt, xtp, xpp;
};

// second-order geometry at a node, recomputed from the radius coefficients
inline NodeGeometry2 node_geometry2(const SurfaceGrid& g, int i, const RingSums& rs, int k)
{
    double c = g.ct[i], s = g.st[i];
    double cp = std::cos(g.phi[k]), sp = std::sin(g.phi[k]);
    ParamDerivs d = rs.at(g.phi[k], true);
    double r = d.f.real(), rt = d.ft.real(), rp = d.fp.real();
    double rtt = d.ftt.real(), rtp = d.ftp.real(), rpp = d.fpp.real();
    Vec3 R(s * cp, s * sp, c);
    Vec3 Rt(c * cp, c * sp, -s), Rp(-s * sp, s * cp, 0.0);
    Vec3 Rtt = -R, Rtp(-c * sp, c * cp, 0.0), Rpp(-s * cp, -s * sp, 0.0);
    NodeGeometry2 o;
    o.xt = rt * R + r * Rt;
    o.xp = rp * R + r * Rp;
    o.xtt = rtt * R + 2.0 * rt * Rt + r * Rtt;
    o.xtp = rtp * R + rt * Rp + rp * Rt + r * Rtp;
    o.xpp = rpp * R + 2.0 * rp * Rp + r * Rpp;
    return o;
}

struct NodeFields {
    std::vector<CVec3> vec;
    CVec scal;
};

namespace detail {

struct LocalCalc {
    Eigen::Matrix2d gm, gi;
    double sqg;
    Vec3 nu;
    // Christoffel symbols Gamma^k_ij
    double Gam[2][2][2];
    // derivatives of the metric d_l g_ij and of sqrt(g)
    double dg[2][2][2];
    double dsqg[2];

    explicit LocalCalc(const NodeGeometry2& G)
    {
        Vec3 x[2] = {G.xt, G.xp};
        Vec3 xx[2][2] = {{G.xtt, G.xtp}, {G.xtp, G.xpp}};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) gm(a, b) = x[a].dot(x[b]);
        gi = gm.inverse();
        Vec3 cr = G.xt.cross(G.xp);
        sqg = cr.norm();
        nu = cr / sqg;
        for (int kk = 0; kk < 2; ++kk)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    double s = 0.0;
                    for (int l = 0; l < 2; ++l) s += gi(kk, l) * x[l].dot(xx[a][b]);
                    Gam[kk][a][b] = s;
                }
        for (int l = 0; l < 2; ++l)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) dg[l][a][b] = xx[a][l].dot(x[b]) + x[a].dot(xx[b][l]);
        // d sqrt(det g) = sqrt(g)/2 * tr(g^{-1} dg)
        for (int l = 0; l < 2; ++l) {
            double tr = 0.0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) tr += gi(a, b) * dg[l][b][a];
            dsqg[l] = 0.5 * sqg * tr;
        }
    }

    CVec3 grad(const ParamDerivs& u, const Vec3& xt, const Vec3& xp) const
    {
        cplx a = gi(0, 0) * u.ft + gi(0, 1) * u.fp;
        cplx b = gi(1, 0) * u.ft + gi(1, 1) * u.fp;
        return xt.cast<cplx>() * a + xp.cast<cplx>() * b;
    }

    // vec_curl u = grad u x nu = (u_phi x_theta - u_theta x_phi) / sqrt(g)
    CVec3 vcurl(const ParamDerivs& u, const Vec3& xt, const Vec3& xp) const
    {
        return (xt.cast<cplx>() * u.fp - xp.cast<cplx>() * u.ft) / sqg;
    }

    cplx laplace(const ParamDerivs& u) const
    {
        cplx d[2] = {u.ft, u.fp};
        cplx dd[2][2] = {{u.ftt, u.ftp}, {u.ftp, u.fpp}};
        cplx s = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                cplx h = dd[a][b];
                for (int kk = 0; kk < 2; ++kk) h -= Gam[kk][a][b] * d[kk];
                s += gi(a, b) * h;
            }
        return s;
    }

    // div of vec_curl V in divergence form: (1/sqg)[d_t(V_p) + d_p(-V_t)]
    cplx div_vcurl(const ParamDerivs& v) const { return (v.ftp - v.ftp) / sqg; }

    // scalar curl of grad X: (1/sqg)[d_t(X_p) - d_p(X_t)]
    cplx curl_grad(const ParamDerivs& x) const { return (x.ftp - x.ftp) / sqg; }

    // scalar curl of vec_curl V from covariant components:
    //   F_t = (V_p g_tt - V_t g_tp)/sqg, F_p = (V_p g_tp - V_t g_pp)/sqg
    //   curl F = (d_t F_p - d_p F_t)/sqg
    cplx curl_vcurl(const ParamDerivs& v) const
    {
        // numerators N_t, N_p and their derivatives
        cplx Np = v.fp * gm(0, 1) - v.ft * gm(1, 1);
        cplx Nt = v.fp * gm(0, 0) - v.ft * gm(0, 1);
        cplx dNp_t = v.ftp * gm(0, 1) + v.fp * dg[0][0][1] - v.ftt * gm(1, 1) - v.ft * dg[0][1][1];
        cplx dNt_p = v.fpp * gm(0, 0) + v.fp * dg[1][0][0] - v.ftp * gm(0, 1) - v.ft * dg[1][0][1];
        cplx dFp_t = dNp_t / sqg - Np * dsqg[0] / (sqg * sqg);
        cplx dFt_p = dNt_p / sqg - Nt * dsqg[1] / (sqg * sqg);
        return (dFp_t - dFt_p) / sqg;
    }

    // divergence of grad X in divergence form: (1/sqg) d_a (sqg g^{ab} X_b)
    cplx div_grad(const ParamDerivs& x) const
    {
        cplx d[2] = {x.ft, x.fp};
        cplx dd[2][2] = {{x.ftt, x.ftp}, {x.ftp, x.fpp}};
        cplx s = 0.0;
        for (int a = 0; a < 2; ++a) {
            // d_a (sqg g^{ab} X_b)
            for (int b = 0; b < 2; ++b) {
                // d_a g^{ab} = -g^{ac} (d_a g_cd) g^{db}
                double dgi = 0.0;
                for (int c2 = 0; c2 < 2; ++c2)
                    for (int d2 = 0; d2 < 2; ++d2) dgi -= gi(a, c2) * dg[a][c2][d2] * gi(d2, b);
                s += dsqg[a] * gi(a, b) * d[b] + sqg * dgi * d[b] + sqg * gi(a, b) * dd[a][b];
            }
        }
        return s / sqg;
    }
};

} // namespace detail

// Apply a surface differential operator. Scalar input (ShCoeffs) accepts
// grad, vec_curl, laplace_beltrami; TangentField input accepts div, scal_curl
// (and grad/vec_curl are rejected).
inline NodeFields surface_diff(DiffKind kind, const ShCoeffs& u, const SurfaceGrid& g)
{
    if (kind == DiffKind::div || kind == DiffKind::scal_curl)
        throw ValidationError("surface_diff: div/scal_curl need a tangent field", "kind");
    check_transform_degree(g, u.L);
    NodeFields out;
    if (kind == DiffKind::laplace_beltrami) out.scal.resize(g.size());
    else out.vec.resize(g.size());
    parallel_for(g.nth, [&](int i) {
        bool second = kind == DiffKind::laplace_beltrami;
        LegendreTable tu = legendre_table(u.L, g.ct[i], g.st[i], second);
        RingSums ru = ring_sums(u.c, u.L, tu, second);
        LegendreTable tr = legendre_table(g.L_geo, g.ct[i], g.st[i], true);
        RingSums rr = ring_sums(g.radius_coeffs.c, g.L_geo, tr, true);
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            NodeGeometry2 G = node_geometry2(g, i, rr, k);
            detail::LocalCalc lc(G);
            ParamDerivs d = ru.at(g.phi[k], second);
            switch (kind) {
            case DiffKind::grad: out.vec[q] = lc.grad(d, G.xt, G.xp); break;
            case DiffKind::vec_curl: out.vec[q] = lc.vcurl(d, G.xt, G.xp); break;
            case DiffKind::laplace_beltrami: out.scal[q] = lc.laplace(d); break;
            default: break;
            }
        }
    });
    return out;
}

inline NodeFields surface_diff(DiffKind kind, const TangentField& f, const SurfaceGrid& g)
{
    int L = f.L();
    check_transform_degree(g, L);
    NodeFields out;
    ShCoeffs X = f.X.resized(L), V = f.V.resized(L);
    bool scalar_out = (kind == DiffKind::div || kind == DiffKind::scal_curl);
    if (kind == DiffKind::laplace_beltrami)
        throw ValidationError("surface_diff: laplace_beltrami needs a scalar input", "kind");
    if (scalar_out) out.scal.resize(g.size());
    else out.vec.resize(g.size());
    parallel_for(g.nth, [&](int i) {
        LegendreTable tu = legendre_table(L, g.ct[i], g.st[i], true);
        RingSums rx = ring_sums(X.c, L, tu, true);
        RingSums rv = ring_sums(V.c, L, tu, true);
        LegendreTable tr = legendre_table(g.L_geo, g.ct[i], g.st[i], true);
        RingSums rr = ring_sums(g.radius_coeffs.c, g.L_geo, tr, true);
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            NodeGeometry2 G = node_geometry2(g, i, rr, k);
            detail::LocalCalc lc(G);
            ParamDerivs dx = rx.at(g.phi[k], true), dv = rv.at(g.phi[k], true);
            switch (kind) {
            case DiffKind::div: out.scal[q] = lc.div_grad(dx) + lc.div_vcurl(dv); break;
            case DiffKind::scal_curl: out.scal[q] = lc.curl_grad(dx) + lc.curl_vcurl(dv); break;
            case DiffKind::grad:
            case DiffKind::vec_curl:
                // the field itself
                out.vec[q] = lc.grad(dx, G.xt, G.xp) + lc.vcurl(dv, G.xt, G.xp);
                break;
            default: break;
            }
        }
    });
    return out;
}

// Node values of a tangent field
inline std::vector<CVec3> tangent_field_values(const TangentField& f, const SurfaceGrid& g)
{
    return surface_diff(DiffKind::grad, f, g).vec;
}

// Weak projections onto degree-L harmonics: <F, grad Y_i> and <F, vec_curl Y_i>
// in L^2(boundary), i.e. sum_q w_q F(q) . conj(basis(q))
struct WeakBasis {
    int L = 0;
    CMat grad[3]; // node x coeff, Cartesian component c
    CMat curl[3];
};

inline WeakBasis weak_basis(const SurfaceGrid& g, int L)
{
    check_transform_degree(g, L);
    int D = sh_count(L);
    WeakBasis wb;
    wb.L = L;
    for (int c = 0; c < 3; ++c) {
        wb.grad[c] = CMat::Zero(g.size(), D);
        wb.curl[c] = CMat::Zero(g.size(), D);
    }
    parallel_for(g.nth, [&](int i) {
        LegendreTable t = legendre_table(L, g.ct[i], g.st[i]);
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            const Vec3& xt = g.xt[q];
            const Vec3& xp = g.xp[q];
            Eigen::Matrix2d gm;
            gm << xt.dot(xt), xt.dot(xp), xt.dot(xp), xp.dot(xp);
            Eigen::Matrix2d gi = gm.inverse();
            double sqg = xt.cross(xp).norm();
            double s = g.st[i];
            for (int n = 1; n <= L; ++n)
                for (int m = -n; m <= n; ++m) {
                    auto [gth, gph] = ynm_grad_from(t, n, m, g.phi[k]);
                    // parameter derivatives: Y_t = gth, Y_p = s * gph
                    cplx yt = gth, yp = s * gph;
                    cplx a = gi(0, 0) * yt + gi(0, 1) * yp;
                    cplx b = gi(1, 0) * yt + gi(1, 1) * yp;
                    CVec3 gr = xt.cast<cplx>() * a + xp.cast<cplx>() * b;
                    CVec3 cu = (xt.cast<cplx>() * yp - xp.cast<cplx>() * yt) / sqg;
                    int j = sh_index(n, m);
                    for (int c = 0; c < 3; ++c) {
                        wb.grad[c](q, j) = gr[c];
                        wb.curl[c](q, j) = cu[c];
                    }
                }
        }
    });
    return wb;
}

// tangential components of node vectors, as three stacked columns
inline std::array<CVec, 3> split_components(const std::vector<CVec3>& F)
{
    std::array<CVec, 3> out;
    for (int c = 0; c < 3; ++c) {
        out[c].resize(static_cast<int>(F.size()));
        for (size_t q = 0; q < F.size(); ++q) out[c][q] = F[q][c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------
inline double tubular_distance(const Vec3& x, const SurfaceGrid& g)
{
    double d = std::numeric_limits<double>::infinity();
    for (const Vec3& p : g.pos) d = std::min(d, (x - p).squaredNorm());
    return std::sqrt(d);
}

inline void write_grid_csv(const SurfaceGrid& g, std::ostream& os)
{
    os << "node,theta,phi,x,y,z,nx,ny,nz,w\n";
    char buf[512];
    for (int i = 0; i < g.nth; ++i)
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            const Vec3& p = g.pos[q];
            const Vec3& n = g.normal[q];
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", q,
                          g.theta[i], g.phi[k], p.x(), p.y(), p.z(), n.x(), n.y(), n.z(), g.area_w[q]);
            os << buf;
        }
}

} // namespace mnp
