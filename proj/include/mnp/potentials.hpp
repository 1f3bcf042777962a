#pragma once

#include "surface.hpp"

#include <Eigen/LU>
#include <memory>

namespace mnp {

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

// Helmholtz fundamental solution G(k; x, y) = -e^{ik|x-y|} / (4 pi |x-y|)
inline cplx helmholtz_G(cplx k, double R) { return -std::exp(I1 * k * R) / (4.0 * pi * R); }

// radial derivatives g'(R), g''(R) of G
inline cplx helmholtz_dG(cplx k, double R) { return -(I1 * k * R - 1.0) * std::exp(I1 * k * R) / (4.0 * pi * R * R); }
inline cplx helmholtz_d2G(cplx k, double R)
{
    cplx ik = I1 * k;
    return -std::exp(ik * R) * (ik * ik / R - 2.0 * ik / (R * R) + 2.0 / (R * R * R)) / (4.0 * pi);
}

// ---------------------------------------------------------------------------
// Materials
// ---------------------------------------------------------------------------
struct MaterialConfig {
    cplx eps_e = 1.0, mu_e = 1.0, eps_c = -2.0, mu_c = -2.0;
    double omega = 1.0;
    double delta = 0.1;

    // eps_e = mu_e = 1, eps_c = mu_c = -tau
    static MaterialConfig preset(double tau, double omega = 1.0, double delta = 0.1)
    {
        if (!(tau > 0.0)) throw ValidationError("materials: tau must be > 0", "tau");
        if (tau == 1.0) throw ValidationError("materials: tau = 1 is excluded", "tau");
        if (!(omega > 0.0)) throw ValidationError("materials: omega must be > 0", "omega");
        if (!(delta > 0.0)) throw ValidationError("materials: delta must be > 0", "delta");
        MaterialConfig m;
        m.eps_c = m.mu_c = -tau;
        m.omega = omega;
        m.delta = delta;
        return m;
    }
    cplx k_e() const { return omega * std::sqrt(eps_e * mu_e); }
    cplx k_c() const { return omega * std::sqrt(eps_c * mu_c); }
};

// ---------------------------------------------------------------------------
// Batched transforms on the grid
// ---------------------------------------------------------------------------

// Columns of `vals` (node x ncols) -> parameter-sphere coefficients up to L,
// with optional extra node weights (e.g. the Jacobian, giving L^2 Galerkin rows).
inline CMat analysis_batch(const CMat& vals, const SurfaceGrid& g, int L, const std::vector<double>* extra = nullptr)
{
    check_transform_degree(g, L);
    int nc = static_cast<int>(vals.cols());
    int D = sh_count(L);
    CMat E(2 * L + 1, g.nph);
    for (int k = 0; k < g.nph; ++k)
        for (int m = -L; m <= L; ++m) E(m + L, k) = std::polar(2.0 * pi / g.nph, -m * g.phi[k]);
    CMat out = CMat::Zero(D, nc);
    std::vector<CMat> part(thread_count());
    for (auto& p : part) p = CMat::Zero(D, nc);
    int nt = thread_count();
    parallel_for(nt, [&](int t) {
        CMat block(g.nph, nc);
        for (int i = t; i < g.nth; i += nt) {
            for (int k = 0; k < g.nph; ++k) {
                int q = g.node(i, k);
                double w = extra ? (*extra)[q] : 1.0;
                block.row(k) = vals.row(q) * w;
            }
            CMat F = E * block; // (2L+1) x nc
            LegendreTable tb = legendre_table(L, g.ct[i], g.st[i]);
            for (int n = 0; n <= L; ++n)
                for (int m = 0; m <= n; ++m) {
                    double p = tb.P[sh_index(n, m)] * g.wgl[i];
                    part[t].row(sh_index(n, m)) += p * F.row(L + m);
                    if (m > 0) part[t].row(sh_index(n, -m)) += ((m % 2) ? -p : p) * F.row(L - m);
                }
        }
    });
    for (auto& p : part) out += p;
    return out;
}

// Node values of all degree-<=L harmonics and their surface derivatives
struct BasisNodes {
    int L = 0;
    CMat Y;      // node x D
    CMat lap;    // Laplace-Beltrami of Y
    CMat gr[3];  // surface gradient, Cartesian components
    CMat cu[3];  // vec_curl
};

inline BasisNodes basis_nodes(const SurfaceGrid& g, int L, bool with_vectors, bool with_lap)
{
    check_transform_degree(g, L);
    int D = sh_count(L), N = g.size();
    BasisNodes b;
    b.L = L;
    b.Y.resize(N, D);
    if (with_lap) b.lap.resize(N, D);
    if (with_vectors)
        for (int c = 0; c < 3; ++c) {
            b.gr[c].resize(N, D);
            b.cu[c].resize(N, D);
        }
    parallel_for(g.nth, [&](int i) {
        LegendreTable t = legendre_table(L, g.ct[i], g.st[i], with_lap);
        LegendreTable tr = legendre_table(g.L_geo, g.ct[i], g.st[i], true);
        RingSums rr = ring_sums(g.radius_coeffs.c, g.L_geo, tr, true);
        for (int k = 0; k < g.nph; ++k) {
            int q = g.node(i, k);
            NodeGeometry2 G = node_geometry2(g, i, rr, k);
            detail::LocalCalc lc(G);
            for (int n = 0; n <= L; ++n)
                for (int m = -n; m <= n; ++m) {
                    int j = sh_index(n, m);
                    int am = std::abs(m);
                    int kk = sh_index(n, am);
                    double sg = (m < 0 && (am % 2)) ? -1.0 : 1.0;
                    // Y^{-m} = (-1)^m P e^{-i m phi}; derivatives carry the same factor
                    cplx e = std::polar(1.0, m * g.phi[k]);
                    ParamDerivs d;
                    d.f = sg * t.P[kk] * e;
                    d.ft = sg * t.dP[kk] * e;
                    d.fp = cplx(0.0, m) * d.f;
                    if (with_lap) {
                        d.ftt = sg * t.d2P[kk] * e;
                        d.ftp = cplx(0.0, m) * d.ft;
                        d.fpp = -double(m) * m * d.f;
                    }
                    b.Y(q, j) = d.f;
                    if (with_lap) b.lap(q, j) = lc.laplace(d);
                    if (with_vectors) {
                        CVec3 gv = lc.grad(d, G.xt, G.xp);
                        CVec3 cv = lc.vcurl(d, G.xt, G.xp);
                        for (int c = 0; c < 3; ++c) {
                            b.gr[c](q, j) = gv[c];
                            b.cu[c](q, j) = cv[c];
                        }
                    }
                }
        }
    });
    return b;
}

// ---------------------------------------------------------------------------
// Rotated polar quadrature for the weakly singular scalar kernels.
// Around every target node the surface is parametrized in a frame whose pole
// is the target direction; Gauss-Legendre in theta' absorbs the 1/r
// singularity, the trapezoid rule handles phi'. Harmonics in the rotated
// frame are mapped back with Wigner blocks, so the basis is only ever
// evaluated on the fixed polar grid.
// ---------------------------------------------------------------------------
struct PolarConfig {
    int n_r = 0; // 0: automatic
    int n_a = 0;
};

struct PolarGrid {
    int n_r = 0, n_a = 0;
    std::vector<double> th, w; // w includes sin(theta') and the phi' step
    std::vector<Vec3> dir, eth, eph; // index i * n_a + k
    std::vector<double> phi;
};

inline PolarGrid make_polar_grid(int n_r, int n_a)
{
    PolarGrid p;
    p.n_r = n_r;
    p.n_a = n_a;
    GaussRule gl = gauss_legendre(n_r, 0.0, pi);
    p.th = gl.x;
    p.w.resize(n_r);
    for (int i = 0; i < n_r; ++i) p.w[i] = gl.w[i] * std::sin(gl.x[i]) * 2.0 * pi / n_a;
    p.phi.resize(n_a);
    for (int k = 0; k < n_a; ++k) p.phi[k] = 2.0 * pi * k / n_a;
    p.dir.resize(n_r * n_a);
    p.eth.resize(n_r * n_a);
    p.eph.resize(n_r * n_a);
    for (int i = 0; i < n_r; ++i)
        for (int k = 0; k < n_a; ++k) {
            double c = std::cos(p.th[i]), s = std::sin(p.th[i]);
            double cp = std::cos(p.phi[k]), sp = std::sin(p.phi[k]);
            p.dir[i * n_a + k] = Vec3(s * cp, s * sp, c);
            p.eth[i * n_a + k] = Vec3(c * cp, c * sp, -s);
            p.eph[i * n_a + k] = Vec3(-sp, cp, 0.0);
        }
    return p;
}

// Rotated radius: b_{n m'} = sum_m a_{nm} e^{i m phi0} T^n_{m m'}(theta0)
inline CVec rotate_coeffs(const CVec& a, int L, const std::vector<RMat>& T, double phi0)
{
    CVec b = CVec::Zero(sh_count(L));
    for (int n = 0; n <= L; ++n)
        for (int m = -n; m <= n; ++m) {
            cplx am = a[sh_index(n, m)];
            if (am == 0.0) continue;
            am *= std::polar(1.0, m * phi0);
            for (int m2 = -n; m2 <= n; ++m2) b[sh_index(n, m2)] += am * T[n](m + n, m2 + n);
        }
    return b;
}

// Harmonics (and S^2 gradients) of degree <= Lg at the polar nodes
struct PolarGeoBasis {
    int Lg = 0;
    std::vector<cplx> Y;     // node * D + j
    std::vector<CVec3> gY;   // same layout
};

inline PolarGeoBasis polar_geo_basis(const PolarGrid& p, int Lg)
{
    PolarGeoBasis b;
    b.Lg = Lg;
    int D = sh_count(Lg), Np = p.n_r * p.n_a;
    b.Y.resize(static_cast<size_t>(Np) * D);
    b.gY.resize(static_cast<size_t>(Np) * D);
    for (int i = 0; i < p.n_r; ++i) {
        LegendreTable t = legendre_table(Lg, std::cos(p.th[i]), std::sin(p.th[i]));
        for (int k = 0; k < p.n_a; ++k) {
            int q = i * p.n_a + k;
            for (int n = 0; n <= Lg; ++n)
                for (int m = -n; m <= n; ++m) {
                    int j = sh_index(n, m);
                    b.Y[static_cast<size_t>(q) * D + j] = ynm_from(t, n, m, p.phi[k]);
                    auto [gt, gp] = ynm_grad_from(t, n, m, p.phi[k]);
                    b.gY[static_cast<size_t>(q) * D + j] = p.eth[q].cast<cplx>() * gt + p.eph[q].cast<cplx>() * gp;
                }
        }
    }
    return b;
}

// radius, S^2 gradient at every polar node for a rotated coefficient vector
inline void polar_radius(const PolarGeoBasis& gb, const CVec& b, int Np, std::vector<double>& rho, std::vector<Vec3>& grad)
{
    int D = sh_count(gb.Lg);
    rho.resize(Np);
    grad.resize(Np);
    for (int q = 0; q < Np; ++q) {
        cplx r = 0.0;
        CVec3 gv = CVec3::Zero();
        for (int j = 0; j < D; ++j) {
            if (b[j] == 0.0) continue;
            r += b[j] * gb.Y[static_cast<size_t>(q) * D + j];
            gv += b[j] * gb.gY[static_cast<size_t>(q) * D + j];
        }
        rho[q] = r.real();
        grad[q] = gv.real();
    }
}

// value of Re sum b Y at the north pole of the rotated frame
inline double pole_value(const CVec& b, int Lg)
{
    double s = 0.0;
    for (int n = 0; n <= Lg; ++n) s += (b[sh_index(n, 0)] * std::sqrt((2.0 * n + 1.0) / (4.0 * pi))).real();
    return s;
}

struct ScalarNodeValues {
    CMat S, K, Ks; // node x D: (Op Y_j)(x_q)
};

inline ScalarNodeValues polar_scalar_values(const SurfaceGrid& g, int L, PolarConfig pc)
{
    int n_r = pc.n_r > 0 ? pc.n_r : L + 24;
    int n_a = pc.n_a > 0 ? pc.n_a : 2 * L + 24;
    PolarGrid pg = make_polar_grid(n_r, n_a);
    int Np = n_r * n_a;
    int Lg = g.L_geo;
    int Lw = std::max(L, Lg);
    WignerRotator W(Lw);
    PolarGeoBasis gb = polar_geo_basis(pg, Lg);
    int D = sh_count(L);

    // Legendre values at polar rings, with the ring weights folded in
    std::vector<LegendreTable> ptab(n_r);
    for (int i = 0; i < n_r; ++i) ptab[i] = legendre_table(L, std::cos(pg.th[i]), std::sin(pg.th[i]));
    RMat Cm(n_a, L + 1), Sm(n_a, L + 1);
    for (int k = 0; k < n_a; ++k)
        for (int m = 0; m <= L; ++m) {
            Cm(k, m) = std::cos(m * pg.phi[k]);
            Sm(k, m) = std::sin(m * pg.phi[k]);
        }

    ScalarNodeValues out;
    int N = g.size();
    out.S.resize(N, D);
    out.K.resize(N, D);
    out.Ks.resize(N, D);

    int nt = thread_count();
    parallel_for(nt, [&](int tid) {
        std::vector<double> rho;
        std::vector<Vec3> grad;
        RMat kv(3 * n_r, n_a);
        CMat I(3, D);
        for (int i0 = tid; i0 < g.nth; i0 += nt) {
            std::vector<RMat> T(Lw + 1);
            for (int n = 0; n <= Lw; ++n) T[n] = W.block(n, g.theta[i0]);
            for (int k0 = 0; k0 < g.nph; ++k0) {
                int q0 = g.node(i0, k0);
                double phi0 = g.phi[k0];
                CVec b = rotate_coeffs(g.radius_coeffs.c, Lg, T, phi0);
                polar_radius(gb, b, Np, rho, grad);
                double rt = pole_value(b, Lg);
                Vec3 x(0.0, 0.0, rt);
                // Q = R_z(phi0) R_y(theta0); nu in the rotated frame is Q^T nu
                double ct0 = g.ct[i0], st0 = g.st[i0], cp0 = std::cos(phi0), sp0 = std::sin(phi0);
                Eigen::Matrix3d Q;
                Q << ct0 * cp0, -sp0, st0 * cp0, ct0 * sp0, cp0, st0 * sp0, -st0, 0.0, ct0;
                Vec3 nx = Q.transpose() * g.normal[q0];
                for (int i = 0; i < n_r; ++i)
                    for (int k = 0; k < n_a; ++k) {
                        int q = i * n_a + k;
                        const Vec3& pd = pg.dir[q];
                        double r = rho[q];
                        const Vec3& gr = grad[q];
                        Vec3 y = r * pd;
                        Vec3 d = x - y;
                        double R2 = d.squaredNorm(), R = std::sqrt(R2);
                        double J = r * std::sqrt(r * r + gr.squaredNorm());
                        Vec3 nuJ = r * (r * pd - gr);
                        double w = pg.w[i] / (4.0 * pi * R);
                        kv(i, k) = -w * J;
                        kv(n_r + i, k) = w * d.dot(nx) / R2 * J;
                        kv(2 * n_r + i, k) = -w * d.dot(nuJ) / R2;
                    }
                RMat Fr = kv * Cm, Fi = kv * Sm; // (3 n_r) x (L+1)
                I.setZero();
                for (int op = 0; op < 3; ++op)
                    for (int i = 0; i < n_r; ++i) {
                        const LegendreTable& tb = ptab[i];
                        int row = op * n_r + i;
                        for (int n = 0; n <= L; ++n)
                            for (int m = 0; m <= n; ++m) {
                                double p = tb.P[sh_index(n, m)];
                                cplx F(Fr(row, m), Fi(row, m));
                                I(op, sh_index(n, m)) += p * F;
                                if (m > 0) I(op, sh_index(n, -m)) += ((m % 2) ? -p : p) * std::conj(F);
                            }
                    }
                // back to the global frame
                for (int n = 0; n <= L; ++n) {
                    int d0 = sh_index(n, -n), dn = 2 * n + 1;
                    CMat blk = I.middleCols(d0, dn) * T[n].transpose(); // 3 x dn
                    for (int m = -n; m <= n; ++m) {
                        cplx e = std::polar(1.0, m * phi0);
                        out.S(q0, d0 + m + n) = e * blk(0, m + n);
                        out.Ks(q0, d0 + m + n) = e * blk(1, m + n);
                        out.K(q0, d0 + m + n) = e * blk(2, m + n);
                    }
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Operator matrices
// ---------------------------------------------------------------------------
enum class OpKind { S, K, Kstar, Mk2, L1, L2, Sk, Block };

inline const char* op_name(OpKind k)
{
    switch (k) {
    case OpKind::S: return "S";
    case OpKind::K: return "K";
    case OpKind::Kstar: return "Kstar";
    case OpKind::Mk2: return "Mk2";
    case OpKind::L1: return "L1";
    case OpKind::L2: return "L2";
    case OpKind::Sk: return "Sk";
    case OpKind::Block: return "block";
    }
    return "?";
}

struct OperatorMatrix {
    OpKind kind = OpKind::S;
    int L = 0;
    CMat entries;
    std::uint64_t grid_id = 0;

    ShCoeffs apply(const ShCoeffs& u) const
    {
        ShCoeffs v = u.resized(L);
        return ShCoeffs(L, entries * v.c);
    }
};

struct AssemblyOptions {
    int pad = -1;        // extra degrees carried through products; -1: 0 on spheres, 12 otherwise
    int quad_extra = -1; // L_quad - L_op; -1: automatic
    PolarConfig polar;
};

// Everything the scalar reductions need, at the operator degree L_op >= L.
// Coefficient matrices (A*) act on parameter-sphere coefficients; Galerkin
// matrices (G*) hold L^2(boundary) pairings <Y_i, Op Y_j>.
struct Model {
    std::shared_ptr<const SurfaceGrid> grid;
    int L = 0, L_op = 0;
    CMat VS, VK, VKs;      // node values of S Y_j, K Y_j, K* Y_j
    CMat AS, AK, AKs;      // coefficient matrices
    CMat GS, GK, GKs, Mm;  // Galerkin / mass
    CMat St;               // stiffness <grad Y_i, grad Y_j>
    CMat AL;               // coefficients of Laplace-Beltrami Y_j
    Eigen::PartialPivLU<CMat> AS_lu;
    Eigen::PartialPivLU<CMat> AL_lu; // Laplacian on mean-free coefficients (rows/cols >= 1)
    CVec sigma;            // S^{-1} 1 (coefficients)
    double sigma_mass = 0; // <1, sigma>

    int D() const { return sh_count(L); }
    int Dop() const { return sh_count(L_op); }
    bool sphere() const { return grid->is_sphere(); }

    cplx pair(const CVec& u, const CVec& v) const { return (u.adjoint() * Mm * v)(0, 0); }

    // S^{-1} on coefficients
    CVec S_inv(const CVec& v) const { return AS_lu.solve(v); }

    // Laplace-Beltrami inverse; result has zero parameter mean. The input is
    // assumed to have zero boundary mean (row 0 is dropped).
    CVec lap_inv(const CVec& f) const
    {
        int n = Dop();
        CVec w = CVec::Zero(n);
        w.tail(n - 1) = AL_lu.solve(f.tail(n - 1));
        return w;
    }

    // pad or truncate a coefficient vector to the operator degree
    CVec lift(const CVec& v) const
    {
        CVec r = CVec::Zero(Dop());
        int k = std::min<int>(Dop(), static_cast<int>(v.size()));
        r.head(k) = v.head(k);
        return r;
    }

    // remove the sigma-weighted mean: v - <v, sigma>/<1, sigma>
    CVec P_sigma(const CVec& v) const
    {
        CVec r = v;
        cplx c = (sigma.adjoint() * Mm * v)(0, 0);
        r[0] -= std::sqrt(4.0 * pi) * c / sigma_mass;
        return r;
    }

    OperatorMatrix op(OpKind k, int deg = -1) const
    {
        int d = sh_count(deg < 0 ? L : deg);
        OperatorMatrix o;
        o.kind = k;
        o.L = deg < 0 ? L : deg;
        o.grid_id = grid->id;
        const CMat& A = (k == OpKind::S) ? AS : (k == OpKind::K) ? AK : AKs;
        if (k != OpKind::S && k != OpKind::K && k != OpKind::Kstar)
            throw ValidationError("Model::op: only S, K, Kstar live here", "kind");
        o.entries = A.topLeftCorner(d, d);
        return o;
    }
};

inline int auto_pad(const ShCoeffs& radius)
{
    for (int j = 1; j < radius.size(); ++j)
        if (std::abs(radius.c[j]) > 0.0) return 12;
    return 0;
}

inline Model build_model(const ShCoeffs& radius, int L, AssemblyOptions opt = {})
{
    if (L < 1) throw ValidationError("build_model: L must be >= 1", "L");
    Model M;
    M.L = L;
    int pad = opt.pad >= 0 ? opt.pad : auto_pad(radius);
    M.L_op = L + pad;
    int extra = opt.quad_extra >= 0 ? opt.quad_extra : (pad > 0 ? 8 : 2);
    auto g = std::make_shared<SurfaceGrid>(build_surface(radius, M.L_op + extra));
    M.grid = g;
    int Lo = M.L_op;

    ScalarNodeValues sv = polar_scalar_values(*g, Lo, opt.polar);
    M.VS = std::move(sv.S);
    M.VK = std::move(sv.K);
    M.VKs = std::move(sv.Ks);
    BasisNodes bn = basis_nodes(*g, Lo, false, true);

    int D = sh_count(Lo);
    CMat all(g->size(), 5 * D);
    all << M.VS, M.VK, M.VKs, bn.Y, bn.lap;
    CMat A = analysis_batch(all, *g, Lo);
    CMat G = analysis_batch(all, *g, Lo, &g->jac);
    M.AS = A.middleCols(0, D);
    M.AK = A.middleCols(D, D);
    M.AKs = A.middleCols(2 * D, D);
    M.AL = A.middleCols(4 * D, D);
    M.GS = G.middleCols(0, D);
    M.GK = G.middleCols(D, D);
    M.GKs = G.middleCols(2 * D, D);
    M.Mm = G.middleCols(3 * D, D);
    M.Mm = 0.5 * (M.Mm + M.Mm.adjoint()).eval();
    M.St = -G.middleCols(4 * D, D);
    M.St = 0.5 * (M.St + M.St.adjoint()).eval();

    M.AS_lu.compute(M.AS);
    M.AL_lu.compute(M.AL.bottomRightCorner(D - 1, D - 1));
    CVec one = CVec::Zero(D);
    one[0] = std::sqrt(4.0 * pi);
    M.sigma = M.AS_lu.solve(one);
    M.sigma_mass = M.pair(one, M.sigma).real();
    return M;
}

inline OperatorMatrix assemble_scalar(OpKind kind, const SurfaceGrid& grid, int L, AssemblyOptions opt = {})
{
    if (kind != OpKind::S && kind != OpKind::K && kind != OpKind::Kstar)
        throw ValidationError("assemble_scalar: kind must be S, K or Kstar", "kind");
    if (opt.pad < 0) opt.pad = 0;
    Model M = build_model(grid.radius_coeffs, L, opt);
    return M.op(kind);
}

// ---------------------------------------------------------------------------
// Scalar reductions of M, M*, N, Q
// ---------------------------------------------------------------------------

// potential of M[vec_curl V]: K[V], mean removed
inline ShCoeffs mnp_curl_apply(const ShCoeffs& V, const OperatorMatrix& K_mat)
{
    if (K_mat.kind != OpKind::K) throw ValidationError("mnp_curl_apply: operator must be K", "K_mat");
    ShCoeffs out = K_mat.apply(V);
    out.make_mean_free();
    return out;
}

// potential of M*[grad X]: -K[X], mean removed
inline ShCoeffs mnp_grad_apply(const ShCoeffs& X, const OperatorMatrix& K_mat)
{
    if (K_mat.kind != OpKind::K) throw ValidationError("mnp_grad_apply: operator must be K", "K_mat");
    ShCoeffs out = K_mat.apply(X);
    out.c = -out.c;
    out.make_mean_free();
    return out;
}

// Weak surface curl / divergence of a node field against degree-L harmonics.
// Returns L^2(boundary) Galerkin rows: <curl g, Y_i> = <g, vec_curl Y_i>,
// <div f, Y_i> = -<f, grad Y_i>.
inline CVec weak_curl(const std::vector<CVec3>& F, const SurfaceGrid& g, const BasisNodes& bn)
{
    int D = static_cast<int>(bn.Y.cols());
    CVec r = CVec::Zero(D);
    for (int c = 0; c < 3; ++c) {
        CVec f(g.size());
        for (int q = 0; q < g.size(); ++q) f[q] = F[q][c] * g.area_w[q];
        r += bn.cu[c].adjoint() * f;
    }
    return r;
}

inline CVec weak_div(const std::vector<CVec3>& F, const SurfaceGrid& g, const BasisNodes& bn)
{
    int D = static_cast<int>(bn.Y.cols());
    CVec r = CVec::Zero(D);
    for (int c = 0; c < 3; ++c) {
        CVec f(g.size());
        for (int q = 0; q < g.size(); ++q) f[q] = F[q][c] * g.area_w[q];
        r -= bn.gr[c].adjoint() * f;
    }
    return r;
}

// N[g] = vec_curl S[curl g]; returned as a curl-flavored TangentField
// (gradient part identically zero).
inline TangentField apply_N(const TangentField& gfield, const Model& M)
{
    if (gfield.flavor != Flavor::curl_trace) throw ValidationError("apply_N: input must be a curl-trace field", "g");
    const SurfaceGrid& g = *M.grid;
    int L = M.L_op;
    BasisNodes bn = basis_nodes(g, L, true, false);
    TangentField in(gfield.X.resized(L), gfield.V.resized(L));
    auto F = tangent_field_values(in, g);
    CVec b = weak_curl(F, g, bn);
    CVec c = M.Mm.ldlt().solve(b);
    CVec v = M.AS * c;
    ShCoeffs V(L, v, true);
    return TangentField(ShCoeffs(L, true), V, Flavor::curl_trace);
}

// Q[f] = grad S[div f]; div-flavored output with zero curl part
inline TangentField apply_Q(const TangentField& f, const Model& M)
{
    if (f.flavor != Flavor::div_trace) throw ValidationError("apply_Q: input must be a div-trace field", "f");
    const SurfaceGrid& g = *M.grid;
    int L = M.L_op;
    BasisNodes bn = basis_nodes(g, L, true, false);
    TangentField in(f.X.resized(L), f.V.resized(L));
    auto F = tangent_field_values(in, g);
    CVec b = weak_div(F, g, bn);
    CVec c = M.Mm.ldlt().solve(b);
    CVec x = M.AS * c;
    ShCoeffs X(L, x, true);
    return TangentField(X, ShCoeffs(L, true), Flavor::div_trace);
}

// ---------------------------------------------------------------------------
// Off-boundary evaluation by plain node quadrature
// ---------------------------------------------------------------------------
enum class OffKind { S, gradS, curlS_vec, curlcurlS_vec, divS_vec };

struct OffValue {
    cplx scalar = 0.0;
    CVec3 vec = CVec3::Zero();
};

class OffBoundaryEvaluator {
public:
    OffBoundaryEvaluator(std::shared_ptr<const SurfaceGrid> g, const ShCoeffs& density) : g_(std::move(g))
    {
        scal_ = sh_synthesis(density, *g_);
        has_vec_ = false;
    }
    OffBoundaryEvaluator(std::shared_ptr<const SurfaceGrid> g, const TangentField& density) : g_(std::move(g))
    {
        vec_ = tangent_field_values(density, *g_);
        has_vec_ = true;
    }
    OffBoundaryEvaluator(std::shared_ptr<const SurfaceGrid> g, std::vector<CVec3> node_field)
        : g_(std::move(g)), vec_(std::move(node_field)), has_vec_(true) {}

    const SurfaceGrid& grid() const { return *g_; }

    void check_guard(const Vec3& x) const
    {
        double d = tubular_distance(x, *g_);
        if (d <= 3.0 * g_->h_max)
            throw AccuracyError("off-boundary point within 3 node spacings of the surface (distance " +
                                    std::to_string(d) + ", spacing " + std::to_string(g_->h_max) + ")",
                                std::exp(-2.0 * pi * d / g_->h_max));
    }

    OffValue eval(const Vec3& x, cplx k, OffKind which, bool guard = true) const
    {
        if (guard) check_guard(x);
        const SurfaceGrid& g = *g_;
        bool vec_kind = which == OffKind::curlS_vec || which == OffKind::curlcurlS_vec || which == OffKind::divS_vec;
        if (vec_kind && !has_vec_) throw ValidationError("offboundary_eval: vector kind needs a tangent density", "density");
        if (!vec_kind && has_vec_) throw ValidationError("offboundary_eval: scalar kind needs a scalar density", "density");
        OffValue v;
        cplx k2 = k * k;
        for (int q = 0; q < g.size(); ++q) {
            Vec3 d = x - g.pos[q];
            double R = d.norm();
            Vec3 Rh = d / R;
            double w = g.area_w[q];
            switch (which) {
            case OffKind::S: v.scalar += w * helmholtz_G(k, R) * scal_[q]; break;
            case OffKind::gradS: v.vec += (w * helmholtz_dG(k, R) * scal_[q]) * Rh.cast<cplx>(); break;
            case OffKind::curlS_vec: v.vec += w * helmholtz_dG(k, R) * cross(Rh.cast<cplx>(), vec_[q]); break;
            case OffKind::divS_vec: v.scalar += w * helmholtz_dG(k, R) * Rh.cast<cplx>().cwiseProduct(vec_[q]).sum(); break;
            case OffKind::curlcurlS_vec: {
                cplx g1 = helmholtz_dG(k, R), g2 = helmholtz_d2G(k, R), g0 = helmholtz_G(k, R);
                const CVec3& f = vec_[q];
                cplx rf = Rh.x() * f.x() + Rh.y() * f.y() + Rh.z() * f.z();
                CVec3 Hf = g2 * rf * Rh.cast<cplx>() + (g1 / R) * (f - rf * Rh.cast<cplx>());
                v.vec += w * (Hf + k2 * g0 * f);
                break;
            }
            }
        }
        return v;
    }

private:
    std::shared_ptr<const SurfaceGrid> g_;
    CVec scal_;
    std::vector<CVec3> vec_;
    bool has_vec_ = false;
};

inline OffValue offboundary_eval(const ShCoeffs& density, cplx k, const Vec3& x, OffKind which,
                                 std::shared_ptr<const SurfaceGrid> grid)
{
    return OffBoundaryEvaluator(std::move(grid), density).eval(x, k, which);
}

inline OffValue offboundary_eval(const TangentField& density, cplx k, const Vec3& x, OffKind which,
                                 std::shared_ptr<const SurfaceGrid> grid)
{
    return OffBoundaryEvaluator(std::move(grid), density).eval(x, k, which);
}

// ---------------------------------------------------------------------------
// Near-boundary normal derivative of the Laplace single layer at x0 + s t nu,
// by polar quadrature centred on the foot point with panels graded towards
// the pole. Used for the one-sided limits.
// ---------------------------------------------------------------------------
inline cplx near_normal_derivative(const ShCoeffs& radius, const ShCoeffs& density, const Vec3& foot_dir,
                                   double offset, int n_a = 0, int per_panel = 24)
{
    SphFrame f = sph_frame(foot_dir);
    // rotation taking z to the foot direction
    Eigen::Matrix3d Q;
    Q << f.ct * f.cp, -f.sp, f.st * f.cp, f.ct * f.sp, f.cp, f.st * f.sp, -f.st, 0.0, f.ct;
    RadiusSample r0 = eval_radius(radius, foot_dir);
    Vec3 x0 = r0.rho * f.r;
    Vec3 nu = (r0.rho * f.r - r0.grad).normalized();
    Vec3 z = x0 + offset * nu;
    double scale = std::max(std::abs(offset) / std::max(r0.rho, 1e-12), 1e-4);
    std::vector<double> edges{0.0};
    double a = 0.5 * scale;
    while (a < pi) {
        edges.push_back(a);
        a *= 2.0;
    }
    edges.push_back(pi);
    if (n_a <= 0) n_a = 2 * (density.L + 2 * radius.L) + 48;
    cplx acc = 0.0;
    for (size_t pnl = 0; pnl + 1 < edges.size(); ++pnl) {
        GaussRule gl = gauss_legendre(per_panel, edges[pnl], edges[pnl + 1]);
        for (int i = 0; i < per_panel; ++i) {
            double th = gl.x[i], s = std::sin(th), c = std::cos(th);
            for (int k = 0; k < n_a; ++k) {
                double ph = 2.0 * pi * k / n_a;
                Vec3 pl(s * std::cos(ph), s * std::sin(ph), c);
                Vec3 dir = Q * pl;
                RadiusSample rs = eval_radius(radius, dir);
                double J = rs.rho * std::sqrt(rs.rho * rs.rho + rs.grad.squaredNorm());
                Vec3 y = rs.rho * dir;
                Vec3 d = z - y;
                double R = d.norm();
                SphFrame fy = sph_frame(dir);
                LegendreTable t = legendre_table(density.L, fy.ct, fy.st);
                cplx val = 0.0;
                for (int n = 0; n <= density.L; ++n)
                    for (int m = -n; m <= n; ++m) {
                        cplx cc = density.at(n, m);
                        if (cc != 0.0) val += cc * ynm_from(t, n, m, fy.phi);
                    }
                acc += gl.w[i] * s * (2.0 * pi / n_a) * J * d.dot(nu) / (4.0 * pi * R * R * R) * val;
            }
        }
    }
    return acc;
}

} // namespace mnp
