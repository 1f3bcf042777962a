#pragma once

// Tangential-field operators that have no scalar reduction: the curl part of
// M on gradients, the frequency corrections M^k_2 and L_1, L_2. Evaluated by
// the same rotated polar quadrature as the scalar operators, with the
// surface gradient / vector curl of every basis function built from S^2
// gradients in the rotated frame. Results are projected back onto the Hodge
// basis (grad Y_j, curl Y_j), j >= 1, with the stiffness matrix.

#include "potentials.hpp"

namespace mnp {

// Hodge coefficient layout used by the block operators: [X_1..X_n, V_1..V_n]
// with n = sh_count(L) - 1 (mean-free potentials).
inline int hodge_size(int L) { return 2 * (sh_count(L) - 1); }

inline CVec hodge_pack(const TangentField& f, int L)
{
    int n = sh_count(L) - 1;
    CVec v(2 * n);
    ShCoeffs X = f.X.resized(L), V = f.V.resized(L);
    v.head(n) = X.c.tail(n);
    v.tail(n) = V.c.tail(n);
    return v;
}

inline TangentField hodge_unpack(const CVec& v, int L, Flavor fl = Flavor::div_trace)
{
    int n = sh_count(L) - 1;
    if (v.size() != 2 * n) throw ValidationError("hodge_unpack: size mismatch", "v");
    ShCoeffs X(L, true), V(L, true);
    X.c.tail(n) = v.head(n);
    V.c.tail(n) = v.tail(n);
    return TangentField(X, V, fl);
}

enum class VecKernel { M, K2, L1, L2 };

struct VectorOps {
    int L = 0;
    std::shared_ptr<const SurfaceGrid> grid;
    CMat St;                    // n x n stiffness, n = D - 1
    CMat Mq, K2, L1, L2;        // 2n x 2n in the Hodge layout
    std::shared_ptr<const BasisNodes> basis;
    std::shared_ptr<const Eigen::LDLT<CMat>> St_f;
    int n() const { return sh_count(L) - 1; }

    // L^2 norm^2 of a packed field: X^H St X + V^H St V
    double l2_norm2(const CVec& v) const
    {
        int k = n();
        return (v.head(k).adjoint() * St * v.head(k)).real()(0, 0) + (v.tail(k).adjoint() * St * v.tail(k)).real()(0, 0);
    }
};

struct VectorOpsOptions {
    int quad_extra = 8;
    PolarConfig polar;
};

namespace detail {

inline Eigen::Matrix3d skew(const Vec3& a)
{
    Eigen::Matrix3d s;
    s << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
    return s;
}

} // namespace detail

// Node values of all four kernels applied to grad Y_j and curl Y_j;
// out[kernel][basis] is a list of three node x D matrices (Cartesian comps).
struct VectorNodeValues {
    CMat v[4][2][3];
};

inline VectorNodeValues polar_vector_values(const SurfaceGrid& g, int L, PolarConfig pc)
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

    std::vector<LegendreTable> ptab(n_r);
    for (int i = 0; i < n_r; ++i) ptab[i] = legendre_table(L, std::cos(pg.th[i]), std::sin(pg.th[i]));
    RMat Cm(n_a, L + 1), Sm(n_a, L + 1);
    for (int k = 0; k < n_a; ++k)
        for (int m = 0; m <= L; ++m) {
            Cm(k, m) = std::cos(m * pg.phi[k]);
            Sm(k, m) = std::sin(m * pg.phi[k]);
        }

    VectorNodeValues out;
    int N = g.size();
    for (auto& a : out.v)
        for (auto& b : a)
            for (auto& c : b) c.resize(N, D);

    // row block for (kernel, basis, comp, deriv)
    constexpr int NB = 4 * 2 * 3 * 2;
    auto rb = [](int o, int b, int c, int d) { return ((o * 2 + b) * 3 + c) * 2 + d; };

    int nt = thread_count();
    parallel_for(nt, [&](int tid) {
        std::vector<double> rho;
        std::vector<Vec3> grad;
        RMat kv(NB * n_r, n_a);
        CMat I(NB / 2, D);
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
                double ct0 = g.ct[i0], st0 = g.st[i0], cp0 = std::cos(phi0), sp0 = std::sin(phi0);
                Eigen::Matrix3d Q;
                Q << ct0 * cp0, -sp0, st0 * cp0, ct0 * sp0, cp0, st0 * sp0, -st0, 0.0, ct0;
                Vec3 nx = Q.transpose() * g.normal[q0];
                Eigen::Matrix3d nxs = detail::skew(nx);
                for (int i = 0; i < n_r; ++i) {
                    double sth = std::sin(pg.th[i]);
                    for (int k = 0; k < n_a; ++k) {
                        int q = i * n_a + k;
                        const Vec3& p = pg.dir[q];
                        double r = rho[q];
                        const Vec3& gr = grad[q];
                        double c2 = r * r + gr.squaredNorm();
                        double J = r * std::sqrt(c2);
                        Vec3 ny = (r * p - gr) / std::sqrt(c2);
                        Eigen::Matrix3d P = Eigen::Matrix3d::Identity() / r + (p - gr / r) * gr.transpose() / c2;
                        Vec3 ut = P * pg.eth[q], up = P * pg.eph[q] / sth;
                        Vec3 u[2][2] = {{ut, up}, {-ny.cross(ut), -ny.cross(up)}};
                        Vec3 d = x - r * p;
                        double R = d.norm();
                        double w = pg.w[i] * J;
                        double nd = nx.dot(d);
                        for (int bb = 0; bb < 2; ++bb)
                            for (int dd = 0; dd < 2; ++dd) {
                                const Vec3& f = u[bb][dd];
                                double nf = nx.dot(f);
                                Vec3 mk = (d * nf - f * nd) * (w / (4.0 * pi * R * R * R));
                                Vec3 k2 = (d * nf - f * nd) * (w / (8.0 * pi * R));
                                Vec3 l1 = nxs * (f / (2.0 * R) + d * (d.dot(f) / (2.0 * R * R * R))) * w;
                                Vec3 l2 = nxs * f * (2.0 * w / 3.0);
                                const Vec3* vs[4] = {&mk, &k2, &l1, &l2};
                                for (int o = 0; o < 4; ++o)
                                    for (int c = 0; c < 3; ++c) kv(rb(o, bb, c, dd) * n_r + i, k) = (*vs[o])[c];
                            }
                    }
                }
                RMat Fr = kv * Cm, Fi = kv * Sm;
                I.setZero();
                for (int blk = 0; blk < NB / 2; ++blk)
                    for (int i = 0; i < n_r; ++i) {
                        const LegendreTable& tb = ptab[i];
                        int rt_ = (2 * blk) * n_r + i, rp_ = (2 * blk + 1) * n_r + i;
                        for (int n = 0; n <= L; ++n)
                            for (int m = 0; m <= n; ++m) {
                                int s = sh_index(n, m);
                                cplx Ft(Fr(rt_, m), Fi(rt_, m)), Fp(Fr(rp_, m), Fi(rp_, m));
                                cplx v = tb.dP[s] * Ft + cplx(0.0, m) * tb.P[s] * Fp;
                                I(blk, s) += v;
                                if (m > 0) I(blk, sh_index(n, -m)) += ((m % 2) ? -1.0 : 1.0) * std::conj(v);
                            }
                    }
                // rotated Cartesian components -> global, then Wigner back
                for (int o = 0; o < 4; ++o)
                    for (int bb = 0; bb < 2; ++bb) {
                        CMat rows(3, D);
                        for (int c = 0; c < 3; ++c) rows.row(c) = I.row((o * 2 + bb) * 3 + c);
                        CMat glob = Q.cast<cplx>() * rows;
                        for (int n = 0; n <= L; ++n) {
                            int d0 = sh_index(n, -n), dn = 2 * n + 1;
                            CMat blk = glob.middleCols(d0, dn) * T[n].transpose();
                            for (int m = -n; m <= n; ++m) {
                                cplx e = std::polar(1.0, m * phi0);
                                for (int c = 0; c < 3; ++c) out.v[o][bb][c](q0, d0 + m + n) = e * blk(c, m + n);
                            }
                        }
                    }
            }
        }
    });
    return out;
}

inline VectorOps build_vector_ops(const ShCoeffs& radius, int L, VectorOpsOptions opt = {})
{
    if (L < 1) throw ValidationError("build_vector_ops: L must be >= 1", "L");
    VectorOps vo;
    vo.L = L;
    auto g = std::make_shared<SurfaceGrid>(build_surface(radius, L + opt.quad_extra));
    vo.grid = g;
    int D = sh_count(L), n = D - 1, N = g->size();
    BasisNodes bn = basis_nodes(*g, L, true, false);

    // weighted conjugate bases: rows of the projection
    CMat St = CMat::Zero(D, D);
    for (int c = 0; c < 3; ++c) {
        CMat wg = bn.gr[c];
        for (int q = 0; q < N; ++q) wg.row(q) *= g->area_w[q];
        St += bn.gr[c].adjoint() * wg;
    }
    St = 0.5 * (St + St.adjoint()).eval();
    vo.St = St.bottomRightCorner(n, n);
    auto St_fp = std::make_shared<Eigen::LDLT<CMat>>(vo.St);
    const Eigen::LDLT<CMat>& St_f = *St_fp;
    vo.St_f = St_fp;

    VectorNodeValues nv = polar_vector_values(*g, L, opt.polar);
    auto project = [&](int o) {
        CMat A(2 * n, 2 * n);
        for (int bb = 0; bb < 2; ++bb) {
            CMat bX = CMat::Zero(D, D), bV = CMat::Zero(D, D);
            for (int c = 0; c < 3; ++c) {
                CMat F = nv.v[o][bb][c];
                for (int q = 0; q < N; ++q) F.row(q) *= g->area_w[q];
                bX += bn.gr[c].adjoint() * F;
                bV += bn.cu[c].adjoint() * F;
            }
            A.block(0, bb * n, n, n) = St_f.solve(bX.bottomRightCorner(n, n));
            A.block(n, bb * n, n, n) = St_f.solve(bV.bottomRightCorner(n, n));
        }
        return A;
    };
    vo.Mq = project(0);
    vo.K2 = project(1);
    vo.L1 = project(2);
    vo.L2 = project(3);
    vo.basis = std::make_shared<BasisNodes>(std::move(bn));
    return vo;
}

// L^2 projection of a tangential node field on vo.grid onto the Hodge basis
inline CVec hodge_project(const std::vector<CVec3>& F, const VectorOps& vo)
{
    const SurfaceGrid& g = *vo.grid;
    if (static_cast<int>(F.size()) != g.size()) throw ValidationError("hodge_project: node count mismatch", "F");
    int n = vo.n(), N = g.size();
    CVec bx = CVec::Zero(n + 1), bv = CVec::Zero(n + 1);
    for (int c = 0; c < 3; ++c) {
        CVec f(N);
        for (int q = 0; q < N; ++q) f[q] = F[q][c] * g.area_w[q];
        bx += vo.basis->gr[c].adjoint() * f;
        bv += vo.basis->cu[c].adjoint() * f;
    }
    CVec v(2 * n);
    v.head(n) = vo.St_f->solve(bx.tail(n));
    v.tail(n) = vo.St_f->solve(bv.tail(n));
    return v;
}

// node values of a packed Hodge field on the grid of bn
inline std::vector<CVec3> hodge_node_values(const CVec& v, const BasisNodes& bn)
{
    int n = sh_count(bn.L) - 1, N = static_cast<int>(bn.gr[0].rows());
    if (v.size() != 2 * n) throw ValidationError("hodge_node_values: size mismatch", "v");
    std::vector<CVec3> F(N, CVec3::Zero());
    for (int c = 0; c < 3; ++c) {
        CVec col = bn.gr[c].rightCols(n) * v.head(n) + bn.cu[c].rightCols(n) * v.tail(n);
        for (int q = 0; q < N; ++q) F[q][c] = col[q];
    }
    return F;
}

inline std::vector<CVec3> hodge_node_values(const CVec& v, const VectorOps& vo) { return hodge_node_values(v, *vo.basis); }

// Static MNP operator on the Hodge layout at degree vo.L: the gradient and
// curl diagonal blocks come from the scalar reductions, the curl part of
// M[grad X] from the vector quadrature.
inline CMat mnp_block(const Model& M, const VectorOps& vo)
{
    int L = vo.L;
    if (L > M.L) throw ValidationError("mnp_block: vector degree exceeds model degree", "L");
    int D = sh_count(L), n = D - 1, Do = M.Dop();
    CMat A = CMat::Zero(2 * n, 2 * n);
    for (int j = 1; j < D; ++j) {
        CVec e = CVec::Zero(Do);
        e[j] = 1.0;
        // M*[grad] analogue: grad part of M[grad X] is grad(-Lap^{-1} K* Lap X)
        CVec x = -M.lap_inv(M.AKs * (M.AL * e));
        A.block(0, j - 1, n, 1) = x.segment(1, n);
        CVec v = M.AK * e;
        A.block(n, n + j - 1, n, 1) = v.segment(1, n);
    }
    A.block(n, 0, n, n) = vo.Mq.block(n, 0, n, n);
    return A;
}

// Lemma-type correction blocks
inline cplx correction_constant(int j, const MaterialConfig& mat)
{
    // C_j = i^{j+1} (k_c^{j+1} - k_e^{j+1}) / (4 pi omega (j-1)!)
    cplx kc = mat.k_c(), ke = mat.k_e();
    double fact = 1.0;
    for (int i = 2; i <= j - 1; ++i) fact *= i;
    return std::pow(I1, j + 1) * (std::pow(kc, j + 1) - std::pow(ke, j + 1)) / (4.0 * pi * mat.omega * fact);
}

inline OperatorMatrix assemble_correction(OpKind kind, const VectorOps& vo, const MaterialConfig& mat, cplx k = 1.0)
{
    OperatorMatrix o;
    o.kind = kind;
    o.L = vo.L;
    o.grid_id = vo.grid->id;
    switch (kind) {
    case OpKind::Mk2: o.entries = k * k * vo.K2; break;
    case OpKind::L1: o.entries = correction_constant(1, mat) * vo.L1; break;
    case OpKind::L2: o.entries = correction_constant(2, mat) * vo.L2; break;
    default: throw ValidationError("assemble_correction: kind must be Mk2, L1 or L2", "kind");
    }
    return o;
}

inline OperatorMatrix assemble_correction(OpKind kind, const SurfaceGrid& grid, const MaterialConfig& mat, int L,
                                          cplx k = 1.0)
{
    VectorOps vo = build_vector_ops(grid.radius_coeffs, L);
    return assemble_correction(kind, vo, mat, k);
}

} // namespace mnp
