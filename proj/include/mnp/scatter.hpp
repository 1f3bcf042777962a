#pragma once

// Scaled boundary system for a small particle B (x = delta x~), dipole
// excitation, solves near resonance and field evaluation. Unknowns are the
// Hodge-packed pair (psi~, omega phi~).

#include "plasmon.hpp"
#include "vector_ops.hpp"

namespace mnp {

struct BlockSystem {
    int L = 0;
    int order = 0;
    MaterialConfig mat;
    cplx c_mu = 0.0, c_eps = 0.0; // (mu_c + mu_e)/(2(mu_e - mu_c)), same with eps
    OperatorMatrix blk[2][2];
    std::shared_ptr<const VectorOps> vo;

    int half() const { return hodge_size(L); }
    double delta() const { return mat.delta; }

    CMat full() const
    {
        int h = half();
        CMat A(2 * h, 2 * h);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) A.block(a * h, b * h, h, h) = blk[a][b].entries;
        return A;
    }
    CVec apply(const CVec& x) const
    {
        int h = half();
        if (x.size() != 2 * h) throw ValidationError("BlockSystem::apply: size mismatch", "x");
        CVec y(2 * h);
        y.head(h) = blk[0][0].entries * x.head(h) + blk[0][1].entries * x.tail(h);
        y.tail(h) = blk[1][0].entries * x.head(h) + blk[1][1].entries * x.tail(h);
        return y;
    }
};

inline void check_contrast(const MaterialConfig& mat)
{
    if (std::abs(mat.mu_e - mat.mu_c) == 0.0) throw ValidationError("materials: mu_e = mu_c (tau = 1)", "tau");
    if (std::abs(mat.eps_e - mat.eps_c) == 0.0) throw ValidationError("materials: eps_e = eps_c (tau = 1)", "tau");
}

// A(delta) = A(0) + B(delta), B truncated after delta^order
inline BlockSystem assemble_system(const Model& M, std::shared_ptr<const VectorOps> vo, const MaterialConfig& mat, int order)
{
    if (order < 0 || order > 2) throw ValidationError("assemble_system: order must be 0, 1 or 2", "order");
    if (!vo) throw ValidationError("assemble_system: missing vector operators", "vo");
    check_contrast(mat);
    BlockSystem s;
    s.L = vo->L;
    s.order = order;
    s.mat = mat;
    s.vo = vo;
    s.c_mu = (mat.mu_c + mat.mu_e) / (2.0 * (mat.mu_e - mat.mu_c));
    s.c_eps = (mat.eps_c + mat.eps_e) / (2.0 * (mat.eps_e - mat.eps_c));
    int h = hodge_size(vo->L);
    CMat Mb = mnp_block(M, *vo);
    CMat I = CMat::Identity(h, h);
    CMat a11 = s.c_mu * I - Mb, a22 = s.c_eps * I - Mb;
    CMat a12 = CMat::Zero(h, h), a21 = CMat::Zero(h, h);
    double d = mat.delta;
    cplx dm = mat.mu_e - mat.mu_c, de = mat.eps_e - mat.eps_c;
    if (order >= 1) {
        CMat L1 = correction_constant(1, mat) * vo->L1;
        a12 += (d / dm) * L1;
        a21 += (d / de) * L1;
    }
    if (order >= 2) {
        CMat L2 = correction_constant(2, mat) * vo->L2;
        a12 += (d * d / dm) * L2;
        a21 += (d * d / de) * L2;
        cplx kc = mat.k_c(), ke = mat.k_e();
        a11 += (d * d * (mat.mu_c * kc * kc - mat.mu_e * ke * ke) / dm) * vo->K2;
        a22 += (d * d * (mat.eps_c * kc * kc - mat.eps_e * ke * ke) / de) * vo->K2;
    }
    CMat* src[2][2] = {{&a11, &a12}, {&a21, &a22}};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            s.blk[a][b].kind = OpKind::Block;
            s.blk[a][b].L = vo->L;
            s.blk[a][b].grid_id = vo->grid->id;
            s.blk[a][b].entries = std::move(*src[a][b]);
        }
    return s;
}

// ---------------------------------------------------------------------------
// Dipole incident field in scaled coordinates
// ---------------------------------------------------------------------------
struct DipoleSource {
    Vec3 s = Vec3(0.0, 0.0, 3.0); // s~, outside B
    Vec3 p = Vec3(0.0, 0.0, 1.0);
};

// E~ = -(1/k_e^2) grad div (G(delta k_e) p) - delta^2 G p,
// H~ = (i delta/(omega mu_e)) curl (G p); delta = 0 is allowed here.
inline EH scaled_incident(const Vec3& x, const DipoleSource& src, const MaterialConfig& mat, double delta)
{
    Vec3 d = x - src.s;
    double R = d.norm();
    if (!(R > 0)) throw ValidationError("incident field: x coincides with the source", "x");
    Vec3 u = d / R;
    cplx ke = mat.k_e(), k = delta * ke;
    cplx G = helmholtz_G(k, R), G1 = helmholtz_dG(k, R), G2 = helmholtz_d2G(k, R);
    CVec3 p = src.p.cast<cplx>(), uc = u.cast<cplx>();
    cplx up = u.dot(src.p);
    CVec3 hess_p = G2 * up * uc + (G1 / R) * (p - up * uc);
    EH f;
    f.E = -(1.0 / (ke * ke)) * hess_p - (delta * delta) * G * p;
    f.H = (I1 * delta / (mat.omega * mat.mu_e)) * G1 * cross(uc, p);
    return f;
}

struct RHSVector {
    CVec e, h; // packed Hodge coefficients of each row
    int L = 0;
    TangentField first() const { return hodge_unpack(e, L); }
    TangentField second() const { return hodge_unpack(h, L); }
    CVec stacked() const
    {
        CVec v(e.size() + h.size());
        v << e, h;
        return v;
    }
};

inline void check_source_outside(const Vec3& s, const SurfaceGrid& g)
{
    double r = s.norm();
    if (r == 0.0 || !(r > eval_radius(g.radius_coeffs, s / r).rho * (1.0 + 1e-12)))
        throw ValidationError("dipole source must lie outside the particle", "source");
}

// tangential traces nu x E~ and nu x H~ on the grid, Hodge-projected
inline std::pair<CVec, CVec> incident_traces(const DipoleSource& src, const MaterialConfig& mat, const VectorOps& vo,
                                             double delta)
{
    const SurfaceGrid& g = *vo.grid;
    check_source_outside(src.s, g);
    std::vector<CVec3> FE(g.size()), FH(g.size());
    for (int q = 0; q < g.size(); ++q) {
        EH f = scaled_incident(g.pos[q], src, mat, delta);
        CVec3 nu = g.normal[q].cast<cplx>();
        FE[q] = cross(nu, f.E);
        FH[q] = cross(nu, f.H);
    }
    return {hodge_project(FE, vo), hodge_project(FH, vo)};
}

inline RHSVector dipole_incident_trace(const DipoleSource& src, const MaterialConfig& mat, const VectorOps& vo)
{
    check_contrast(mat);
    auto [te, th] = incident_traces(src, mat, vo, mat.delta);
    RHSVector r;
    r.L = vo.L;
    r.e = te / (mat.mu_e - mat.mu_c);
    r.h = (I1 / (mat.eps_e - mat.eps_c)) * th;
    return r;
}

// ---------------------------------------------------------------------------
// Norms on packed fields
// ---------------------------------------------------------------------------

// Spectral H^{-1/2}(div) norm of grad X + curl V on the parameter sphere:
// sum n(n+1)/(n+1/2) (|X|^2 + |V|^2) + (n(n+1))^2/(n+1/2) |X|^2
inline double hdiv_norm(const CVec& v)
{
    int h = static_cast<int>(v.size()) / 2;
    double s = 0.0;
    for (int j = 0; j < h; ++j) {
        int n, m;
        sh_nm(j + 1, n, m);
        double w = n * (n + 1.0) / (n + 0.5);
        s += w * (std::norm(v[j]) + std::norm(v[h + j])) + w * n * (n + 1.0) * std::norm(v[j]);
    }
    return std::sqrt(s);
}

// norm of a stacked pair (first, second)
inline double pair_norm(const CVec& x)
{
    int h = static_cast<int>(x.size()) / 2;
    double a = hdiv_norm(x.head(h)), b = hdiv_norm(x.tail(h));
    return std::sqrt(a * a + b * b);
}

// fraction of the L^2 norm carried by the gradient part
inline double gradient_fraction(const CVec& v, const VectorOps& vo)
{
    int n = vo.n();
    double gx = (v.head(n).adjoint() * vo.St * v.head(n)).real()(0, 0);
    double tot = vo.l2_norm2(v);
    return tot > 0 ? std::sqrt(gx / tot) : 0.0;
}

// ---------------------------------------------------------------------------
// Solve
// ---------------------------------------------------------------------------
struct ScatterSolution {
    CVec x;            // stacked (psi~, omega phi~)
    int L = 0;
    double rcond = 0.0;
    double condition = 0.0;
    TangentField psi() const { return hodge_unpack(x.head(x.size() / 2), L); }
    TangentField omega_phi() const { return hodge_unpack(x.tail(x.size() / 2), L); }
};

inline ScatterSolution solve_scatter(const BlockSystem& sys, const RHSVector& rhs, double rcond_min = 1e-13)
{
    CMat A = sys.full();
    CVec b = rhs.stacked();
    if (b.size() != A.rows()) throw ValidationError("solve_scatter: rhs size does not match the system", "rhs");
    Eigen::PartialPivLU<CMat> lu(A);
    double rc = lu.rcond();
    if (!(rc > rcond_min)) {
        // report the MNP eigenvalue that sits on the resonance
        Eigen::ComplexEigenSolver<CMat> es(A, false);
        int k = 0;
        es.eigenvalues().cwiseAbs().minCoeff(&k);
        double lam = (sys.c_mu - es.eigenvalues()[k]).real();
        throw ResonanceError("solve_scatter: system singular at resonance (rcond " + std::to_string(rc) +
                                 ", eigenvalue " + std::to_string(lam) + ")",
                             lam);
    }
    ScatterSolution s;
    s.L = sys.L;
    s.x = lu.solve(b);
    s.rcond = rc;
    s.condition = 1.0 / rc;
    return s;
}

// ---------------------------------------------------------------------------
// Weak resonance indicator || A(delta) (phi, omega phi) ||
// ---------------------------------------------------------------------------

// packed coefficients of c phi_{l,n}^m on the sphere of radius r:
// phi_1 = r grad Y / s, phi_2 = -r vec_curl Y / s
inline CVec sphere_mode_hodge(const PlasmonMode& mode, int L)
{
    if (!mode.sphere) throw ValidationError("sphere_mode_hodge: not a sphere mode", "mode");
    const SphereMode& sm = mode.sm;
    if (sm.n > L) throw ValidationError("sphere_mode_hodge: mode degree exceeds L", "L");
    int h = hodge_size(L), n = h / 2;
    CVec v = CVec::Zero(h);
    double s = std::sqrt(sm.n * (sm.n + 1.0));
    int j = sh_index(sm.n, sm.m) - 1;
    if (sm.l == 1) v[j] = mode.scale * sm.r / s;
    else v[n + j] = -mode.scale * sm.r / s;
    return v;
}

inline CVec mode_hodge(const PlasmonMode& mode, int L)
{
    if (mode.sphere) return sphere_mode_hodge(mode, L);
    return hodge_pack(mode.density, L);
}

inline CVec mode_pair(const PlasmonMode& mode, const BlockSystem& sys)
{
    CVec v = mode_hodge(mode, sys.L);
    CVec x(2 * v.size());
    x << v, sys.mat.omega * v;
    return x;
}

inline double weak_resonance_indicator(const BlockSystem& sys, const PlasmonMode& mode)
{
    return pair_norm(sys.apply(mode_pair(mode, sys)));
}

// ---------------------------------------------------------------------------
// Fields of the solved problem at a scaled point x~
// ---------------------------------------------------------------------------
class ScatterFieldEvaluator {
public:
    // densities are band-limited, so they are resampled on a finer grid
    // (L_quad = L_eval) to push the near-boundary guard in
    ScatterFieldEvaluator(const ScatterSolution& sol, std::shared_ptr<const VectorOps> vo, const MaterialConfig& mat,
                          int L_eval = 40)
        : vo_(std::move(vo)), mat_(mat)
    {
        if (!vo_) throw ValidationError("scattered fields: missing vector operators", "vo");
        int h = static_cast<int>(sol.x.size()) / 2;
        if (h != hodge_size(vo_->L)) throw ValidationError("scattered fields: solution size mismatch", "densities");
        std::shared_ptr<const SurfaceGrid> g = vo_->grid;
        if (L_eval > g->L_quad) g = std::make_shared<SurfaceGrid>(build_surface(g->radius_coeffs, L_eval));
        BasisNodes bn = basis_nodes(*g, vo_->L, true, false);
        psi_.emplace(g, hodge_node_values(sol.x.head(h), bn));
        ophi_.emplace(g, hodge_node_values(sol.x.tail(h), bn));
    }

    void set_incident(const DipoleSource& src) { src_ = src; }

    bool inside(const Vec3& x) const
    {
        double r = x.norm();
        return r == 0.0 || r < eval_radius(vo_->grid->radius_coeffs, x / r).rho;
    }

    // E = [E^i] + mu curl S[psi] + (delta omega)^{-1} curl curl S[omega phi]
    // H = [H^i] - i/(omega delta) curl curl S[psi] - i k^2/(omega^2 mu) curl S[omega phi]
    EH eval(const Vec3& x, bool guard = true) const
    {
        bool in = inside(x);
        double d = mat_.delta, w = mat_.omega;
        cplx mu = in ? mat_.mu_c : mat_.mu_e;
        cplx k = in ? mat_.k_c() : mat_.k_e();
        cplx kd = d * k;
        CVec3 a1p = psi_->eval(x, kd, OffKind::curlS_vec, guard).vec;
        CVec3 a2p = psi_->eval(x, kd, OffKind::curlcurlS_vec, guard).vec;
        CVec3 a1f = ophi_->eval(x, kd, OffKind::curlS_vec, guard).vec;
        CVec3 a2f = ophi_->eval(x, kd, OffKind::curlcurlS_vec, guard).vec;
        EH f;
        f.E = mu * a1p + (1.0 / (d * w)) * a2f;
        f.H = -(I1 / (w * d)) * a2p - (I1 * k * k / (w * w * mu)) * a1f;
        if (src_ && !in) {
            EH inc = scaled_incident(x, *src_, mat_, d);
            f.E += inc.E;
            f.H += inc.H;
        }
        return f;
    }

private:
    std::shared_ptr<const VectorOps> vo_;
    MaterialConfig mat_;
    std::optional<OffBoundaryEvaluator> psi_, ophi_;
    std::optional<DipoleSource> src_;
};

inline EH eval_scattered_fields(const ScatterSolution& sol, const Vec3& x, const MaterialConfig& mat,
                                std::shared_ptr<const VectorOps> vo, const DipoleSource* incident = nullptr,
                                int L_eval = 40)
{
    ScatterFieldEvaluator ev(sol, std::move(vo), mat, L_eval);
    if (incident) ev.set_incident(*incident);
    return ev.eval(x);
}

// Sphere path: a packed field on |y| = r as a sum of c phi_{l,n}^m
// (grad Y = (s/r) phi_1, vec_curl Y = -(s/r) phi_2)
inline SphereDensity sphere_density_from_hodge(const CVec& v, double r)
{
    SphereDensity d;
    d.r = r;
    int h = static_cast<int>(v.size()) / 2;
    for (int j = 0; j < h; ++j) {
        int n, m;
        sh_nm(j + 1, n, m);
        double s = std::sqrt(n * (n + 1.0)) / r;
        if (v[j] != 0.0) d.terms.push_back({SphereMode{1, n, m, r}, s * v[j]});
        if (v[h + j] != 0.0) d.terms.push_back({SphereMode{2, n, m, r}, -s * v[h + j]});
    }
    return d;
}

// fields of a solution on a sphere through the closed forms
inline EH sphere_scattered_fields(const ScatterSolution& sol, const Vec3& x, const MaterialConfig& mat, double r,
                                  const DipoleSource* incident = nullptr)
{
    int h = static_cast<int>(sol.x.size()) / 2;
    SphereDensity dp = sphere_density_from_hodge(sol.x.head(h), r), df = sphere_density_from_hodge(sol.x.tail(h), r);
    bool in = x.norm() < r;
    double d = mat.delta, w = mat.omega;
    cplx mu = in ? mat.mu_c : mat.mu_e;
    cplx k = in ? mat.k_c() : mat.k_e();
    if (std::abs(k.imag()) > 1e-14 * std::abs(k)) throw ValidationError("sphere fields: need real k", "k");
    double kd = d * k.real();
    CVec3 a1p = exact_sphere_potential(dp, kd, x, CurlKind::curlS), a2p = exact_sphere_potential(dp, kd, x, CurlKind::curlcurlS);
    CVec3 a1f = exact_sphere_potential(df, kd, x, CurlKind::curlS), a2f = exact_sphere_potential(df, kd, x, CurlKind::curlcurlS);
    EH f;
    f.E = mu * a1p + (1.0 / (d * w)) * a2f;
    f.H = -(I1 / (w * d)) * a2p - (I1 * k * k / (w * w * mu)) * a1f;
    if (incident && !in) {
        EH inc = scaled_incident(x, *incident, mat, d);
        f.E += inc.E;
        f.H += inc.H;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Convenience: everything needed for one surface at one degree
// ---------------------------------------------------------------------------
struct ScatterSetup {
    std::shared_ptr<const Model> model;
    std::shared_ptr<const VectorOps> vo;
};

inline ScatterSetup make_scatter_setup(const ShCoeffs& radius, int L)
{
    ScatterSetup s;
    s.model = std::make_shared<Model>(build_model(radius, L));
    s.vo = std::make_shared<VectorOps>(build_vector_ops(radius, L));
    return s;
}

inline BlockSystem assemble_system(const ScatterSetup& su, const MaterialConfig& mat, int order)
{
    return assemble_system(*su.model, su.vo, mat, order);
}

} // namespace mnp
