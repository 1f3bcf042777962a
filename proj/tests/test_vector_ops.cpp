#include <catch_amalgamated.hpp>

#include "mnp/vector_ops.hpp"

#include <random>

using namespace mnp;

namespace {

// exact sphere M^k eigenvalue on phi_{l,n}
cplx mk_sphere(int l, int n, double k)
{
    cplx j = sph_j(n, k), h = sph_h1(n, k);
    cplx J = radial({RadialTag::composite_J, n}, k), H = radial({RadialTag::composite_H, n}, k);
    cplx v = (I1 * k / 2.0) * (J * h + H * j);
    return l == 2 ? v : -v;
}

// exact sphere L^k: phi_2 -> E2 phi_1, phi_1 -> E1 phi_2
cplx lk_phi2(int n, double k) { return I1 * k * k * k * sph_h1(n, k) * sph_j(n, k); }
cplx lk_phi1(int n, double k)
{
    return -I1 * k * radial({RadialTag::composite_H, n}, k) * radial({RadialTag::composite_J, n}, k);
}

// k^2 coefficient of f(k) - f(0): quadratic extrapolation of (f - f0)/k^2
// to k = 0 from k = h, h/2, h/4 (removes the k^3 and k^4 terms)
template <class F>
cplx k2_coeff(F f, double f0)
{
    double h = 1e-2;
    auto g = [&](double kk) { return (f(kk) - f0) / (kk * kk); };
    return g(h) / 3.0 - 2.0 * g(h / 2) + 8.0 * g(h / 4) / 3.0;
}

const VectorOps& sphere_ops()
{
    static VectorOps vo = build_vector_ops(sphere_radius_coeffs(1.0), 6);
    return vo;
}

} // namespace

TEST_CASE("hodge pack and unpack")
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    ShCoeffs X(5, true), V(5, true);
    for (int i = 1; i < X.size(); ++i) {
        X.c[i] = cplx(nd(rng), nd(rng));
        V.c[i] = cplx(nd(rng), nd(rng));
    }
    TangentField f(X, V);
    CVec v = hodge_pack(f, 5);
    CHECK(v.size() == hodge_size(5));
    TangentField g = hodge_unpack(v, 5);
    CHECK((g.X.c - X.c).norm() < 1e-15);
    CHECK((g.V.c - V.c).norm() < 1e-15);
    CHECK_THROWS_AS(hodge_unpack(CVec::Zero(3), 5), ValidationError);
}

TEST_CASE("sphere: static M is diagonal with the MNP eigenvalues")
{
    const VectorOps& vo = sphere_ops();
    int n = vo.n();
    CMat D = CMat::Zero(2 * n, 2 * n);
    for (int j = 0; j < n; ++j) {
        int deg = static_cast<int>(std::sqrt(j + 1.0));
        D(j, j) = -1.0 / (2.0 * (2 * deg + 1));
        D(n + j, n + j) = 1.0 / (2.0 * (2 * deg + 1));
    }
    CHECK((vo.Mq - D).norm() < 1e-9);
    // stiffness of grad Y_n^m on the unit sphere is n(n+1)
    for (int j = 0; j < n; ++j) {
        int deg = static_cast<int>(std::sqrt(j + 1.0));
        CHECK(std::abs(vo.St(j, j) - double(deg * (deg + 1))) < 1e-10);
    }
}

TEST_CASE("sphere: k^2 correction matches the exact M^k expansion")
{
    const VectorOps& vo = sphere_ops();
    int n = vo.n();
    for (int l : {1, 2})
        for (int deg : {1, 2, 3, 5}) {
            double a0 = (l == 2 ? 1.0 : -1.0) / (2.0 * (2 * deg + 1));
            cplx a2 = k2_coeff([&](double k) { return mk_sphere(l, deg, k); }, a0);
            for (int m : {0, deg}) {
                int j = sh_index(deg, m) - 1;
                cplx e = l == 1 ? vo.K2(j, j) : vo.K2(n + j, n + j);
                INFO("l=" << l << " n=" << deg << " m=" << m);
                CHECK(std::abs(e - a2) < 1e-6 * std::abs(a2));
            }
        }
    MaterialConfig mat;
    OperatorMatrix Mk2 = assemble_correction(OpKind::Mk2, vo, mat, 0.5);
    CHECK((Mk2.entries - 0.25 * vo.K2).norm() < 1e-14);
}

TEST_CASE("sphere: L_1 and L_2 match the exact L^k expansion")
{
    const VectorOps& vo = sphere_ops();
    int n = vo.n();
    MaterialConfig m = MaterialConfig::preset(0.5, 1.0, 0.1);
    cplx kc = m.k_c(), ke = m.k_e();
    for (int deg : {1, 2, 3}) {
        int j = sh_index(deg, 0) - 1;
        for (int which : {1, 2}) {
            auto E = [&](double k) { return which == 2 ? lk_phi2(deg, k) : lk_phi1(deg, k); };
            cplx c0 = E(1e-6);
            cplx a2 = k2_coeff(E, c0.real());
            cplx exact = a2 * (kc * kc - ke * ke);
            cplx eng = which == 2 ? vo.L1(j, n + j) : vo.L1(n + j, j);
            eng *= -correction_constant(1, m) * m.omega;
            INFO("n=" << deg << " phi" << which);
            CHECK(std::abs(eng - exact) < 1e-3 * std::abs(exact));
        }
    }
    // L_2 = (2/3) nu x integral: only degree one survives on the sphere
    int j1 = sh_index(1, 0) - 1;
    cplx l2 = -correction_constant(2, m) * m.omega * vo.L2(n + j1, j1);
    // k^3 coefficient of the exact phi_1 -> phi_2 entry for n = 1 is -4i/9
    CHECK(std::abs(l2 - (-4.0 * I1 / 9.0) * (kc * kc * kc - ke * ke * ke)) < 1e-6);
    for (int deg : {2, 3, 4}) {
        int j = sh_index(deg, 1) - 1;
        CHECK(vo.L2.col(j).norm() < 1e-10);
        CHECK(vo.L2.col(n + j).norm() < 1e-10);
    }
}

TEST_CASE("correction constants")
{
    MaterialConfig m;
    m.eps_c = m.eps_e;
    m.mu_c = m.mu_e;
    CHECK(std::abs(correction_constant(1, m)) == 0.0);
    CHECK(std::abs(correction_constant(2, m)) == 0.0);
    MaterialConfig p = MaterialConfig::preset(2.0, 1.5);
    cplx kc = p.k_c(), ke = p.k_e();
    CHECK(std::abs(correction_constant(1, p) - (-(kc * kc - ke * ke) / (4 * pi * 1.5))) < 1e-14);
    CHECK(std::abs(correction_constant(2, p) - (-I1 * (kc * kc * kc - ke * ke * ke) / (4 * pi * 1.5))) < 1e-14);
    CHECK_THROWS_AS(assemble_correction(OpKind::S, sphere_ops(), p), ValidationError);
}

TEST_CASE("perturbed sphere: vector quadrature agrees with scalar reductions")
{
    ShCoeffs rad = perturbed_radius_coeffs(1.0, 0.05, 2, 0);
    VectorOps vo = build_vector_ops(rad, 6);
    Model M = build_model(rad, 6);
    CMat A = mnp_block(M, vo);
    int n = vo.n();
    double scale = A.norm();
    CHECK((vo.Mq.block(0, 0, n, n) - A.block(0, 0, n, n)).norm() < 1e-5 * scale);
    CHECK((vo.Mq.block(n, n, n, n) - A.block(n, n, n, n)).norm() < 1e-5 * scale);
    // M maps curls to curls exactly
    CHECK(vo.Mq.block(0, n, n, n).norm() < 1e-5 * scale);
    // and gradients acquire a genuine curl part off the sphere
    CHECK(vo.Mq.block(n, 0, n, n).norm() > 1e-3);
    CHECK_THROWS_AS(mnp_block(build_model(rad, 4), vo), ValidationError);
}
