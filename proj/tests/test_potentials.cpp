#include <catch_amalgamated.hpp>

#include "mnp/potentials.hpp"

#include <chrono>
#include <random>

using namespace mnp;

namespace {

double diag_err(const CMat& A, int L, const std::function<double(int)>& f)
{
    double e = 0;
    for (int n = 0; n <= L; ++n)
        for (int m = -n; m <= n; ++m) {
            int j = sh_index(n, m);
            for (int i = 0; i < A.rows() && i < sh_count(L); ++i) {
                cplx ref = (i == j) ? cplx(f(n)) : cplx(0.0);
                e = std::max(e, std::abs(A(i, j) - ref));
            }
        }
    return e;
}

const Model& perturbed_model()
{
    static Model M = build_model(perturbed_radius_coeffs(1.0, 0.05, 2, 0), 10);
    return M;
}

double rel(const CMat& a, const CMat& b) { return (a - b).norm() / b.norm(); }

} // namespace

TEST_CASE("sphere spectra of S, K, K*")
{
    for (double r : {1.0, 0.5}) {
        auto t0 = std::chrono::steady_clock::now();
        Model M = build_model(sphere_radius_coeffs(r), 12);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        INFO("radius " << r << " assembly " << secs << " s");
        CHECK(diag_err(M.AS, 12, [r](int n) { return -r / (2.0 * n + 1.0); }) < 1e-8);
        CHECK(diag_err(M.AKs, 12, [](int n) { return 1.0 / (2.0 * (2.0 * n + 1.0)); }) < 1e-8);
        CHECK(diag_err(M.AK, 12, [](int n) { return 1.0 / (2.0 * (2.0 * n + 1.0)); }) < 1e-8);
        CHECK(std::abs(M.AS(0, 0) + r) < 1e-10);
    }
}

TEST_CASE("assemble_scalar front end")
{
    SurfaceGrid g = build_surface(sphere_radius_coeffs(1.0), 10);
    OperatorMatrix S = assemble_scalar(OpKind::S, g, 6);
    CHECK(S.entries.rows() == 49);
    CHECK(std::abs(S.entries(sh_index(3, 1), sh_index(3, 1)) + 1.0 / 7) < 1e-9);
    CHECK_THROWS_AS(assemble_scalar(OpKind::L1, g, 6), ValidationError);
}

TEST_CASE("perturbed sphere: symmetry, duality, Calderon")
{
    const Model& M = perturbed_model();
    int D = M.D();
    // S is Hermitian in the complex basis (real symmetric kernel)
    CMat GS = M.GS.topLeftCorner(D, D);
    CHECK((GS - GS.adjoint()).norm() / GS.norm() < 1e-8);
    // <Y_i, K Y_j> = <K* Y_i, Y_j>
    CMat GK = M.GK.topLeftCorner(D, D), GKs = M.GKs.topLeftCorner(D, D);
    CHECK((GK - GKs.adjoint()).norm() / GK.norm() < 1e-8);
    // K S = S K* on the degree-L block
    CMat KS = (M.AK * M.AS).topLeftCorner(D, D);
    CMat SKs = (M.AS * M.AKs).topLeftCorner(D, D);
    INFO("calderon " << rel(KS, SKs));
    CHECK(rel(KS, SKs) < 1e-7);
    // K*[1] = 1/2 and K[sigma] is not needed; -S is positive definite
    CHECK(std::abs(M.AK(0, 0) - 0.5) < 1e-9);
    Eigen::SelfAdjointEigenSolver<CMat> es(-0.5 * (GS + GS.adjoint()));
    CHECK(es.eigenvalues().minCoeff() > 0);
    // K*[sigma] = sigma / 2
    CVec ks = M.AKs * M.sigma;
    CHECK((ks - 0.5 * M.sigma).head(D).norm() / M.sigma.norm() < 1e-8);
}

TEST_CASE("N and Q reductions on the sphere")
{
    Model M = build_model(sphere_radius_coeffs(1.0), 6);
    for (int n = 1; n <= 4; ++n) {
        TangentField c(ShCoeffs(6, true), ShCoeffs::unit(6, n, 1 % (n + 1)), Flavor::curl_trace);
        TangentField out = apply_N(c, M);
        double ref = -double(n * (n + 1)) / (2 * n + 1);
        int m = 1 % (n + 1);
        CHECK(std::abs(out.V.at(n, m) - ref) < 1e-9);
        CHECK(out.X.c.norm() < 1e-14);
        TangentField gq(ShCoeffs::unit(6, n, 0), ShCoeffs(6, true), Flavor::div_trace);
        TangentField oq = apply_Q(gq, M);
        CHECK(std::abs(oq.X.at(n, 0) - double(n * (n + 1)) / (2 * n + 1)) < 1e-9);
    }
    TangentField wrong(ShCoeffs::unit(6, 1, 0), ShCoeffs(6, true), Flavor::div_trace);
    CHECK_THROWS_AS(apply_N(wrong, M), ValidationError);
}

TEST_CASE("N kills gradients, Q kills curls on a perturbed sphere")
{
    const Model& M = perturbed_model();
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    ShCoeffs X(8, true), V(8, true);
    for (int j = 1; j < X.size(); ++j) {
        X.c[j] = cplx(nd(rng), nd(rng));
        V.c[j] = cplx(nd(rng), nd(rng));
    }
    TangentField grad_only(X, ShCoeffs(8, true), Flavor::curl_trace);
    TangentField curl_only(ShCoeffs(8, true), V, Flavor::curl_trace);
    double kill = apply_N(grad_only, M).V.c.norm();
    double keep = apply_N(curl_only, M).V.c.norm();
    CHECK(kill < 1e-8 * keep);
    TangentField c2(ShCoeffs(8, true), V, Flavor::div_trace);
    TangentField g2(X, ShCoeffs(8, true), Flavor::div_trace);
    CHECK(apply_Q(c2, M).X.c.norm() < 1e-8 * apply_Q(g2, M).X.c.norm());
}

TEST_CASE("curl and grad reductions")
{
    Model M = build_model(sphere_radius_coeffs(1.0), 5);
    OperatorMatrix K = M.op(OpKind::K);
    ShCoeffs V = ShCoeffs::unit(5, 3, -2);
    ShCoeffs a = mnp_curl_apply(V, K);
    CHECK(std::abs(a.at(3, -2) - 1.0 / 14) < 1e-9);
    ShCoeffs b = mnp_grad_apply(V, K);
    CHECK(std::abs(b.at(3, -2) + 1.0 / 14) < 1e-9);
    CHECK(std::abs(a.c[0]) == 0.0);
    CHECK_THROWS_AS(mnp_curl_apply(V, M.op(OpKind::S)), ValidationError);
}

TEST_CASE("off-boundary single layer matches the harmonic extension")
{
    auto g = std::make_shared<SurfaceGrid>(build_surface(sphere_radius_coeffs(1.0), 30));
    ShCoeffs phi = ShCoeffs::unit(3, 2, 1);
    Vec3 xo = 2.0 * sph_dir(0.8, 0.4), xi = 0.5 * sph_dir(2.1, -1.0);
    // exterior -(1/5) r^{-3} Y, interior -(1/5) r^2 Y
    cplx so = offboundary_eval(phi, 0.0, xo, OffKind::S, g).scalar;
    cplx si = offboundary_eval(phi, 0.0, xi, OffKind::S, g).scalar;
    CHECK(std::abs(so + ynm(2, 1, xo.normalized()) / (5.0 * 8.0)) < 1e-10);
    CHECK(std::abs(si + 0.25 * ynm(2, 1, xi.normalized()) / 5.0) < 1e-10);
    CHECK_THROWS_AS(offboundary_eval(phi, 0.0, Vec3(1.0, 0.01, 0.0), OffKind::S, g), AccuracyError);
    // div S[f] = S[div f] for a tangent field, k = 1
    TangentField f(ShCoeffs::unit(3, 2, 0), ShCoeffs::unit(3, 1, 1));
    cplx lhs = offboundary_eval(f, 1.0, xo, OffKind::divS_vec, g).scalar;
    ShCoeffs divf = ShCoeffs::unit(3, 2, 0);
    divf.c *= -6.0;
    cplx rhs = offboundary_eval(divf, 1.0, xo, OffKind::S, g).scalar;
    CHECK(std::abs(lhs - rhs) < 1e-9 * std::abs(rhs));
}

TEST_CASE("near-boundary normal derivative")
{
    ShCoeffs rad = sphere_radius_coeffs(1.0);
    ShCoeffs phi = ShCoeffs::unit(2, 2, 1);
    Vec3 d = sph_dir(0.9, 0.3);
    for (double t : {0.1, 0.025}) {
        cplx out = near_normal_derivative(rad, phi, d, t);
        cplx in = near_normal_derivative(rad, phi, d, -t);
        cplx y = ynm(2, 1, d);
        CHECK(std::abs(out - 3.0 / 5.0 * std::pow(1 + t, -4) * y) < 1e-10);
        CHECK(std::abs(in + 2.0 / 5.0 * (1 - t) * y) < 1e-10);
    }
}
