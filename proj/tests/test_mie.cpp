#include <catch_amalgamated.hpp>

#include "mnp/mie.hpp"

using namespace mnp;

TEST_CASE("sphere MNP eigenvalues")
{
    CHECK(sphere_mnp_eigenvalue_exact(1, 1) == Rational(-1, 6));
    CHECK(sphere_mnp_eigenvalue_exact(2, 1) == Rational(1, 6));
    CHECK(sphere_mnp_eigenvalue_exact(2, 3) == Rational(1, 14));
    CHECK(sphere_mnp_eigenvalue_exact(1, 3).str() == "-1/14");
    CHECK(sphere_mnp_eigenvalue(2, 10) == Catch::Approx(1.0 / 42));
    CHECK_THROWS_AS(sphere_mnp_eigenvalue(1, 0), ValidationError);
    CHECK_THROWS_AS(sphere_mnp_eigenvalue(3, 2), ValidationError);
    for (int n : {1, 4, 9}) CHECK(sphere_mnp_eigenvalue_exact(1, n) == -sphere_mnp_eigenvalue_exact(2, n));
    CHECK(sphere_spectrum_relation(30));
    CHECK(Rational(2, -4) == Rational(-1, 2));
}

TEST_CASE("exact sphere potentials agree with quadrature")
{
    for (double r : {1.0, 0.7}) {
        auto g = std::make_shared<SurfaceGrid>(build_surface(sphere_radius_coeffs(r), 40));
        for (int l : {1, 2})
            for (int n = 1; n <= 5; ++n) {
                int m = n > 1 ? -2 : 1;
                std::vector<CVec3> F(g->size());
                for (int q = 0; q < g->size(); ++q) F[q] = vector_sph({l, n, m}, g->pos[q].normalized());
                OffBoundaryEvaluator ev(g, F);
                for (double s : {0.5, 2.0}) {
                    Vec3 x = s * r * sph_dir(1.1, 0.7);
                    CVec3 a = exact_sphere_potential(SphereMode{l, n, m, r}, 1.0, x, CurlKind::curlS);
                    CVec3 b = ev.eval(x, 1.0, OffKind::curlS_vec).vec;
                    INFO("l=" << l << " n=" << n << " r=" << r << " s=" << s);
                    CHECK((a - b).norm() < 1e-6 * b.norm());
                    a = exact_sphere_potential(SphereMode{l, n, m, r}, 1.0, x, CurlKind::curlcurlS);
                    b = ev.eval(x, 1.0, OffKind::curlcurlS_vec).vec;
                    CHECK((a - b).norm() < 1e-6 * b.norm());
                }
            }
    }
}

TEST_CASE("exact potentials: structure")
{
    // curl S[phi_2] has zero divergence, curl curl S[phi_1] is curl of curl S[phi_1]
    SphereMode md{1, 2, 1, 1.0};
    Vec3 x = 1.8 * sph_dir(0.6, 2.0);
    auto f = [&](const Vec3& y) { return exact_sphere_potential(md, 1.3, y, CurlKind::curlS); };
    CVec3 cc = fd_curl(f, x, 1e-4);
    CHECK((cc - exact_sphere_potential(md, 1.3, x, CurlKind::curlcurlS)).norm() < 1e-6 * cc.norm());
    Vec3 xi = 0.4 * sph_dir(2.0, -1.0);
    CVec3 ci = fd_curl(f, xi, 1e-4);
    CHECK((ci - exact_sphere_potential(md, 1.3, xi, CurlKind::curlcurlS)).norm() < 1e-6 * ci.norm());
    SphereDensity d{0.9, {{SphereMode{2, 1, 0}, 2.0}, {SphereMode{1, 3, -1}, cplx(0, 1)}}};
    CVec3 sum = 2.0 * exact_sphere_potential(SphereMode{2, 1, 0, 0.9}, 1.0, x, CurlKind::curlS) +
                cplx(0, 1) * exact_sphere_potential(SphereMode{1, 3, -1, 0.9}, 1.0, x, CurlKind::curlS);
    CHECK((exact_sphere_potential(d, 1.0, x, CurlKind::curlS) - sum).norm() < 1e-14);
    CHECK_THROWS_AS(exact_sphere_potential(md, 1.0, sph_dir(0.3, 0.3), CurlKind::curlS), ValidationError);
    CHECK_THROWS_AS(exact_sphere_potential(SphereMode{1, 2, 3}, 1.0, x, CurlKind::curlS), ValidationError);
}

TEST_CASE("multipoles satisfy Maxwell's equations")
{
    double omega = 0.8;
    cplx eps = 2.0, mu = 1.5;
    double k = omega * std::sqrt(2.0 * 1.5);
    for (auto kind : {MultipoleKind::TE_ext, MultipoleKind::TM_ext, MultipoleKind::TE_int, MultipoleKind::TM_int})
        for (int n : {1, 3}) {
            Vec3 x = 1.3 * sph_dir(0.7, 0.4);
            auto E = [&](const Vec3& y) { return multipole(kind, n, 1, k, eps, mu, omega, y).E; };
            auto H = [&](const Vec3& y) { return multipole(kind, n, 1, k, eps, mu, omega, y).H; };
            EH f = multipole(kind, n, 1, k, eps, mu, omega, x);
            CVec3 cE = fd_curl(E, x, 1e-4), cH = fd_curl(H, x, 1e-4);
            CHECK((cE - I1 * omega * mu * f.H).norm() < 1e-6 * cE.norm());
            CHECK((cH + I1 * omega * eps * f.E).norm() < 1e-6 * cH.norm());
        }
    // TE electric field is tangential
    EH te = multipole(MultipoleKind::TE_ext, 2, 0, 1.0, 1.0, 1.0, 1.0, Vec3(0.3, 0.4, 1.2));
    CHECK(std::abs(te.E.dot(Vec3(0.3, 0.4, 1.2).cast<cplx>())) < 1e-14);
    CHECK_THROWS_AS(multipole(MultipoleKind::TE_ext, 0, 0, 1.0, 1.0, 1.0, 1.0, Vec3(1, 0, 0)), ValidationError);
}
