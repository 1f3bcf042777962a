#include <catch_amalgamated.hpp>

#include "mnp/spectral.hpp"

#include <random>

using namespace mnp;

namespace {

const Model& sphere12()
{
    static Model M = build_model(sphere_radius_coeffs(1.0), 12);
    return M;
}

const Model& bumpy12()
{
    static Model M = build_model(perturbed_radius_coeffs(1.0, 0.05, 2, 0), 12);
    return M;
}

CVec random_potential(int L, std::mt19937_64& rng, double decay = 0.0)
{
    std::normal_distribution<double> nd;
    CVec v = CVec::Zero(sh_count(L));
    for (int n = 1; n <= L; ++n)
        for (int m = -n; m <= n; ++m) v[sh_index(n, m)] = cplx(nd(rng), nd(rng)) * std::pow(n, -decay);
    return v;
}

} // namespace

TEST_CASE("K* spectrum on spheres")
{
    const Model& M = sphere12();
    SpectralSet s = np_spectrum(M);
    REQUIRE(s.size() == 169);
    int j = 0;
    for (int n = 0; n <= 12; ++n)
        for (int k = 0; k < 2 * n + 1; ++k, ++j) CHECK(std::abs(s.values[j] - 1.0 / (2 * (2 * n + 1))) < 1e-9);
    CHECK(std::abs(s.values.back()) < std::abs(s.values.front()) / 10);
    for (size_t i = 1; i < s.values.size(); ++i) CHECK(std::abs(s.values[i]) <= std::abs(s.values[i - 1]) + 1e-12);
    // sorted value j ~ n^2 behaves like 1/(4 sqrt(j))
    CHECK(std::abs(s.values[144] * 4 * std::sqrt(144.0) - 1.0) < 0.05);

    for (double r : {0.5, 2.0}) {
        Model Mr = build_model(sphere_radius_coeffs(r), 6);
        SpectralSet sr = np_spectrum(Mr);
        CHECK(std::abs(sr.values[0] - 0.5) < 1e-9);
        CHECK(std::abs(sr.values[1] - 1.0 / 6) < 1e-9);
        CHECK(std::abs(sr.values[48] - 1.0 / 26) < 1e-9);
    }
}

TEST_CASE("K* spectrum on a perturbed sphere")
{
    const Model& M = bumpy12();
    SpectralSet s = np_spectrum(M);
    CHECK(s.max_imag < 1e-7);
    CHECK(std::abs(s.values[0] - 0.5) < 1e-9);
    for (size_t i = 1; i < s.values.size(); ++i) {
        CHECK(s.values[i] < 0.5);
        CHECK(s.values[i] > -0.5);
    }
    // -S Gram orthonormality of the Ritz vectors
    CMat Gs = -M.GS;
    double worst = 0;
    for (int i = 0; i < s.size(); i += 11)
        for (int j = 0; j < s.size(); j += 13)
            worst = std::max(worst, std::abs((s.vectors[i].adjoint() * Gs * s.vectors[j])(0, 0) - (i == j ? 1.0 : 0.0)));
    CHECK(worst < 1e-7);
}

TEST_CASE("MNP spectra on the sphere")
{
    const Model& M = sphere12();
    SpectralSet np = np_spectrum(M);
    auto [c, g] = mnp_spectra(np, M);
    REQUIRE(c.size() == 168);
    CHECK(c.log.size() == 1);
    int j = 0;
    for (int n = 1; n <= 12; ++n)
        for (int k = 0; k < 2 * n + 1; ++k, ++j) {
            CHECK(std::abs(c.values[j] - 1.0 / (2 * (2 * n + 1))) < 1e-9);
            CHECK(std::abs(g.values[j] + 1.0 / (2 * (2 * n + 1))) < 1e-9);
        }
    // potentials V_j: degree-n content only, Gram-normalized
    for (int i = 0; i < 20; ++i) CHECK(std::abs(gram(GramKind::curl_Ninv, c.vectors[i], c.vectors[i], M) - 1.0) < 1e-9);
    SpectralSet mc = mcurl_pencil_spectrum(M);
    for (int i = 0; i < c.size(); ++i) CHECK(std::abs(mc.values[i] - c.values[i]) < 1e-9);
}

TEST_CASE("spectrum identity and eigen-relations on the perturbed sphere")
{
    const Model& M = bumpy12();
    SpectralSet np = np_spectrum(M);
    auto [c, g] = mnp_spectra(np, M);
    SpectralSet mc = mcurl_pencil_spectrum(M);
    REQUIRE(mc.size() == c.size());
    double worst = 0;
    for (int i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(mc.values[i] - c.values[i]));
    CHECK(worst < 1e-7);

    // Gram orthonormality
    double go = 0;
    for (int i = 0; i < c.size(); i += 5)
        for (int j = 0; j < c.size(); j += 7)
            go = std::max(go, std::abs(gram(GramKind::curl_Ninv, c.vectors[i], c.vectors[j], M) - (i == j ? 1.0 : 0.0)));
    CHECK(go < 1e-7);

    // apply-and-compare on the resolved half of the spectrum
    for (int j = 0; j < c.size() / 2; ++j) {
        CVec r = mcurl_apply(M, c.vectors[j]) - c.values[j] * c.vectors[j];
        CHECK(r.head(M.D()).norm() < 1e-6 * c.vectors[j].norm());
    }

    // N^{-1}[phi_j] are eigenvectors of the projected M* with the same eigenvalue
    for (int j = 0; j < c.size() / 2; j += 3) {
        CVec W = n_inverse_potential(M, c.vectors[j]);
        CVec r = mstar_curl_apply(M, W) - c.values[j] * W;
        CHECK(field_norm(M, CVec(r.head(M.D()))) < 1e-6 * field_norm(M, W));
    }
}

TEST_CASE("gram forms")
{
    const Model& S = sphere12();
    // sphere, V = Y_n^m: curl_Ninv = 2n+1, curl_N = (n(n+1))^2/(2n+1)
    for (int n : {1, 3, 6}) {
        CVec v = CVec::Zero(S.D());
        v[sh_index(n, -1)] = 1.0;
        CHECK(std::abs(gram(GramKind::curl_Ninv, v, v, S) - double(2 * n + 1)) < 1e-9);
        double nn = n * (n + 1.0);
        CHECK(std::abs(gram(GramKind::curl_N, v, v, S) - nn * nn / (2 * n + 1)) < 1e-8);
    }
    CVec zero = CVec::Zero(S.D());
    CHECK(std::abs(gram(GramKind::curl_Ninv, zero, zero, S)) == 0.0);

    const Model& M = bumpy12();
    std::mt19937_64 rng(4);
    for (int t = 0; t < 5; ++t) {
        CVec a = random_potential(12, rng), b = random_potential(12, rng);
        for (GramKind k : {GramKind::curl_Ninv, GramKind::grad_Qinv, GramKind::curl_N, GramKind::grad_Q}) {
            cplx ab = gram(k, a, b, M), ba = gram(k, b, a, M);
            CHECK(std::abs(ab - std::conj(ba)) < 1e-9 * std::abs(ab));
            CHECK(gram(k, a, a, M).real() > 0);
        }
    }
    TangentField mixed(ShCoeffs::unit(3, 1, 0), ShCoeffs::unit(3, 2, 0));
    CHECK_THROWS_AS(gram(GramKind::curl_Ninv, mixed, mixed, M), ValidationError);
}

TEST_CASE("Calderon residuals")
{
    std::mt19937_64 rng(9);
    for (const Model* M : {&sphere12(), &bumpy12()}) {
        double tol = M->sphere() ? 1e-9 : 1e-5;
        for (int t = 0; t < 10; ++t) {
            ShCoeffs V(12, random_potential(12, rng), true);
            CHECK(calderon_residual(SpecTag::M_curl, TangentField(ShCoeffs(12, true), V, Flavor::curl_trace), *M) < tol);
            CHECK(calderon_residual(SpecTag::Mstar_grad, TangentField(V, ShCoeffs(12, true)), *M) < tol);
        }
        CHECK(scalar_calderon_residual(*M) < 1e-6);
    }
    ShCoeffs V(12, random_potential(12, rng), true);
    CHECK_THROWS_AS(calderon_residual(SpecTag::M_curl, TangentField(V, V), sphere12()), ValidationError);
}

TEST_CASE("self-adjointness in the weighted Gram")
{
    CHECK(self_adjointness_residual(SpecTag::M_curl, sphere12()) < 1e-10);
    const Model& M = bumpy12();
    CHECK(self_adjointness_residual(SpecTag::M_curl, M) < 1e-5);
    CHECK(self_adjointness_residual(SpecTag::Mstar_grad, M) < 1e-5);
    CHECK(self_adjointness_residual(SpecTag::M_curl, M, true) > 1e-3);
    CHECK(self_adjointness_residual(SpecTag::Mstar_grad, M, true) > 1e-3);
}

TEST_CASE("norm equivalence report")
{
    NormRatios r = norm_equivalence_report(sphere12(), 12, true);
    CHECK(r.min_ratio > 0);
    CHECK(r.max_ratio / r.min_ratio <= 50);
    NormRatios q = norm_equivalence_report(bumpy12(), 12, false);
    CHECK(std::isfinite(q.max_ratio));
    CHECK(q.min_ratio > 0);
    CHECK_THROWS_AS(norm_equivalence_report(sphere12(), 3, true), ValidationError);
}

TEST_CASE("completeness of the curl eigenbasis")
{
    std::mt19937_64 rng(13);
    for (const Model* M : {&sphere12(), &bumpy12()}) {
        SpectralSet np = np_spectrum(*M);
        auto [c, g] = mnp_spectra(np, *M);
        CVec Vg = M->lift(random_potential(6, rng, 1.0));
        double prev = 1e300;
        for (int J : {10, 40, 100, c.size()}) {
            double e = completeness_error(*M, c, Vg, J);
            CHECK(e <= prev * (1 + 1e-9) + 1e-13);
            prev = e;
        }
        CHECK(prev < 1e-4);
    }
}

TEST_CASE("json export")
{
    SpectralSet s = np_spectrum(sphere12());
    auto j = to_json(s, false);
    CHECK(j["operator"] == "Kstar");
    CHECK(j["eigenvalues"].size() == 169);
    auto k = to_json(sphere12().op(OpKind::S, 2));
    CHECK(k["rows"].size() == 9);
    CHECK(k["rows"][0].size() == 18);
}
