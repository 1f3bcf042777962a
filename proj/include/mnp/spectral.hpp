#pragma once

#include "potentials.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>
#include <random>
#include <string>

namespace mnp {

enum class SpecTag { Kstar, M_curl, Mstar_grad };
enum class GramKind { curl_Ninv, grad_Qinv, curl_N, grad_Q };

inline const char* spec_name(SpecTag t)
{
    switch (t) {
    case SpecTag::Kstar: return "Kstar";
    case SpecTag::M_curl: return "M_curl";
    case SpecTag::Mstar_grad: return "Mstar_grad";
    }
    return "?";
}

inline const char* gram_name(GramKind g)
{
    switch (g) {
    case GramKind::curl_Ninv: return "curl_Ninv";
    case GramKind::grad_Qinv: return "grad_Qinv";
    case GramKind::curl_N: return "curl_N";
    case GramKind::grad_Q: return "grad_Q";
    }
    return "?";
}

struct SpectralSet {
    SpecTag tag = SpecTag::Kstar;
    int L = 0;
    std::vector<double> values;   // sorted by |value| descending
    std::vector<CVec> vectors;    // theta_j (Kstar) or potentials V_j / X_j, degree L_op coefficients
    std::string gram;             // normalization tag
    double max_imag = 0.0;        // largest imaginary residue seen before symmetrization
    std::vector<std::string> log; // exclusions and ties

    int size() const { return static_cast<int>(values.size()); }
};

namespace detail {

inline CMat herm(const CMat& A) { return 0.5 * (A + A.adjoint()); }

// generalized Hermitian pencil H v = lambda G v through Cholesky of G
inline void hermitian_pencil(const CMat& H, const CMat& G, RVec& vals, CMat& vecs)
{
    Eigen::LLT<CMat> llt(G);
    if (llt.info() != Eigen::Success) throw AccuracyError("Gram matrix is not positive definite", 1.0);
    CMat Li = llt.matrixL().solve(CMat::Identity(G.rows(), G.cols()));
    CMat C = herm(Li * H * Li.adjoint());
    Eigen::SelfAdjointEigenSolver<CMat> es(C);
    vals = es.eigenvalues();
    vecs = llt.matrixU().solve(es.eigenvectors());
}

inline std::vector<int> order_by_abs(const RVec& v)
{
    std::vector<int> idx(v.size());
    for (int i = 0; i < v.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        double da = std::abs(v[a]), db = std::abs(v[b]);
        if (da != db) return da > db;
        return v[a] > v[b];
    });
    return idx;
}

} // namespace detail

// ---------------------------------------------------------------------------
// K* spectrum: Rayleigh-Ritz on span{Y_j : n <= L} in the -S inner product
// ---------------------------------------------------------------------------
inline SpectralSet np_spectrum(const Model& M)
{
    int D = M.D();
    const SurfaceGrid& g = *M.grid;
    CVec w(g.size());
    for (int q = 0; q < g.size(); ++q) w[q] = g.area_w[q];
    CMat VS = M.VS.leftCols(D), VKs = M.VKs.leftCols(D);
    CMat Gs = -M.GS.topLeftCorner(D, D);
    CMat H = -(VS.adjoint() * w.asDiagonal() * VKs);
    SpectralSet s;
    s.tag = SpecTag::Kstar;
    s.L = M.L;
    s.gram = "minus_S";
    s.max_imag = (H - H.adjoint()).norm() / std::max(H.norm(), 1e-300);
    RVec vals;
    CMat vecs;
    detail::hermitian_pencil(detail::herm(H), detail::herm(Gs), vals, vecs);
    for (int i : detail::order_by_abs(vals)) {
        s.values.push_back(vals[i]);
        s.vectors.push_back(M.lift(vecs.col(i)));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Grams on potentials (degree L_op coefficient vectors)
// ---------------------------------------------------------------------------
inline CVec gram_density(const Model& M, const CVec& v) { return M.S_inv(M.P_sigma(M.lift(v))); }

inline cplx gram(GramKind kind, const CVec& a, const CVec& b, const Model& M)
{
    const CMat& GS = M.GS;
    switch (kind) {
    case GramKind::curl_Ninv:
    case GramKind::grad_Qinv: {
        CVec ta = gram_density(M, a), tb = gram_density(M, b);
        return -0.5 * ((ta.adjoint() * GS * tb)(0, 0) + std::conj((tb.adjoint() * GS * ta)(0, 0)));
    }
    case GramKind::curl_N:
    case GramKind::grad_Q: {
        CVec la = M.AL * M.lift(a), lb = M.AL * M.lift(b);
        return -0.5 * ((la.adjoint() * GS * lb)(0, 0) + std::conj((lb.adjoint() * GS * la)(0, 0)));
    }
    }
    return 0.0;
}

inline cplx gram(GramKind kind, const TangentField& a, const TangentField& b, const Model& M)
{
    bool curl = kind == GramKind::curl_Ninv || kind == GramKind::curl_N;
    const ShCoeffs& pa = curl ? a.V : a.X;
    const ShCoeffs& pb = curl ? b.V : b.X;
    const ShCoeffs& qa = curl ? a.X : a.V;
    const ShCoeffs& qb = curl ? b.X : b.V;
    if (qa.c.norm() > 1e-12 * std::max(1.0, pa.c.norm()) || qb.c.norm() > 1e-12 * std::max(1.0, pb.c.norm()))
        throw ValidationError(std::string("gram ") + gram_name(kind) + ": field outside its subspace", "a");
    return gram(kind, pa.c, pb.c, M);
}

// L^2(boundary) norm of the field grad u (equivalently vec_curl u)
inline double field_norm(const Model& M, const CVec& u)
{
    CVec v = M.lift(u);
    return std::sqrt(std::max(0.0, (v.adjoint() * M.St * v)(0, 0).real()));
}

// ---------------------------------------------------------------------------
// M on the curl subspace and M* on the gradient subspace
// ---------------------------------------------------------------------------
inline std::pair<SpectralSet, SpectralSet> mnp_spectra(const SpectralSet& np, const Model& M)
{
    if (np.tag != SpecTag::Kstar) throw ValidationError("mnp_spectra: need the K* set", "np");
    SpectralSet c, gset;
    c.tag = SpecTag::M_curl;
    gset.tag = SpecTag::Mstar_grad;
    c.L = gset.L = np.L;
    c.gram = "curl_Ninv";
    gset.gram = "grad_Qinv";
    bool dropped = false;
    for (int j = 0; j < np.size(); ++j) {
        double mu = np.values[j];
        if (!dropped && std::abs(mu - 0.5) < 1e-8) {
            dropped = true;
            c.log.push_back("excluded mu = " + std::to_string(mu) + " (constant potential, vec_curl of it vanishes)");
            gset.log.push_back("excluded -mu = " + std::to_string(-mu));
            continue;
        }
        CVec V = M.AS * np.vectors[j];
        V[0] = 0.0;
        double nrm = std::sqrt(std::abs(gram(GramKind::curl_Ninv, V, V, M).real()));
        V /= nrm;
        c.values.push_back(mu);
        c.vectors.push_back(V);
        gset.values.push_back(-mu);
        gset.vectors.push_back(V);
    }
    if (!dropped) {
        c.log.push_back("no eigenvalue within 1e-8 of 1/2; top value kept");
        gset.log.push_back(c.log.back());
    }
    return {c, gset};
}

// Independent route to sigma(M_curl): K S in the -S Gram, restricted to
// densities with zero boundary mean.
inline SpectralSet mcurl_pencil_spectrum(const Model& M)
{
    int D = M.D();
    CMat H = -(M.GK.topRows(D) * M.AS.leftCols(D));
    CMat Gs = -M.GS.topLeftCorner(D, D);
    // constraint row <1, theta> = 0
    CVec c = M.Mm.row(0).head(D).adjoint();
    Eigen::HouseholderQR<CMat> qr(c);
    CMat Q = qr.householderQ();
    CMat Z = Q.rightCols(D - 1);
    RVec vals;
    CMat vecs;
    detail::hermitian_pencil(detail::herm(Z.adjoint() * H * Z), detail::herm(Z.adjoint() * Gs * Z), vals, vecs);
    SpectralSet s;
    s.tag = SpecTag::M_curl;
    s.L = M.L;
    s.gram = "curl_Ninv";
    for (int i : detail::order_by_abs(vals)) {
        s.values.push_back(vals[i]);
        CVec V = M.AS * M.lift(Z * vecs.col(i));
        V[0] = 0.0;
        s.vectors.push_back(V);
    }
    return s;
}

// potential of M[vec_curl V] on coefficients (K V, mean removed)
inline CVec mcurl_apply(const Model& M, const CVec& V)
{
    CVec r = M.AK * M.lift(V);
    r[0] = 0.0;
    return r;
}

// curl part of M*[vec_curl W]: Delta^{-1} K* Delta W
inline CVec mstar_curl_apply(const Model& M, const CVec& W) { return M.lap_inv(M.AKs * (M.AL * M.lift(W))); }

// gradient part of M[grad X]: -Delta^{-1} K* Delta X
inline CVec m_grad_part(const Model& M, const CVec& X) { return -mstar_curl_apply(M, X); }

// ---------------------------------------------------------------------------
// Calderon residuals; output restricted to degree L
// ---------------------------------------------------------------------------
inline double calderon_residual(SpecTag which, const TangentField& test, const Model& M)
{
    int D = M.D();
    if (which == SpecTag::M_curl) {
        if (test.X.c.norm() > 0) throw ValidationError("calderon_residual(curl): test must be a pure curl field", "test");
        CVec V = M.lift(test.V.c);
        // N M* [curl V]: S[-Delta W], W the curl potential of M*[curl V]
        CVec W = mstar_curl_apply(M, V);
        CVec lhs = -(M.AS * (M.AL * W));
        // M N [curl V]: K S[-Delta V]
        CVec rhs = -(M.AK * (M.AS * (M.AL * V)));
        CVec r = CVec::Zero(M.Dop());
        r.head(D) = (lhs - rhs).head(D);
        r[0] = 0.0;
        return field_norm(M, r) / field_norm(M, V);
    }
    if (which == SpecTag::Mstar_grad) {
        if (test.V.c.norm() > 0) throw ValidationError("calderon_residual(grad): test must be a pure gradient field", "test");
        CVec X = M.lift(test.X.c);
        // M* Q [grad X]: -K S Delta X
        CVec lhs = -(M.AK * (M.AS * (M.AL * X)));
        // Q M [grad X]: S Delta W, W the gradient potential of M[grad X]
        CVec W = m_grad_part(M, X);
        CVec rhs = M.AS * (M.AL * W);
        CVec r = CVec::Zero(M.Dop());
        r.head(D) = (lhs - rhs).head(D);
        r[0] = 0.0;
        return field_norm(M, r) / field_norm(M, X);
    }
    throw ValidationError("calderon_residual: which must be curl or grad", "which");
}

inline double scalar_calderon_residual(const Model& M)
{
    int D = M.D();
    CMat KS = (M.AK * M.AS).topLeftCorner(D, D), SK = (M.AS * M.AKs).topLeftCorner(D, D);
    return (KS - SK).norm() / KS.norm();
}

// Gram matrix of curl_Ninv (= grad_Qinv) on degree-L_op coefficients
inline CMat gram_matrix_inv(const Model& M)
{
    int n = M.Dop();
    CMat P = CMat::Identity(n, n);
    CMat row = M.sigma.adjoint() * M.Mm;
    P.row(0) -= (std::sqrt(4.0 * pi) / M.sigma_mass) * row;
    CMat T = M.AS_lu.solve(P);
    return detail::herm(-(T.adjoint() * M.GS * T));
}

inline double self_adjointness_residual(SpecTag op, const Model& M, bool identity_gram = false)
{
    if (op == SpecTag::Kstar) throw ValidationError("self_adjointness_residual: op must be M_curl or Mstar_grad", "op");
    int D = M.D();
    CMat A = (op == SpecTag::M_curl) ? M.AK : CMat(-M.AK);
    CMat G = identity_gram ? CMat::Identity(M.Dop(), M.Dop()) : gram_matrix_inv(M);
    CMat GA = (G * A).block(1, 1, D - 1, D - 1);
    CMat AG = (A.adjoint() * G).block(1, 1, D - 1, D - 1);
    return (GA - AG).norm() / GA.norm();
}

// ---------------------------------------------------------------------------
// Norm equivalence (observed ratios only)
// ---------------------------------------------------------------------------
struct NormRatios {
    double min_ratio = 0, max_ratio = 0;
};

inline NormRatios norm_equivalence_report(const Model& M, int samples, bool curl_flavor, std::uint64_t seed = 7)
{
    if (samples < 10) throw ValidationError("norm_equivalence_report: need at least 10 samples", "sample_count");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    NormRatios r{1e300, 0};
    for (int s = 0; s < samples; ++s) {
        CVec v = CVec::Zero(M.D());
        for (int j = 1; j < M.D(); ++j) v[j] = cplx(nd(rng), nd(rng));
        double gn = std::sqrt(gram(curl_flavor ? GramKind::curl_Ninv : GramKind::grad_Qinv, v, v, M).real());
        double sob = 0;
        for (int n = 1; n <= M.L; ++n)
            for (int m = -n; m <= n; ++m) sob += std::sqrt(1.0 + n * (n + 1.0)) * std::norm(v[sh_index(n, m)]);
        double q = gn / std::sqrt(sob);
        r.min_ratio = std::min(r.min_ratio, q);
        r.max_ratio = std::max(r.max_ratio, q);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Completeness: g = sum_j c_j N^{-1}[phi_j], c_j = -<g, phi_j>
// ---------------------------------------------------------------------------
// potential of N^{-1}[vec_curl V]
inline CVec n_inverse_potential(const Model& M, const CVec& V) { return -M.lap_inv(gram_density(M, V)); }

inline double completeness_error(const Model& M, const SpectralSet& curl_set, const CVec& Vg, int J)
{
    CVec g = M.lift(Vg);
    CVec acc = CVec::Zero(M.Dop());
    for (int j = 0; j < J && j < curl_set.size(); ++j) {
        const CVec& Vj = curl_set.vectors[j];
        cplx c = -(Vj.adjoint() * M.St * g)(0, 0);
        acc += c * n_inverse_potential(M, Vj);
    }
    return field_norm(M, acc - g) / field_norm(M, g);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------
inline nlohmann::json to_json(const SpectralSet& s, bool with_vectors = true)
{
    nlohmann::json j;
    j["operator"] = spec_name(s.tag);
    j["L"] = s.L;
    j["eigenvalues"] = s.values;
    j["gram"] = s.gram;
    j["log"] = s.log;
    if (with_vectors) {
        nlohmann::json pots = nlohmann::json::array();
        for (const auto& v : s.vectors) {
            nlohmann::json mode = nlohmann::json::array();
            for (int n = 0; n <= s.L; ++n)
                for (int m = -n; m <= n; ++m) {
                    cplx c = v[sh_index(n, m)];
                    if (std::abs(c) > 1e-14) mode.push_back({n, m, c.real(), c.imag()});
                }
            pots.push_back(mode);
        }
        j["potentials"] = pots;
    }
    return j;
}

inline nlohmann::json to_json(const OperatorMatrix& A)
{
    nlohmann::json j;
    j["kind"] = op_name(A.kind);
    j["L"] = A.L;
    j["grid_id"] = A.grid_id;
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < A.entries.rows(); ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (int k = 0; k < A.entries.cols(); ++k) {
            r.push_back(A.entries(i, k).real());
            r.push_back(A.entries(i, k).imag());
        }
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j;
}

// eigenvalue clusters for CSV tables
inline std::vector<int> cluster_ids(const std::vector<double>& v, double tol = 1e-6)
{
    std::vector<int> id(v.size());
    int c = 0;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i > 0 && std::abs(v[i] - v[i - 1]) > tol) ++c;
        id[i] = c;
    }
    return id;
}

} // namespace mnp
