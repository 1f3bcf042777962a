#pragma once

#include "mie.hpp"
#include "spectral.hpp"

#include <optional>

namespace mnp {

// tau = (1 - 2 lambda) / (1 + 2 lambda), inverse of (1 - tau)/(2(1 + tau)) = lambda
inline double resonance_tau(double lambda)
{
    if (!(lambda > -0.5 && lambda < 0.5)) throw ValidationError("resonance_tau: lambda must lie in (-1/2, 1/2)", "lambda");
    if (lambda == 0.0) throw ValidationError("resonance_tau: lambda = 0 gives tau = 1, which is excluded", "lambda");
    return (1.0 - 2.0 * lambda) / (1.0 + 2.0 * lambda);
}

inline Rational resonance_tau_exact(const Rational& lambda)
{
    Rational h(1, 2);
    if (!(lambda.value() > -0.5 && lambda.value() < 0.5))
        throw ValidationError("resonance_tau: lambda must lie in (-1/2, 1/2)", "lambda");
    if (lambda.num == 0) throw ValidationError("resonance_tau: lambda = 0 gives tau = 1, which is excluded", "lambda");
    Rational two(2, 1), one(1, 1);
    return (one - two * lambda) / (one + two * lambda);
}

// (1 - tau) / (2 (1 + tau))
inline double resonance_lambda(double tau) { return (1.0 - tau) / (2.0 * (1.0 + tau)); }

struct PlasmonMode {
    bool sphere = false;
    int j = 0;               // general surface index (1-based, |lambda| descending)
    SphereMode sm;           // sphere fast path
    double lambda = 0.0, tau = 1.0;
    cplx scale = 1.0;        // sphere: multiplies phi_{l,n}^m
    TangentField density;    // general surface
    MaterialConfig mat;
};

// Sphere mode phi = c phi_{l,n}^m, c chosen so the potential has unit Gram norm
// (2n+1 for Y_n^m, so c = sqrt(n(n+1)/(2n+1)))
inline PlasmonMode sphere_plasmon_mode(int l, int n, int m, double r = 1.0, double omega = 1.0, bool normalize = true)
{
    PlasmonMode pm;
    pm.sphere = true;
    pm.sm = SphereMode{l, n, m, r};
    pm.sm.check();
    pm.lambda = sphere_mnp_eigenvalue(l, n);
    pm.tau = resonance_tau(pm.lambda);
    pm.mat = MaterialConfig::preset(pm.tau, omega);
    pm.scale = normalize ? std::sqrt(n * (n + 1.0) / ((2.0 * n + 1.0) * r * r * r)) : 1.0;
    return pm;
}

// Modes of M on the curl subspace of a general surface: phi_j = vec_curl V_j
inline std::vector<PlasmonMode> general_plasmon_modes(const SpectralSet& curl_set, const Model& M, double omega = 1.0)
{
    if (curl_set.tag != SpecTag::M_curl) throw ValidationError("general_plasmon_modes: need the M_curl set", "set");
    std::vector<PlasmonMode> out;
    int Lo = M.L_op;
    for (int j = 0; j < curl_set.size(); ++j) {
        double lam = curl_set.values[j];
        if (lam == 0.0 || std::abs(lam) >= 0.5) continue;
        PlasmonMode pm;
        pm.j = j + 1;
        pm.lambda = lam;
        pm.tau = resonance_tau(lam);
        pm.mat = MaterialConfig::preset(pm.tau, omega);
        CVec v = M.lift(curl_set.vectors[j]);
        pm.density = TangentField(ShCoeffs(Lo, true), ShCoeffs(Lo, v, true));
        out.push_back(std::move(pm));
    }
    return out;
}

// E = mu curl S^k[phi] + curl curl S^k[phi]
// H = -(i/omega) curl curl S^k[phi] - i k^2/(omega mu) curl S^k[phi]
inline EH fields_from_potentials(const CVec3& cS, const CVec3& ccS, cplx mu, cplx k, double omega)
{
    EH f;
    f.E = mu * cS + ccS;
    f.H = -(I1 / omega) * ccS - (I1 * k * k / (omega * mu)) * cS;
    return f;
}

class PlasmonFieldEvaluator {
public:
    // general surface: node quadrature of the density on grid
    PlasmonFieldEvaluator(const PlasmonMode& mode, std::shared_ptr<const SurfaceGrid> grid) : mode_(mode)
    {
        if (!mode.sphere) {
            if (!grid) throw ValidationError("plasmon_field: general mode needs a grid", "grid");
            ev_.emplace(grid, mode.density);
        }
    }
    explicit PlasmonFieldEvaluator(const PlasmonMode& mode) : PlasmonFieldEvaluator(mode, nullptr) {}

    bool inside(const Vec3& x) const
    {
        if (mode_.sphere) return x.norm() < mode_.sm.r;
        const SurfaceGrid& g = ev_->grid();
        double rr = x.norm();
        if (rr == 0.0) return true;
        return rr < eval_radius(g.radius_coeffs, x / rr).rho;
    }

    EH eval(const Vec3& x, bool force_quadrature = false) const
    {
        bool in = inside(x);
        const MaterialConfig& m = mode_.mat;
        cplx mu = in ? m.mu_c : m.mu_e;
        cplx k = in ? m.k_c() : m.k_e();
        CVec3 cS, ccS;
        if (mode_.sphere && !force_quadrature) {
            if (std::abs(k.imag()) > 1e-14 * std::abs(k)) throw ValidationError("plasmon_field: sphere path needs real k", "k");
            cS = mode_.scale * exact_sphere_potential(mode_.sm, k.real(), x, CurlKind::curlS);
            ccS = mode_.scale * exact_sphere_potential(mode_.sm, k.real(), x, CurlKind::curlcurlS);
        } else {
            const OffBoundaryEvaluator& e = quad();
            cS = e.eval(x, k, OffKind::curlS_vec).vec;
            ccS = e.eval(x, k, OffKind::curlcurlS_vec).vec;
        }
        return fields_from_potentials(cS, ccS, mu, k, m.omega);
    }

    // sphere modes through node quadrature on a given grid (dual-path check)
    void attach_grid(std::shared_ptr<const SurfaceGrid> g)
    {
        if (!mode_.sphere) return;
        std::vector<CVec3> F(g->size());
        for (int q = 0; q < g->size(); ++q)
            F[q] = mode_.scale * vector_sph({mode_.sm.l, mode_.sm.n, mode_.sm.m}, g->pos[q].normalized());
        ev_.emplace(g, std::move(F));
    }

private:
    const OffBoundaryEvaluator& quad() const
    {
        if (!ev_) throw ValidationError("plasmon_field: no quadrature grid attached", "grid");
        return *ev_;
    }
    PlasmonMode mode_;
    std::optional<OffBoundaryEvaluator> ev_;
};

inline EH plasmon_field(const PlasmonMode& mode, const Vec3& x, std::shared_ptr<const SurfaceGrid> grid = nullptr)
{
    return PlasmonFieldEvaluator(mode, std::move(grid)).eval(x);
}

// ---------------------------------------------------------------------------
// Localization diagnostics
// ---------------------------------------------------------------------------
struct ASStatistic {
    std::vector<double> sigma;
    std::vector<int> N;
    std::vector<std::vector<double>> fraction; // [sigma][N]
    double threshold = 0.05;
    bool verdict = false;
};

// fraction(sigma, N) = #{j <= N : |c_j| > sigma j^{-kappa}} / N
inline ASStatistic almost_sure_statistic(const std::vector<double>& c, double kappa, const std::vector<double>& sigma_grid,
                                         std::vector<int> N_grid, double threshold = 0.05)
{
    if (sigma_grid.empty()) throw ValidationError("almost_sure_statistic: empty sigma grid", "sigma_grid");
    if (N_grid.empty()) throw ValidationError("almost_sure_statistic: empty N grid", "N_grid");
    if (kappa < 0) throw ValidationError("almost_sure_statistic: kappa must be >= 0", "kappa");
    std::sort(N_grid.begin(), N_grid.end());
    if (N_grid.front() < 1) throw ValidationError("almost_sure_statistic: N must be >= 1", "N_grid");
    if (static_cast<int>(c.size()) < N_grid.back())
        throw ValidationError("almost_sure_statistic: sequence shorter than max N", "c");
    ASStatistic s;
    s.sigma = sigma_grid;
    s.N = N_grid;
    s.threshold = threshold;
    s.verdict = true;
    for (double sg : sigma_grid) {
        std::vector<double> row;
        int count = 0, upto = 0;
        for (int Nn : N_grid) {
            for (; upto < Nn; ++upto) {
                double jj = upto + 1.0;
                if (std::abs(c[upto]) > sg * std::pow(jj, -kappa)) ++count;
            }
            row.push_back(double(count) / Nn);
        }
        bool dec = true;
        for (size_t i = 1; i < row.size(); ++i) dec = dec && row[i] <= row[i - 1];
        if (!(row.back() < threshold && dec)) s.verdict = false;
        s.fraction.push_back(row);
    }
    return s;
}

struct DecayReport {
    std::vector<Vec3> points;
    std::vector<double> dist;
    std::vector<double> lambda, tau;
    std::vector<double> normE, normH;  // RMS over the point set
    std::vector<double> partial;       // sum_{j<=J} (|E_j|^2 + |H_j|^2)
    std::vector<std::vector<double>> absE, absH; // [mode][point]
    bool plateau = false;
    double last_quartile_growth = 0.0;
    double fitted_rate = 0.0;          // slope of log |E_j| against j
};

inline DecayReport localization_scan(const std::vector<PlasmonMode>& modes, const std::vector<Vec3>& points, double eps,
                                     std::shared_ptr<const SurfaceGrid> grid, double plateau_tol = 0.05)
{
    if (modes.empty()) throw ValidationError("localization_scan: no modes", "modes");
    if (points.empty()) throw ValidationError("localization_scan: no points", "points");
    DecayReport rep;
    rep.points = points;
    for (const Vec3& x : points) {
        double d;
        if (grid) d = tubular_distance(x, *grid);
        else d = std::abs(x.norm() - modes.front().sm.r);
        if (!(d > eps)) throw ValidationError("localization_scan: point inside the eps-tube", "points");
        rep.dist.push_back(d);
    }
    int nm = static_cast<int>(modes.size()), np = static_cast<int>(points.size());
    rep.normE.assign(nm, 0.0);
    rep.normH.assign(nm, 0.0);
    rep.absE.assign(nm, std::vector<double>(np));
    rep.absH.assign(nm, std::vector<double>(np));
    parallel_for(nm, [&](int j) {
        PlasmonFieldEvaluator ev(modes[j], grid);
        double se = 0, sh = 0;
        for (int p = 0; p < np; ++p) {
            EH f = ev.eval(points[p]);
            rep.absE[j][p] = f.E.norm();
            rep.absH[j][p] = f.H.norm();
            se += f.E.squaredNorm();
            sh += f.H.squaredNorm();
        }
        rep.normE[j] = std::sqrt(se / np);
        rep.normH[j] = std::sqrt(sh / np);
    });
    double acc = 0;
    for (int j = 0; j < nm; ++j) {
        rep.lambda.push_back(modes[j].lambda);
        rep.tau.push_back(modes[j].tau);
        acc += rep.normE[j] * rep.normE[j] + rep.normH[j] * rep.normH[j];
        rep.partial.push_back(acc);
    }
    int q3 = (3 * nm) / 4;
    double base = q3 > 0 ? rep.partial[q3 - 1] : 0.0;
    rep.last_quartile_growth = acc > 0 ? (acc - base) / acc : 0.0;
    rep.plateau = rep.last_quartile_growth <= plateau_tol;
    // least-squares slope of log |E_j| against j
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (int j = 0; j < nm; ++j) {
        if (!(rep.normE[j] > 0)) continue;
        double xj = j + 1.0, yj = std::log(rep.normE[j]);
        sx += xj;
        sy += yj;
        sxx += xj * xj;
        sxy += xj * yj;
        ++cnt;
    }
    if (cnt > 1) rep.fitted_rate = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    return rep;
}

// count points at tubular distance >= d from the boundary, half outside the
// particle (shell [rmax + d, rmax + 2d]) and half inside (ball of radius rmin - d)
inline std::vector<Vec3> point_cloud_off_tube(const SurfaceGrid& g, int count, double d, std::uint64_t seed)
{
    if (count < 1) throw ValidationError("point_cloud_off_tube: count must be >= 1", "count");
    if (!(d > 0)) throw ValidationError("point_cloud_off_tube: distance must be > 0", "distance");
    double rmax = *std::max_element(g.rho.begin(), g.rho.end());
    double rmin = *std::min_element(g.rho.begin(), g.rho.end());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<Vec3> pts;
    while (static_cast<int>(pts.size()) < count) {
        Vec3 dir(nd(rng), nd(rng), nd(rng));
        dir.normalize();
        bool outside = ud(rng) < 0.5 || rmin <= 2.0 * d;
        double rad = outside ? rmax + d * (1.0 + ud(rng)) : (rmin - d) * ud(rng);
        Vec3 x = rad * dir;
        if (tubular_distance(x, g) >= d) pts.push_back(x);
    }
    return pts;
}

// sigma grid scaled by the l2 norm of the sequence
inline std::vector<double> l2_scaled(const std::vector<double>& c, const std::vector<double>& rel)
{
    double s = 0;
    for (double v : c) s += v * v;
    std::vector<double> out;
    for (double r : rel) out.push_back(r * std::sqrt(s));
    return out;
}

// least-squares slope of y against x
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw ValidationError("fit_slope: need matching samples, at least 2", "x");
    double n = static_cast<double>(x.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace mnp
