#pragma once

// Batch front end: JSON config in, CSV + JSON artifacts out.

#include "scatter.hpp"
#include "spectral.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

namespace mnp::cli {

using json = nlohmann::json;

inline constexpr const char* version = "1.0.0";
inline constexpr const char* quad_scheme = "rotated-polar-gauss-legendre/v1";

struct Options {
    std::string out_dir = ".";
    std::optional<double> tol;
    int threads = 0;
    std::uint64_t seed = 7;
};

// ---------------------------------------------------------------------------
// config access with field paths in the errors
// ---------------------------------------------------------------------------
inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline const json& field(const json& o, const std::string& key, const std::string& path)
{
    if (!o.is_object()) throw ValidationError("expected an object", path.empty() ? "config" : path);
    auto it = o.find(key);
    if (it == o.end()) throw ValidationError("missing field", join(path, key));
    return *it;
}

inline double get_double(const json& o, const std::string& key, const std::string& path, std::optional<double> def,
                         double lo, double hi)
{
    if (!o.contains(key)) {
        if (def) return *def;
        throw ValidationError("missing field", join(path, key));
    }
    const json& v = o.at(key);
    if (!v.is_number()) throw ValidationError("must be a number", join(path, key));
    double d = v.get<double>();
    if (!(d >= lo && d <= hi))
        throw ValidationError("out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", join(path, key));
    return d;
}

inline int get_int(const json& o, const std::string& key, const std::string& path, std::optional<int> def, int lo,
                   int hi)
{
    if (!o.contains(key)) {
        if (def) return *def;
        throw ValidationError("missing field", join(path, key));
    }
    const json& v = o.at(key);
    if (!v.is_number_integer()) throw ValidationError("must be an integer", join(path, key));
    long long d = v.get<long long>();
    if (d < lo || d > hi)
        throw ValidationError("out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", join(path, key));
    return static_cast<int>(d);
}

inline std::vector<double> get_list(const json& o, const std::string& key, const std::string& path,
                                    std::optional<std::vector<double>> def, double lo, double hi)
{
    if (!o.contains(key)) {
        if (def) return *def;
        throw ValidationError("missing field", join(path, key));
    }
    const json& v = o.at(key);
    if (!v.is_array() || v.empty()) throw ValidationError("must be a non-empty array of numbers", join(path, key));
    std::vector<double> out;
    for (const json& e : v) {
        if (!e.is_number()) throw ValidationError("must be a non-empty array of numbers", join(path, key));
        double d = e.get<double>();
        if (!(d >= lo && d <= hi)) throw ValidationError("element out of range", join(path, key));
        out.push_back(d);
    }
    return out;
}

inline Vec3 as_vec3(const json& v, const std::string& name)
{
    if (!v.is_array() || v.size() != 3) throw ValidationError("must be an array of 3 numbers", name);
    Vec3 x;
    for (int i = 0; i < 3; ++i) {
        if (!v[i].is_number()) throw ValidationError("must be an array of 3 numbers", name);
        x[i] = v[i].get<double>();
    }
    if (!x.allFinite()) throw ValidationError("must be finite", name);
    return x;
}

inline Vec3 get_vec3(const json& o, const std::string& key, const std::string& path, std::optional<Vec3> def)
{
    if (!o.contains(key)) {
        if (def) return *def;
        throw ValidationError("missing field", join(path, key));
    }
    return as_vec3(o.at(key), join(path, key));
}

inline std::vector<Vec3> get_points(const json& o, const std::string& key, const std::string& path)
{
    const json& v = field(o, key, path);
    if (!v.is_array() || v.empty()) throw ValidationError("must be a non-empty array of points", join(path, key));
    std::vector<Vec3> pts;
    for (size_t i = 0; i < v.size(); ++i) pts.push_back(as_vec3(v[i], join(path, key) + "[" + std::to_string(i) + "]"));
    return pts;
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------
struct ModeSpec {
    int l = 2, n = 1, m = 0;
    int index = 1; // general surfaces
};

struct RunConfig {
    std::string command;
    json raw;
    ShCoeffs radius;
    bool sphere = true;
    double r0 = 1.0;
    int L = 0;
    double omega = 1.0;
    // command parameters
    int samples = 10;
    ModeSpec mode;
    std::vector<Vec3> points;
    int n_min = 8, n_max = 14;
    std::vector<double> probe_radii{2.0, 0.5};
    int n_points = 50;
    double min_distance = 0.5, kappa = 0.5;
    std::vector<double> sigma_grid{1.0, 0.75, 0.5}; // relative to the l2 norm of |E_j|
    std::vector<double> tau_list, delta_list;
    int order = 2;
    DipoleSource source;
    double k = 1.0;
    int L_quad = 40;
};

inline const std::vector<std::string>& commands()
{
    static const std::vector<std::string> c{"spectrum", "calderon", "plasmon", "decay", "scatter", "mie-check"};
    return c;
}

inline ShCoeffs parse_surface(const json& s, bool& sphere, double& r0)
{
    if (!s.is_object()) throw ValidationError("expected an object", "surface");
    const json& t = field(s, "type", "surface");
    if (!t.is_string()) throw ValidationError("must be \"sphere\" or \"perturbed\"", "surface.type");
    r0 = get_double(s, "radius", "surface", 1.0, 1e-3, 1e3);
    std::string type = t.get<std::string>();
    if (type == "sphere") {
        sphere = true;
        return sphere_radius_coeffs(r0);
    }
    if (type != "perturbed") throw ValidationError("must be \"sphere\" or \"perturbed\"", "surface.type");
    sphere = false;
    const json& list = field(s, "perturbations", "surface");
    if (!list.is_array() || list.empty()) throw ValidationError("must be a non-empty array", "surface.perturbations");
    ShCoeffs a = sphere_radius_coeffs(r0);
    for (size_t i = 0; i < list.size(); ++i) {
        std::string p = "surface.perturbations[" + std::to_string(i) + "]";
        int n = get_int(list[i], "n", p, std::nullopt, 1, 16);
        int m = get_int(list[i], "m", p, 0, -n, n);
        double e = get_double(list[i], "eps", p, std::nullopt, -0.5 * r0, 0.5 * r0);
        if (a.L < n) a = a.resized(n);
        a.at(n, m) += e;
    }
    return a;
}

inline ModeSpec parse_mode(const json& c, bool sphere, ModeSpec def)
{
    if (!c.contains("mode")) return def;
    const json& m = c.at("mode");
    if (!m.is_object()) throw ValidationError("expected an object", "mode");
    ModeSpec s = def;
    if (sphere) {
        s.l = get_int(m, "l", "mode", def.l, 1, 2);
        s.n = get_int(m, "n", "mode", def.n, 1, 60);
        s.m = get_int(m, "m", "mode", def.m, -s.n, s.n);
    } else {
        s.index = get_int(m, "index", "mode", def.index, 1, 100000);
    }
    return s;
}

inline RunConfig parse_config(const json& c)
{
    if (!c.is_object()) throw ValidationError("config must be a JSON object", "config");
    RunConfig rc;
    rc.raw = c;
    const json& cmd = field(c, "command", "");
    if (!cmd.is_string() || std::find(commands().begin(), commands().end(), cmd.get<std::string>()) == commands().end())
        throw ValidationError("unknown command", "command");
    rc.command = cmd.get<std::string>();

    if (rc.command == "mie-check") {
        if (c.contains("surface")) {
            rc.radius = parse_surface(c.at("surface"), rc.sphere, rc.r0);
            if (!rc.sphere) throw ValidationError("mie-check needs a sphere", "surface.type");
        } else {
            rc.radius = sphere_radius_coeffs(1.0);
        }
        rc.n_max = get_int(c, "n_max", "", 5, 1, 12);
        rc.k = get_double(c, "k", "", 1.0, 1e-3, 20.0);
        rc.L_quad = get_int(c, "L_quad", "", std::max(40, 2 * rc.n_max + 8), 2 * rc.n_max + 8, 96);
        return rc;
    }

    rc.radius = parse_surface(field(c, "surface", ""), rc.sphere, rc.r0);
    bool closed_form = rc.sphere && (rc.command == "plasmon" || rc.command == "decay");
    rc.L = get_int(c, "L", "", closed_form ? std::optional<int>(8) : std::nullopt, 1, 40);
    rc.omega = get_double(c, "omega", "", 1.0, 1e-6, 1e3);

    if (rc.command == "calderon") {
        rc.samples = get_int(c, "samples", "", 10, 1, 200);
    } else if (rc.command == "plasmon") {
        rc.mode = parse_mode(c, rc.sphere, {});
        rc.points = get_points(c, "points", "");
    } else if (rc.command == "decay") {
        if (rc.sphere) {
            rc.mode = parse_mode(c, true, {2, 1, 0, 1});
            rc.n_min = get_int(c, "n_min", "", 8, 1, 60);
            rc.n_max = get_int(c, "n_max", "", 14, rc.n_min + 1, 60);
            rc.probe_radii = get_list(c, "probe_radii", "", rc.probe_radii, 1e-3, 1e3);
            for (double s : rc.probe_radii)
                if (std::abs(s - 1.0) < 1e-6) throw ValidationError("probe radius on the surface", "probe_radii");
        } else {
            rc.n_points = get_int(c, "points", "", 50, 1, 10000);
            rc.min_distance = get_double(c, "min_distance", "", 0.5, 1e-3, 100.0);
            rc.kappa = get_double(c, "kappa", "", 0.5, 0.0, 10.0);
            rc.sigma_grid = get_list(c, "sigma_grid", "", rc.sigma_grid, 1e-12, 1e12);
        }
    } else if (rc.command == "scatter") {
        rc.tau_list = get_list(c, "tau_list", "", std::nullopt, 1e-6, 1e6);
        for (double t : rc.tau_list)
            if (t == 1.0) throw ValidationError("tau = 1 is excluded", "tau_list");
        rc.delta_list = get_list(c, "delta_list", "", std::nullopt, 1e-8, 10.0);
        rc.order = get_int(c, "order", "", 2, 0, 2);
        const json& src = field(c, "source", "");
        rc.source.s = get_vec3(src, "s", "source", std::nullopt);
        rc.source.p = get_vec3(src, "p", "source", Vec3(0, 0, 1));
        rc.mode = parse_mode(c, rc.sphere, {2, 1, 0, 1});
    }
    return rc;
}

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------
inline std::string sha256_hex(const std::string& data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        os << buf;
    }
    return os.str();
}

// objects serialize with sorted keys, so dump() is canonical
inline std::string config_hash(const json& c) { return sha256_hex(c.dump()); }

inline std::string utc_timestamp()
{
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string fmt(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15e", v);
    return buf;
}

struct Provenance {
    std::string command, hash;
    std::string L_quad = "n/a";
    std::string L_op = "n/a";
    double tol = 0.0;
    bool tol_override = false;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string timestamp;

    std::vector<std::string> lines() const
    {
        char tb[32];
        std::snprintf(tb, sizeof tb, "%.3e", tol);
        return {"# mnp_cli " + std::string(version) + " command=" + command,
                "# config_sha256=" + hash,
                "# L_op=" + L_op + " L_quad=" + L_quad,
                "# quadrature_scheme=" + std::string(quad_scheme),
                "# tol=" + std::string(tb) + (tol_override ? " (override)" : " (default)"),
                "# seed=" + std::to_string(seed) + " threads=" + std::to_string(threads),
                "# timestamp=" + timestamp};
    }
    json to_json() const
    {
        return {{"version", version}, {"command", command}, {"config_sha256", hash}, {"L_op", L_op},
                {"L_quad", L_quad},   {"quadrature_scheme", quad_scheme},          {"tol", tol},
                {"tol_override", tol_override}, {"seed", seed}, {"threads", threads}, {"timestamp", timestamp}};
    }
};

inline std::string report_version_and_provenance(const Provenance& p)
{
    std::string s;
    for (const auto& l : p.lines()) s += l + "\n";
    return s;
}

class Csv {
public:
    explicit Csv(std::vector<std::string> cols) : cols_(std::move(cols)) {}
    void row(const std::vector<std::string>& cells)
    {
        if (cells.size() != cols_.size()) throw std::logic_error("csv: row width");
        rows_.push_back(cells);
    }
    std::string body() const
    {
        std::string s;
        auto line = [&](const std::vector<std::string>& r) {
            for (size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
            s += "\n";
        };
        line(cols_);
        for (const auto& r : rows_) line(r);
        return s;
    }
    void write(const std::filesystem::path& path, const Provenance& p) const
    {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw ValidationError("cannot write " + path.string(), "out");
        f << report_version_and_provenance(p) << body();
    }

private:
    std::vector<std::string> cols_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path.string(), "out");
    f << j.dump(2) << "\n";
}

struct Outcome {
    int exit_code = 0;
    json report;
    std::vector<std::string> files;
};

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------
namespace detail {

struct Ctx {
    const RunConfig& rc;
    const Options& opt;
    Provenance prov;
    std::filesystem::path out;
    Outcome res;

    void emit(const Csv& csv, const json& report)
    {
        std::string stem = rc.command;
        auto p = out / (stem + ".csv");
        csv.write(p, prov);
        res.files.push_back(p.string());
        json r = report;
        r["provenance"] = prov.to_json();
        auto q = out / (stem + ".json");
        write_json(q, r);
        res.files.push_back(q.string());
        res.report = r;
    }
    double tol(double def)
    {
        prov.tol = opt.tol ? *opt.tol : def;
        prov.tol_override = opt.tol.has_value();
        return prov.tol;
    }
    void model_info(const Model& M)
    {
        prov.L_op = std::to_string(M.L_op);
        prov.L_quad = std::to_string(M.grid->L_quad);
    }
};

inline std::vector<int> cluster_sizes(const std::vector<double>& v, int first)
{
    std::vector<int> ids = cluster_ids(v);
    std::vector<int> sizes;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= first) break;
        if (ids[i] >= static_cast<int>(sizes.size())) sizes.push_back(0);
        ++sizes[ids[i]];
    }
    return sizes;
}

inline void run_spectrum(Ctx& c)
{
    c.tol(1e-6);
    Model M = build_model(c.rc.radius, c.rc.L);
    c.model_info(M);
    SpectralSet np = np_spectrum(M);
    auto [cs, gs] = mnp_spectra(np, M);
    Csv csv({"operator", "index", "value", "cluster"});
    json rep;
    for (const SpectralSet* s : {&np, &cs, &gs}) {
        std::vector<int> ids = cluster_ids(s->values);
        for (int i = 0; i < s->size(); ++i)
            csv.row({spec_name(s->tag), std::to_string(i + 1), fmt(s->values[i]), std::to_string(ids[i])});
        json e;
        e["count"] = s->size();
        e["top"] = std::vector<double>(s->values.begin(), s->values.begin() + std::min(s->size(), 4));
        e["leading_cluster_sizes"] = cluster_sizes(s->values, 4);
        e["max_imag"] = s->max_imag;
        rep[spec_name(s->tag)] = e;
    }
    rep["status"] = "ok";
    c.emit(csv, rep);
    std::printf("spectrum: K* top %.12f, clusters", np.values[0]);
    for (int k : rep["Kstar"]["leading_cluster_sizes"]) std::printf(" %d", k);
    std::printf("\n");
}

inline void run_calderon(Ctx& c)
{
    Model M = build_model(c.rc.radius, c.rc.L);
    c.model_info(M);
    double tol = c.tol(M.sphere() ? 1e-9 : 1e-5);
    std::mt19937_64 rng(c.opt.seed);
    std::normal_distribution<double> nd;
    int L = c.rc.L;
    Csv csv({"sample", "identity", "residual"});
    double worst = 0;
    for (int t = 0; t < c.rc.samples; ++t) {
        ShCoeffs V(L, true);
        for (int j = 1; j < V.size(); ++j) V.c[j] = cplx(nd(rng), nd(rng));
        double a = calderon_residual(SpecTag::M_curl, TangentField(ShCoeffs(L, true), V, Flavor::curl_trace), M);
        double b = calderon_residual(SpecTag::Mstar_grad, TangentField(V, ShCoeffs(L, true)), M);
        csv.row({std::to_string(t + 1), "N_Mstar_eq_M_N", fmt(a)});
        csv.row({std::to_string(t + 1), "Mstar_Q_eq_Q_M", fmt(b)});
        worst = std::max({worst, a, b});
    }
    double sc = scalar_calderon_residual(M);
    csv.row({"0", "K_S_eq_S_Kstar", fmt(sc)});
    bool ok = worst <= tol;
    json rep{{"max_residual", worst}, {"scalar_residual", sc}, {"samples", c.rc.samples}, {"pass", ok},
             {"status", ok ? "ok" : "tolerance_breach"}};
    c.emit(csv, rep);
    std::printf("calderon: max residual %.3e (tol %.1e) %s\n", worst, tol, ok ? "pass" : "FAIL");
    if (!ok) c.res.exit_code = 2;
}

inline std::vector<std::string> field_cells(const EH& f)
{
    std::vector<std::string> r;
    for (const CVec3* v : {&f.E, &f.H})
        for (int i = 0; i < 3; ++i) {
            r.push_back(fmt((*v)[i].real()));
            r.push_back(fmt((*v)[i].imag()));
        }
    r.push_back(fmt(f.E.norm()));
    r.push_back(fmt(f.H.norm()));
    return r;
}

inline std::vector<std::string> field_cols()
{
    return {"Ex_re", "Ex_im", "Ey_re", "Ey_im", "Ez_re", "Ez_im", "Hx_re", "Hx_im",
            "Hy_re", "Hy_im", "Hz_re", "Hz_im", "E_norm", "H_norm"};
}

inline std::vector<PlasmonMode> general_modes(const RunConfig& rc, std::shared_ptr<Model>& M)
{
    M = std::make_shared<Model>(build_model(rc.radius, rc.L));
    auto [cs, gs] = mnp_spectra(np_spectrum(*M), *M);
    return general_plasmon_modes(cs, *M, rc.omega);
}

inline void run_plasmon(Ctx& c)
{
    c.tol(1e-6);
    const RunConfig& rc = c.rc;
    std::vector<std::string> cols{"point", "x", "y", "z"};
    for (auto& s : field_cols()) cols.push_back(s);
    Csv csv(cols);
    PlasmonMode pm;
    std::shared_ptr<Model> M;
    std::unique_ptr<PlasmonFieldEvaluator> ev;
    if (rc.sphere) {
        if (rc.mode.n > rc.L) throw ValidationError("mode degree exceeds L", "mode.n");
        pm = sphere_plasmon_mode(rc.mode.l, rc.mode.n, rc.mode.m, rc.r0, rc.omega);
    } else {
        auto modes = general_modes(rc, M);
        c.model_info(*M);
        if (rc.mode.index > static_cast<int>(modes.size())) throw ValidationError("mode index out of range", "mode.index");
        pm = modes[rc.mode.index - 1];
    }
    ev = std::make_unique<PlasmonFieldEvaluator>(pm, M ? M->grid : nullptr);
    for (size_t i = 0; i < rc.points.size(); ++i) {
        const Vec3& x = rc.points[i];
        std::vector<std::string> row{std::to_string(i + 1), fmt(x[0]), fmt(x[1]), fmt(x[2])};
        for (auto& s : field_cells(ev->eval(x))) row.push_back(s);
        csv.row(row);
    }
    json rep{{"lambda", pm.lambda}, {"tau", pm.tau}, {"points", rc.points.size()}, {"status", "ok"}};
    if (rc.sphere) rep["mode"] = {{"l", rc.mode.l}, {"n", rc.mode.n}, {"m", rc.mode.m}};
    else rep["mode"] = {{"index", rc.mode.index}};
    c.emit(csv, rep);
    std::printf("plasmon: lambda %.12f tau %.12f, %zu points\n", pm.lambda, pm.tau, rc.points.size());
}

inline void run_decay(Ctx& c)
{
    const RunConfig& rc = c.rc;
    if (rc.sphere) {
        double tol = c.tol(0.1);
        Csv csv({"n", "probe_radius", "E_norm", "H_norm"});
        json slopes = json::array();
        bool ok = true;
        Vec3 d = sph_dir(1.0, 0.3);
        for (double s : rc.probe_radii) {
            std::vector<double> ns, le;
            for (int n = rc.n_min; n <= rc.n_max; ++n) {
                int m = std::clamp(rc.mode.m, -n, n);
                EH f = plasmon_field(sphere_plasmon_mode(rc.mode.l, n, m, rc.r0, rc.omega), s * rc.r0 * d);
                csv.row({std::to_string(n), fmt(s), fmt(f.E.norm()), fmt(f.H.norm())});
                ns.push_back(n);
                le.push_back(std::log(f.E.norm()));
            }
            double slope = fit_slope(ns, le);
            double target = std::log(s > 1 ? 1 / s : s);
            bool pass = std::abs(slope - target) <= tol * std::abs(target);
            ok = ok && pass;
            slopes.push_back({{"probe_radius", s}, {"slope", slope}, {"target", target}, {"pass", pass}});
        }
        json rep{{"slopes", slopes}, {"pass", ok}, {"status", "ok"}};
        c.emit(csv, rep);
        for (auto& e : slopes)
            std::printf("decay: |x| = %g r: slope %.4f (target %.4f)\n", e["probe_radius"].get<double>(),
                        e["slope"].get<double>(), e["target"].get<double>());
        return;
    }
    c.tol(0.05);
    std::shared_ptr<Model> M;
    auto modes = general_modes(rc, M);
    c.model_info(*M);
    std::vector<Vec3> pts = point_cloud_off_tube(*M->grid, rc.n_points, rc.min_distance, c.opt.seed);
    DecayReport rep = localization_scan(modes, pts, 0.999 * rc.min_distance, M->grid, c.prov.tol);
    std::vector<double> sig = l2_scaled(rep.normE, rc.sigma_grid);
    int nm = static_cast<int>(modes.size());
    std::vector<int> Ns{std::max(1, nm / 4), std::max(1, nm / 2), nm};
    ASStatistic as = almost_sure_statistic(rep.normE, rc.kappa, sig, Ns);
    Csv csv({"j", "lambda", "tau", "E_norm", "H_norm", "partial_sum"});
    for (int j = 0; j < nm; ++j)
        csv.row({std::to_string(j + 1), fmt(rep.lambda[j]), fmt(rep.tau[j]), fmt(rep.normE[j]), fmt(rep.normH[j]),
                 fmt(rep.partial[j])});
    json r{{"modes", nm},
           {"points", rc.n_points},
           {"plateau", rep.plateau},
           {"last_quartile_growth", rep.last_quartile_growth},
           {"fitted_rate", rep.fitted_rate},
           {"as_verdict", as.verdict},
           {"as_fraction", as.fraction},
           {"as_sigma_relative_l2", rc.sigma_grid},
           {"as_N", Ns},
           {"kappa", rc.kappa},
           {"status", "ok"}};
    c.emit(csv, r);
    std::printf("decay: %d modes, plateau %s (growth %.3e), a.s. verdict %s\n", nm, rep.plateau ? "yes" : "no",
                rep.last_quartile_growth, as.verdict ? "yes" : "no");
}

inline void run_scatter(Ctx& c)
{
    const RunConfig& rc = c.rc;
    c.tol(1e-13);
    ScatterSetup su = make_scatter_setup(rc.radius, rc.L);
    c.model_info(*su.model);
    check_source_outside(rc.source.s, *su.model->grid);
    PlasmonMode pm;
    if (rc.sphere) {
        if (rc.mode.n > rc.L) throw ValidationError("mode degree exceeds L", "mode.n");
        pm = sphere_plasmon_mode(rc.mode.l, rc.mode.n, rc.mode.m, rc.r0, rc.omega);
    } else {
        auto [cs, gs] = mnp_spectra(np_spectrum(*su.model), *su.model);
        auto modes = general_plasmon_modes(cs, *su.model, rc.omega);
        if (rc.mode.index > static_cast<int>(modes.size())) throw ValidationError("mode index out of range", "mode.index");
        pm = modes[rc.mode.index - 1];
    }
    int nt = static_cast<int>(rc.tau_list.size()), nd = static_cast<int>(rc.delta_list.size());
    std::vector<std::array<double, 3>> out(nt * nd);
    std::vector<int> resonant(nt * nd, 0);
    for (int i = 0; i < nt * nd; ++i) {
        MaterialConfig m = MaterialConfig::preset(rc.tau_list[i / nd], rc.omega, rc.delta_list[i % nd]);
        BlockSystem sys = assemble_system(su, m, rc.order);
        double ind = weak_resonance_indicator(sys, pm);
        try {
            ScatterSolution sol = solve_scatter(sys, dipole_incident_trace(rc.source, m, *su.vo), c.prov.tol);
            out[i] = {ind, pair_norm(sol.x), sol.condition};
        } catch (const ResonanceError&) {
            out[i] = {ind, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()};
            resonant[i] = 1;
        }
    }
    Csv csv({"tau", "delta", "indicator", "solution_norm", "condition"});
    int nres = 0;
    for (int i = 0; i < nt * nd; ++i) {
        csv.row({fmt(rc.tau_list[i / nd]), fmt(rc.delta_list[i % nd]), fmt(out[i][0]), fmt(out[i][1]), fmt(out[i][2])});
        nres += resonant[i];
    }
    json rep{{"rows", nt * nd}, {"resonant_rows", nres}, {"order", rc.order}, {"status", "ok"}};
    c.emit(csv, rep);
    std::printf("scatter: %d rows, %d at numerical resonance\n", nt * nd, nres);
}

inline void run_mie_check(Ctx& c)
{
    const RunConfig& rc = c.rc;
    double tol = c.tol(1e-6);
    c.prov.L_quad = std::to_string(rc.L_quad);
    auto res = mie_oracle_suite(rc.n_max, rc.k, rc.r0, tol, rc.L_quad);
    Csv csv({"oracle", "max_rel_err", "pass"});
    int npass = 0;
    json list = json::array();
    for (const auto& o : res) {
        csv.row({o.name(), fmt(o.max_rel_err), o.pass ? "1" : "0"});
        npass += o.pass;
        list.push_back({{"oracle", o.name()}, {"max_rel_err", o.max_rel_err}, {"pass", o.pass}});
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d/%zu exact-formula oracles pass <= %.0e", npass, res.size(), tol);
    bool ok = npass == static_cast<int>(res.size());
    json rep{{"summary", buf}, {"oracles", list}, {"pass", ok}, {"status", ok ? "ok" : "tolerance_breach"}};
    c.emit(csv, rep);
    std::printf("mie-check: %s\n", buf);
    if (!ok) c.res.exit_code = 2;
}

} // namespace detail

inline json error_json(const std::string& kind, const std::string& message, const std::string& field_name, int code)
{
    json e{{"status", "error"}, {"kind", kind}, {"message", message}, {"exit_code", code}};
    if (!field_name.empty()) e["field"] = field_name;
    return e;
}

// error JSON on stderr and in <out>/error.json
inline Outcome report_error(const json& e, const Options& opt)
{
    Outcome res;
    res.exit_code = e["exit_code"].get<int>();
    res.report = e;
    std::cerr << e.dump() << "\n";
    std::error_code ec;
    std::filesystem::create_directories(opt.out_dir, ec);
    auto p = std::filesystem::path(opt.out_dir) / "error.json";
    std::ofstream f(p, std::ios::binary);
    if (f) {
        f << e.dump(2) << "\n";
        res.files.push_back(p.string());
    }
    return res;
}

// Runs one config; the exit status is in the outcome.
inline Outcome run(const json& config, const Options& opt)
{
    auto fail = [&](const json& e) { return report_error(e, opt); };
    try {
        RunConfig rc = parse_config(config);
        if (opt.tol && !(*opt.tol > 0)) throw ValidationError("tolerance must be > 0", "--tol");
        if (opt.threads < 0) throw ValidationError("thread count must be >= 0", "--threads");
        std::error_code ec;
        std::filesystem::create_directories(opt.out_dir, ec);
        if (!std::filesystem::is_directory(opt.out_dir)) throw ValidationError("output directory not writable", "--out");
        if (opt.threads > 0) set_threads(opt.threads);

        detail::Ctx c{rc, opt, {}, opt.out_dir, {}};
        c.prov.command = rc.command;
        c.prov.hash = config_hash(config);
        c.prov.seed = opt.seed;
        c.prov.threads = thread_count();
        c.prov.timestamp = utc_timestamp();
        if (rc.command == "spectrum") detail::run_spectrum(c);
        else if (rc.command == "calderon") detail::run_calderon(c);
        else if (rc.command == "plasmon") detail::run_plasmon(c);
        else if (rc.command == "decay") detail::run_decay(c);
        else if (rc.command == "scatter") detail::run_scatter(c);
        else detail::run_mie_check(c);
        // stored config next to the artifacts
        auto cp = std::filesystem::path(opt.out_dir) / (rc.command + ".config.json");
        write_json(cp, config);
        c.res.files.push_back(cp.string());
        return c.res;
    } catch (const ValidationError& e) {
        return fail(error_json(e.kind, e.what(), e.field.empty() ? "config" : e.field, 1));
    } catch (const Error& e) {
        return fail(error_json(e.kind, e.what(), "", e.exit_code));
    } catch (const json::exception& e) {
        return fail(error_json("validation", e.what(), "config", 1));
    } catch (const std::exception& e) {
        return fail(error_json("internal", e.what(), "", 2));
    }
}

inline Outcome run_file(const std::string& path, const Options& opt)
{
    std::ifstream f(path);
    if (!f) return report_error(error_json("validation", "cannot read config file " + path, "--config", 1), opt);
    json c;
    try {
        c = json::parse(f);
    } catch (const json::exception& e) {
        return report_error(error_json("validation", std::string("config is not valid JSON: ") + e.what(), "config", 1),
                            opt);
    }
    return run(c, opt);
}

} // namespace mnp::cli
