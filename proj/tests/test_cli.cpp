#include <catch_amalgamated.hpp>

#include "mnp/cli.hpp"

#include <cstdlib>
#include <sys/wait.h>

using namespace mnp;
using cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("mnp_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

std::string without_timestamp(const std::string& s)
{
    std::string r;
    for (auto& l : lines(s))
        if (l.rfind("# timestamp=", 0) != 0) r += l + "\n";
    return r;
}

cli::Outcome run_in(const json& c, const fs::path& out, cli::Options opt = {})
{
    opt.out_dir = out.string();
    return cli::run(c, opt);
}

int run_binary(const std::string& args)
{
    std::string cmd = std::string(MNP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

const json sphere_spectrum = {{"command", "spectrum"}, {"surface", {{"type", "sphere"}}}, {"L", 12}};

} // namespace

TEST_CASE("cli: spectrum on the unit sphere")
{
    fs::path out = scratch("spectrum");
    cli::Outcome r = run_in(sphere_spectrum, out);
    REQUIRE(r.exit_code == 0);
    const json& k = r.report["Kstar"];
    CHECK(k["top"][0].get<double>() == Catch::Approx(0.5).epsilon(1e-9));
    CHECK(k["top"][1].get<double>() == Catch::Approx(1.0 / 6).epsilon(1e-9));
    CHECK(k["leading_cluster_sizes"] == json({1, 3, 5, 7}));
    auto ls = lines(slurp(out / "spectrum.csv"));
    int hdr = 0;
    while (ls[hdr][0] == '#') ++hdr;
    CHECK(ls[hdr] == "operator,index,value,cluster");
    CHECK(ls[hdr + 1].rfind("Kstar,1,5.0000000000", 0) == 0);
    CHECK(fs::exists(out / "spectrum.json"));
    CHECK(fs::exists(out / "spectrum.config.json"));
}

TEST_CASE("cli: mie-check report")
{
    fs::path out = scratch("mie");
    cli::Outcome r = run_in({{"command", "mie-check"}, {"n_max", 5}}, out);
    CHECK(r.exit_code == 0);
    CHECK(r.report["summary"] == "8/8 exact-formula oracles pass <= 1e-06");
    // impossible tolerance is a numerical-accuracy failure
    cli::Options o;
    o.tol = 1e-30;
    cli::Outcome bad = run_in({{"command", "mie-check"}, {"n_max", 2}}, scratch("mie2"), o);
    CHECK(bad.exit_code == 2);
    CHECK(bad.report["status"] == "tolerance_breach");
}

TEST_CASE("cli: validation errors name the field")
{
    fs::path out = scratch("bad");
    json c = sphere_spectrum;
    c.erase("L");
    cli::Outcome r = run_in(c, out);
    CHECK(r.exit_code == 1);
    json e = json::parse(slurp(out / "error.json"));
    CHECK(e["field"] == "L");
    CHECK(e["status"] == "error");

    auto field_of = [&](const json& cfg) {
        cli::Outcome o = run_in(cfg, out);
        CHECK(o.exit_code == 1);
        return o.report.value("field", std::string());
    };
    CHECK(field_of({{"command", "nope"}}) == "command");
    CHECK(field_of({{"L", 4}}) == "command");
    json big = sphere_spectrum;
    big["L"] = 400;
    CHECK(field_of(big) == "L");
    json surf = sphere_spectrum;
    surf["surface"] = {{"type", "cube"}};
    CHECK(field_of(surf) == "surface.type");
    json pert = sphere_spectrum;
    pert["surface"] = {{"type", "perturbed"}, {"perturbations", {{{"n", 2}, {"eps", "x"}}}}};
    CHECK(field_of(pert) == "surface.perturbations[0].eps");
    json sc = {{"command", "scatter"}, {"surface", {{"type", "sphere"}}}, {"L", 4},
               {"tau_list", {0.6}},    {"delta_list", {0.1}},            {"source", {{"s", {0, 0}}}}};
    CHECK(field_of(sc) == "source.s");
    sc["source"]["s"] = {0, 0, 3};
    sc["tau_list"] = {1.0};
    CHECK(field_of(sc) == "tau_list");
    json pl = {{"command", "plasmon"}, {"surface", {{"type", "sphere"}}}, {"points", {{0, 0, 2}, {1, 2}}}};
    CHECK(field_of(pl) == "points[1]");

    // source inside the particle
    sc["tau_list"] = {0.6};
    sc["source"]["s"] = {0, 0, 0.5};
    CHECK(run_in(sc, out).exit_code == 1);

    cli::Outcome nofile = cli::run_file((out / "missing.json").string(), {out.string()});
    CHECK(nofile.exit_code == 1);
    CHECK(nofile.report["field"] == "--config");
    std::ofstream(out / "garbage.json") << "{\"command\": ";
    cli::Outcome garbage = cli::run_file((out / "garbage.json").string(), {out.string()});
    CHECK(garbage.exit_code == 1);
    CHECK(garbage.report["field"] == "config");
}

TEST_CASE("cli: artifacts are reproducible and carry provenance")
{
    json c = {{"command", "calderon"},
              {"surface", {{"type", "perturbed"}, {"perturbations", {{{"n", 2}, {"m", 0}, {"eps", 0.05}}}}}},
              {"L", 6},
              {"samples", 3}};
    fs::path a = scratch("repA"), b = scratch("repB");
    REQUIRE(run_in(c, a).exit_code == 0);
    // rerun from the stored config
    cli::Outcome rb = cli::run_file((a / "calderon.config.json").string(), {b.string()});
    REQUIRE(rb.exit_code == 0);
    std::string ca = slurp(a / "calderon.csv"), cb = slurp(b / "calderon.csv");
    CHECK(without_timestamp(ca) == without_timestamp(cb));
    CHECK(ca.find("# config_sha256=" + cli::config_hash(c)) != std::string::npos);
    CHECK(ca.find("L_quad=") != std::string::npos);
    CHECK(ca.find(std::string("quadrature_scheme=") + cli::quad_scheme) != std::string::npos);
    CHECK(ca.find("# tol=1.000e-05 (default)") != std::string::npos);
    CHECK(ca.find("\r") == std::string::npos);

    // key order does not change the hash
    json reordered = json::parse(R"({"samples":3,"L":6,"surface":{"perturbations":[{"eps":0.05,"m":0,"n":2}],"type":"perturbed"},"command":"calderon"})");
    CHECK(cli::config_hash(reordered) == cli::config_hash(c));

    // tolerance override shows in the header, and a breach exits 2
    cli::Options o;
    o.tol = 1e-20;
    fs::path rc = scratch("repC");
    cli::Outcome r = run_in(c, rc, o);
    CHECK(r.exit_code == 2);
    CHECK(r.report["status"] == "tolerance_breach");
    CHECK(fs::exists(rc / "calderon.csv"));
    o.tol = 1e-3;
    fs::path d = scratch("repD");
    CHECK(run_in(c, d, o).exit_code == 0);
    CHECK(slurp(d / "calderon.csv").find("# tol=1.000e-03 (override)") != std::string::npos);

    // different seed, different random test fields
    o = {};
    o.seed = 99;
    fs::path e = scratch("repE");
    REQUIRE(run_in(c, e, o).exit_code == 0);
    CHECK(without_timestamp(slurp(e / "calderon.csv")) != without_timestamp(ca));
}

TEST_CASE("cli: scatter sweep")
{
    json c = {{"command", "scatter"},
              {"surface", {{"type", "sphere"}}},
              {"L", 4},
              {"tau_list", {0.5, 0.6}},
              {"delta_list", {0.1, 0.05}},
              {"order", 0},
              {"source", {{"s", {0, 0, 3}}, {"p", {0, 0, 1}}}}};
    fs::path out = scratch("scatter");
    cli::Outcome r = run_in(c, out);
    REQUIRE(r.exit_code == 0);
    auto ls = lines(slurp(out / "scatter.csv"));
    int hdr = 0;
    while (ls[hdr][0] == '#') ++hdr;
    CHECK(ls[hdr] == "tau,delta,indicator,solution_norm,condition");
    REQUIRE(static_cast<int>(ls.size()) == hdr + 5);
    // order 0 at tau = 1/2 is exactly singular on the sphere: reported, not solved
    CHECK(ls[hdr + 1].find("nan,inf") != std::string::npos);
    CHECK(r.report["resonant_rows"] == 2);
    CHECK(ls[hdr + 3].find("nan") == std::string::npos);
}

TEST_CASE("cli: plasmon and decay")
{
    json p = {{"command", "plasmon"},
              {"surface", {{"type", "sphere"}}},
              {"mode", {{"l", 2}, {"n", 1}, {"m", 0}}},
              {"points", {{0, 0, 2}}}};
    fs::path out = scratch("plasmon");
    cli::Outcome r = run_in(p, out);
    REQUIRE(r.exit_code == 0);
    CHECK(r.report["tau"].get<double>() == Catch::Approx(0.5));
    EH f = plasmon_field(sphere_plasmon_mode(2, 1, 0), Vec3(0, 0, 2));
    auto ls = lines(slurp(out / "plasmon.csv"));
    std::string last = ls.back();
    CHECK(last.find(cli::fmt(f.E.norm())) != std::string::npos);
    p["points"] = {{0, 0, 1.0}};
    CHECK(run_in(p, out).exit_code == 1);

    json d = {{"command", "decay"}, {"surface", {{"type", "sphere"}}}};
    cli::Outcome rd = run_in(d, scratch("decay"));
    REQUIRE(rd.exit_code == 0);
    CHECK(rd.report["pass"] == true);
    for (auto& s : rd.report["slopes"]) CHECK(s["pass"] == true);
}

TEST_CASE("cli: threads from the environment")
{
    set_threads(0);
    ::setenv("MNP_THREADS", "3", 1);
    CHECK(thread_count() == 3);
    fs::path out = scratch("threads");
    json c = {{"command", "mie-check"}, {"n_max", 1}};
    REQUIRE(run_in(c, out).exit_code == 0);
    CHECK(slurp(out / "mie-check.csv").find("threads=3") != std::string::npos);
    cli::Options o;
    o.threads = 2;
    run_in(c, out, o);
    CHECK(slurp(out / "mie-check.csv").find("threads=2") != std::string::npos);
    set_threads(0);
    ::unsetenv("MNP_THREADS");
}

TEST_CASE("cli: process exit codes")
{
    fs::path out = scratch("proc");
    std::ofstream(out / "ok.json") << R"({"command":"mie-check","n_max":1})";
    std::ofstream(out / "bad.json") << R"({"command":"spectrum","surface":{"type":"sphere"}})";
    std::ofstream(out / "tight.json") << R"({"command":"mie-check","n_max":1})";
    std::string o = " --out " + out.string();
    CHECK(run_binary("--config " + (out / "ok.json").string() + o) == 0);
    CHECK(run_binary("--config " + (out / "bad.json").string() + o) == 1);
    CHECK(run_binary("--config " + (out / "tight.json").string() + " --tol 1e-30" + o) == 2);
    CHECK(run_binary(o) == 1);
    CHECK(run_binary("--bogus") == 1);
    CHECK(run_binary("--version") == 0);
}
