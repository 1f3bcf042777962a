#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mnp {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;

// Eigen conjugates complex cross products; this one does not
inline CVec3 cross(const CVec3& a, const CVec3& b)
{
    return CVec3(a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]);
}
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

constexpr double pi = 3.14159265358979323846;
constexpr cplx I1{0.0, 1.0};

// (n, m) -> flat index, lexicographic in n then m
inline int sh_index(int n, int m) { return n * n + n + m; }
inline int sh_count(int L) { return (L + 1) * (L + 1); }
inline void sh_nm(int idx, int& n, int& m)
{
    n = static_cast<int>(std::sqrt(static_cast<double>(idx)));
    while (n * n > idx) --n;
    while ((n + 1) * (n + 1) <= idx) ++n;
    m = idx - n * n - n;
}

// Error hierarchy; exit_code follows the CLI contract (1 validation, 2 numerical)
class Error : public std::runtime_error {
public:
    Error(const std::string& what, int code, std::string kind)
        : std::runtime_error(what), exit_code(code), kind(std::move(kind)) {}
    int exit_code;
    std::string kind;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w, std::string field = {})
        : Error(w, 1, "validation"), field(std::move(field)) {}
    std::string field;
};

struct StarShapeError : Error {
    explicit StarShapeError(const std::string& w) : Error(w, 1, "star_shape") {}
};

struct ResolutionError : Error {
    explicit ResolutionError(const std::string& w) : Error(w, 2, "resolution") {}
};

struct AccuracyError : Error {
    AccuracyError(const std::string& w, double estimate)
        : Error(w, 2, "accuracy"), estimate(estimate) {}
    double estimate;
};

struct ResonanceError : Error {
    ResonanceError(const std::string& w, double eigenvalue)
        : Error(w, 2, "resonance"), eigenvalue(eigenvalue) {}
    double eigenvalue;
};

// Worker count used by the internal loops. 0 means "not set": fall back to
// MNP_THREADS, then 1.
inline int& thread_setting()
{
    static int n = 0;
    return n;
}

inline int thread_count()
{
    int n = thread_setting();
    if (n > 0) return n;
    if (const char* env = std::getenv("MNP_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

inline void set_threads(int n) { thread_setting() = n; }

// Static partition of [0, n) over worker threads. Each index is handled by
// exactly one worker, so results do not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& body)
{
    int nt = std::min(thread_count(), std::max(n, 1));
    if (nt <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += nt) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline double rel_diff(double a, double b)
{
    double s = std::max(std::abs(a), std::abs(b));
    return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

} // namespace mnp
