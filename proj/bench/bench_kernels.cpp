// Times each kernel's serial reference against its OpenMP version and
// reports the largest difference between their outputs.

#include "cppruner/kernels.hpp"
#include "cppruner/parallel.hpp"
#include "cppruner/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

using namespace cppruner;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const char* name, double ts, double tp, double diff) {
    std::printf("%-22s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  max|diff| %.3g\n", name,
                1e3 * ts, 1e3 * tp, ts / tp, diff);
}

} // namespace

int main() {
    parallel::configure_from_env();
    std::printf("threads: %d\n", parallel::max_threads());
    RngStream rng(1, "bench");

    const Shape shape{64, 64, 64};
    FactorMatrices f(20, shape);
    for (auto& U : f.factors)
        for (auto& v : U.data) v = rng.normal();
    const std::size_t N = 64 * 64 * 64;

    std::vector<double> a(N), b(N);
    const double ts = seconds([&] { kernels::serial::cp_reconstruct(f, a); }, 5);
    const double tp = seconds([&] { kernels::parallel::cp_reconstruct(f, b); }, 5);
    report("cp_reconstruct 64^3", ts, tp, max_diff(a, b));

    std::vector<std::size_t> idx(1 << 16);
    for (auto& i : idx) i = rng.below(N);
    std::vector<double> ea(idx.size()), eb(idx.size());
    report("cp_entries 65536",
           seconds([&] { kernels::serial::cp_entries(f, idx, ea); }, 20),
           seconds([&] { kernels::parallel::cp_entries(f, idx, eb); }, 20), max_diff(ea, eb));

    std::vector<double> up(idx.size());
    for (auto& u : up) u = rng.normal();
    FactorMatrices ga(20, shape), gb(20, shape);
    const double tgs = seconds([&] {
        ga = FactorMatrices(20, shape);
        kernels::serial::cp_factor_gradients(f, idx, up, ga);
    }, 20);
    const double tgp = seconds([&] {
        gb = FactorMatrices(20, shape);
        kernels::parallel::cp_factor_gradients(f, idx, up, gb);
    }, 20);
    double gd = 0.0;
    for (std::size_t d = 0; d < 3; ++d) gd = std::max(gd, max_diff(ga.factors[d].data, gb.factors[d].data));
    report("cp_factor_gradients", tgs, tgp, gd);

    std::vector<double> up_all(N);
    for (auto& u : up_all) u = rng.normal();
    const double tfs = seconds([&] {
        ga = FactorMatrices(20, shape);
        kernels::serial::cp_factor_gradients(f, {}, up_all, ga);
    }, 5);
    const double tfp = seconds([&] {
        gb = FactorMatrices(20, shape);
        kernels::parallel::cp_factor_gradients(f, {}, up_all, gb);
    }, 5);
    double fd = 0.0, fmax = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
        fd = std::max(fd, max_diff(ga.factors[d].data, gb.factors[d].data));
        for (double v : ga.factors[d].data) fmax = std::max(fmax, std::abs(v));
    }
    report("full-grid grads (rel)", tfs, tfp, fd / fmax);

    PointCloud q(20000), r(20000);
    for (auto& p : q) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    for (auto& p : r) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    std::vector<double> da(q.size()), db(q.size());
    report("nearest 20k x 20k", seconds([&] { kernels::serial::nearest_distances(q, r, da); }, 1),
           seconds([&] { kernels::parallel::nearest_distances(q, r, db); }, 3), max_diff(da, db));
    return 0;
}
