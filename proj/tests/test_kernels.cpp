#include "cppruner/kernels.hpp"
#include "cppruner/parallel.hpp"
#include "cppruner/rng.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <omp.h>

using namespace cppruner;
namespace ks = cppruner::kernels::serial;
namespace kp = cppruner::kernels::parallel;

namespace {

std::vector<std::size_t> random_entries(std::size_t n, std::size_t total, std::uint64_t seed) {
    RngStream rng(seed, "test");
    std::vector<std::size_t> out(n);
    for (auto& v : out) v = rng.below(total);
    return out;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, "test");
    std::vector<double> out(n);
    for (auto& v : out) v = rng.normal();
    return out;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    RngStream rng(seed, "test");
    PointCloud pts(n);
    for (auto& p : pts)
        for (auto& c : p) c = scale * rng.uniform();
    return pts;
}

double max_abs_diff(const FactorMatrices& a, const FactorMatrices& b) {
    double m = 0.0;
    for (std::size_t d = 0; d < a.order(); ++d)
        for (std::size_t i = 0; i < a.factors[d].data.size(); ++i)
            m = std::max(m, std::abs(a.factors[d].data[i] - b.factors[d].data[i]));
    return m;
}

/// Runs `fn` with the given OpenMP thread count, restoring the previous one.
template <class F>
auto with_threads(int n, F&& fn) {
    const int before = omp_get_max_threads();
    omp_set_num_threads(n);
    auto out = fn();
    omp_set_num_threads(before);
    return out;
}

} // namespace

TEST(KernelReconstruct, ParallelMatchesSerialBitIdentically) {
    for (const Shape& s : {Shape{17, 9, 5}, Shape{40, 33}, Shape{3, 4, 5, 6}, Shape{2500}}) {
        const auto f = testutil::random_factors(4, s, 1);
        std::vector<double> a(shape_size(s)), b(shape_size(s));
        ks::cp_reconstruct(f, a);
        kp::cp_reconstruct(f, b);
        EXPECT_EQ(a, b);
    }
}

TEST(KernelEntries, ParallelMatchesSerialBitIdentically) {
    const Shape s{20, 30, 10};
    const auto f = testutil::random_factors(6, s, 2);
    const auto flat = random_entries(5000, shape_size(s), 3);
    std::vector<double> a(flat.size()), b(flat.size()), full(shape_size(s));
    ks::cp_entries(f, flat, a);
    kp::cp_entries(f, flat, b);
    EXPECT_EQ(a, b);
    ks::cp_reconstruct(f, full);
    for (std::size_t k = 0; k < flat.size(); ++k) EXPECT_EQ(a[k], full[flat[k]]);
}

TEST(KernelFactorGradients, ParallelMatchesSerialOnEntries) {
    const Shape s{12, 11, 10};
    const auto f = testutil::random_factors(5, s, 4);
    const auto flat = random_entries(4000, shape_size(s), 5);
    const auto up = random_values(flat.size(), 6);
    FactorMatrices ga(5, s), gb(5, s);
    ks::cp_factor_gradients(f, flat, up, ga);
    kp::cp_factor_gradients(f, flat, up, gb);
    EXPECT_LT(max_abs_diff(ga, gb), 1e-11);
}

TEST(KernelFactorGradients, ParallelMatchesSerialOnFullGrid) {
    const Shape s{9, 8, 7};
    const auto f = testutil::random_factors(3, s, 7);
    const auto up = random_values(shape_size(s), 8);
    FactorMatrices ga(3, s), gb(3, s);
    ks::cp_factor_gradients(f, {}, up, ga);
    kp::cp_factor_gradients(f, {}, up, gb);
    EXPECT_LT(max_abs_diff(ga, gb), 1e-11);
}

TEST(KernelFactorGradients, SerialMatchesFiniteDifferences) {
    const Shape s{4, 3, 5};
    auto f = testutil::random_factors(2, s, 9);
    const auto up = random_values(shape_size(s), 10);
    FactorMatrices g(2, s);
    ks::cp_factor_gradients(f, {}, up, g);
    auto objective = [&](const FactorMatrices& ff) {
        std::vector<double> t(shape_size(s));
        ks::cp_reconstruct(ff, t);
        return std::inner_product(t.begin(), t.end(), up.begin(), 0.0);
    };
    const double h = 1e-6;
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t i = 0; i < f.factors[d].data.size(); ++i) {
            const double keep = f.factors[d].data[i];
            f.factors[d].data[i] = keep + h;
            const double hi = objective(f);
            f.factors[d].data[i] = keep - h;
            const double lo = objective(f);
            f.factors[d].data[i] = keep;
            EXPECT_NEAR(g.factors[d].data[i], (hi - lo) / (2 * h), 1e-6);
        }
}

TEST(KernelFactorGradients, AccumulatesIntoExistingGradients) {
    const Shape s{3, 3};
    const auto f = testutil::random_factors(2, s, 11);
    const auto up = random_values(9, 12);
    FactorMatrices once(2, s), twice(2, s);
    kp::cp_factor_gradients(f, {}, up, once);
    kp::cp_factor_gradients(f, {}, up, twice);
    kp::cp_factor_gradients(f, {}, up, twice);
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t i = 0; i < once.factors[d].data.size(); ++i)
            EXPECT_DOUBLE_EQ(twice.factors[d].data[i], 2.0 * once.factors[d].data[i]);
}

TEST(KernelNearest, GridSearchMatchesBruteForceExactly) {
    const auto refs = random_cloud(3000, 13, 2.0);
    auto queries = random_cloud(2000, 14, 2.5);
    queries.push_back({-5.0, 0.0, 0.0});
    std::vector<double> a(queries.size()), b(queries.size());
    ks::nearest_distances(queries, refs, a);
    kp::nearest_distances(queries, refs, b);
    EXPECT_EQ(a, b);
}

TEST(KernelNearest, DegenerateReferenceSets) {
    const PointCloud one{{0.5, 0.5, 0.5}};
    const PointCloud flat{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    const PointCloud queries{{0.5, 0.5, 0.5}, {3, 4, 0.5}, {1, 1, 0}};
    for (const auto* refs : {&one, &flat}) {
        std::vector<double> a(queries.size()), b(queries.size());
        ks::nearest_distances(queries, *refs, a);
        kp::nearest_distances(queries, *refs, b);
        EXPECT_EQ(a, b);
    }
}

TEST(ThreadCountIndependence, GradientsAreBitIdenticalAcrossThreadCounts) {
    const Shape s{16, 16, 12};
    const auto f = testutil::random_factors(4, s, 15);
    const auto flat = random_entries(9000, shape_size(s), 16);
    const auto up = random_values(flat.size(), 17);
    const auto up_full = random_values(shape_size(s), 18);
    auto run = [&] {
        FactorMatrices g(4, s), h(4, s);
        kp::cp_factor_gradients(f, flat, up, g);
        kp::cp_factor_gradients(f, {}, up_full, h);
        return std::make_pair(g, h);
    };
    const auto one = with_threads(1, run);
    const auto four = with_threads(4, run);
    for (std::size_t d = 0; d < 3; ++d) {
        EXPECT_EQ(one.first.factors[d].data, four.first.factors[d].data);
        EXPECT_EQ(one.second.factors[d].data, four.second.factors[d].data);
    }
}

TEST(ChunkedAccumulate, SumIndependentOfThreads) {
    const auto values = random_values(10 * parallel::kChunk + 17, 19);
    auto run = [&] {
        std::vector<double> out(2, 0.0);
        parallel::chunked_accumulate(values.size(), out,
                                     [&](std::size_t b, std::size_t e, std::span<double> acc) {
                                         for (std::size_t i = b; i < e; ++i) {
                                             acc[0] += values[i];
                                             acc[1] += values[i] * values[i];
                                         }
                                     });
        return out;
    };
    const auto a = with_threads(1, run);
    const auto b = with_threads(3, run);
    EXPECT_EQ(a, b);
    double plain = 0.0;
    for (double v : values) plain += v;
    EXPECT_NEAR(a[0], plain, 1e-10);
}

TEST(TreeReduce, SumsPartialsInFixedOrder) {
    std::vector<std::vector<double>> partials{{1.0}, {2.0}, {3.0}, {4.0}, {5.0}};
    std::vector<double> out{10.0};
    parallel::tree_reduce(partials, out);
    EXPECT_EQ(out[0], 25.0);
    EXPECT_EQ(parallel::chunk_count(0), 0u);
    EXPECT_EQ(parallel::chunk_count(parallel::kChunk + 1), 2u);
}
