#include "cppruner/error.hpp"
#include "cppruner/linalg.hpp"
#include "cppruner/regularizers.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace cppruner;

namespace {

/// One component with rows of the given norms (placed on the first entry).
FactorMatrices rank_one_with_norms(const std::vector<double>& norms) {
    FactorMatrices f;
    f.rank = 1;
    for (double n : norms) {
        Matrix m(1, 3);
        m(0, 0) = 0.6 * n;
        m(0, 2) = -0.8 * n;
        f.factors.push_back(m);
    }
    return f;
}

FieldParams small_field(std::uint64_t seed, std::size_t order = 3, std::size_t rank = 3) {
    FieldSpec s;
    s.order = order;
    s.rank = rank;
    s.fourier_terms = 2;
    s.hidden = {5};
    s.hidden_activation = Activation::tanh;
    return init_params(s, std::vector<Interval>(order, Interval{0.0, 3.0}), seed);
}

std::vector<double> random_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
    RngStream rng(seed, "test");
    std::vector<double> pts(n * dim);
    for (auto& v : pts) v = rng.uniform(0.0, 3.0);
    return pts;
}

double value_at(const FieldParams& p, std::span<const double> x) { return field_forward(p, x).value; }

double normwise_error(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::max(std::sqrt(na), std::sqrt(nb));
    return den == 0.0 ? 0.0 : std::sqrt(num) / den;
}

template <class F>
std::vector<double> fd_params(FieldParams p, F&& objective, double h = 1e-6) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p.weights()[i];
        p.weights()[i] = keep + h;
        const double hi = objective(p);
        p.weights()[i] = keep - h;
        const double lo = objective(p);
        p.weights()[i] = keep;
        g[i] = (hi - lo) / (2 * h);
    }
    return g;
}

} // namespace

// ---------------------------------------------------------------- VS_p

TEST(VspNorm, ArithmeticOnStatedNorms) {
    const auto f = rank_one_with_norms({2, 3, 4});
    EXPECT_NEAR(vsp_norm(f, 1.0).value, 33.0, 1e-12);
    EXPECT_NEAR(vsp_middle_term(f, 1.0), 24.0, 1e-12);
}

TEST(VspNorm, EqualNormsMeetMiddleTerm) {
    const auto f = rank_one_with_norms({2, 2, 2});
    EXPECT_NEAR(vsp_norm(f, 1.0 / 3.0).value, 2.0, 1e-12);
    EXPECT_NEAR(vsp_middle_term(f, 1.0 / 3.0), 2.0, 1e-12);
}

TEST(VspNorm, ZeroRowComponentContributesNothingToMiddle) {
    auto f = testutil::random_factors(2, {3, 4, 5}, 1);
    const double before = vsp_middle_term(f, 0.5);
    for (std::size_t i = 0; i < 4; ++i) f.factors[1](1, i) = 0.0;
    auto g = f;
    g.rank = 1;
    for (auto& m : g.factors) {
        m.rows = 1;
        m.data.resize(m.cols);
    }
    EXPECT_NEAR(vsp_middle_term(f, 0.5), vsp_middle_term(g, 0.5), 1e-14);
    EXPECT_LT(vsp_middle_term(f, 0.5), before);
}

TEST(VspNorm, InvalidExponentThrows) {
    const auto f = testutil::random_factors(2, {3, 3}, 2);
    EXPECT_THROW(vsp_norm(f, 0.0), StructuralError);
    EXPECT_THROW(vsp_norm(f, 1.5), StructuralError);
}

TEST(VspNormProperty, BoundsEveryUnfolding) {
    RngStream rng(3, "test");
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t D = 3 + rng.below(2);
        const std::size_t R = 1 + rng.below(5);
        Shape shape(D);
        for (auto& s : shape) s = 2 + rng.below(5);
        const auto f = testutil::random_factors(R, shape, 1000 + trial);
        const auto t = cp_reconstruct(f);
        for (double p : {0.1, 0.5, 1.0}) {
            const double upper = vsp_norm(f, p).value;
            const double middle = vsp_middle_term(f, p);
            EXPECT_LE(middle, upper * (1 + 1e-9));
            for (const auto& set : IndexSet::all_proper(D))
                EXPECT_LE(schatten_p(unfold(t, set), p), middle * (1 + 1e-9));
        }
    }
}

TEST(VspNormProperty, ScaleLaw) {
    const auto f = testutil::random_factors(3, {4, 5, 6}, 4);
    for (double c : {-2.0, 0.3, 5.0}) {
        auto g = f;
        for (auto& m : g.factors)
            for (auto& v : m.data) v *= c;
        for (double p : {0.1, 0.5, 1.0}) {
            const double q = p * 3;
            EXPECT_LT(testutil::rel_diff(vsp_norm(g, p).value, std::pow(std::abs(c), q) * vsp_norm(f, p).value),
                      1e-12);
        }
    }
}

TEST(VspNorm, GradientMatchesFiniteDifferences) {
    auto f = testutil::random_factors(3, {4, 3, 5}, 5);
    for (double p : {0.1, 0.5, 1.0}) {
        const auto res = vsp_norm(f, p);
        const double h = 1e-6;
        std::vector<double> a, b;
        for (std::size_t d = 0; d < 3; ++d)
            for (std::size_t i = 0; i < f.factors[d].data.size(); ++i) {
                const double keep = f.factors[d].data[i];
                f.factors[d].data[i] = keep + h;
                const double hi = vsp_norm(f, p).value;
                f.factors[d].data[i] = keep - h;
                const double lo = vsp_norm(f, p).value;
                f.factors[d].data[i] = keep;
                a.push_back(res.grad.factors[d].data[i]);
                b.push_back((hi - lo) / (2 * h));
            }
        EXPECT_LT(normwise_error(a, b), 1e-7);
    }
}

TEST(VspNorm, ZeroRowsKeepFiniteZeroGradient) {
    FactorMatrices f(2, {3, 3});
    f.factors[0](0, 0) = 1.0;
    f.factors[1](0, 1) = 1.0;
    const auto res = vsp_norm(f, 0.1);
    for (const auto& m : res.grad.factors)
        for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(m.data[i], 0.0);
    for (const auto& m : res.grad.factors)
        for (double v : m.data) EXPECT_TRUE(std::isfinite(v));
}

// ---------------------------------------------------------------- Hutchinson

TEST(Hutchinson, ConstantFieldIsExactlyZero) {
    auto p = small_field(6);
    for (std::size_t d = 0; d < 3; ++d) {
        for (auto& w : p.weight(d, p.depth() - 1)) w = 0.0;
        for (auto& b : p.bias(d, p.depth() - 1)) b = 0.7;
    }
    RngStream rng(1, "hutch");
    const auto res = hutchinson_smoothness(p, random_points(10, 3, 7), 0.5, 4, rng);
    EXPECT_EQ(res.value, 0.0);
    for (double g : res.grads) EXPECT_EQ(g, 0.0);
}

TEST(Hutchinson, LinearFieldEstimateConverges) {
    const std::vector<double> c{0.5, -1.25, 2.0};
    auto f = [&](std::span<const double> x) { return c[0] * x[0] + c[1] * x[1] + c[2] * x[2]; };
    RngStream rng(8, "hutch");
    const std::vector<double> x{0.1, 0.2, 0.3};
    const auto est = hutchinson_estimate(f, x, 1e-3, 100000, rng);
    const double want = 0.25 + 1.5625 + 4.0;
    EXPECT_LT(std::abs(est.mean - want) / want, 0.02);
    EXPECT_GT(est.std_error, 0.0);
}

TEST(Hutchinson, AxisNoiseIsSquaredForwardDifference) {
    const auto p = small_field(9);
    const auto pts = random_points(6, 3, 10);
    const double kappa = 0.2;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const auto res = hutchinson_smoothness(p, pts, kappa, axis_noise(6, 3, kappa, axis));
        double want = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
            std::vector<double> x(pts.begin() + 3 * k, pts.begin() + 3 * k + 3), y = x;
            y[axis] += kappa;
            const double diff = value_at(p, y) - value_at(p, x);
            want += diff * diff / (kappa * kappa);
        }
        EXPECT_NEAR(res.value, want / 6.0, 1e-12);
    }
}

TEST(Hutchinson, SameSeedIsBitReproducible) {
    const auto p = small_field(11);
    const auto pts = random_points(8, 3, 12);
    RngStream a(5, "hutch"), b(5, "hutch");
    const auto ra = hutchinson_smoothness(p, pts, 1.0, 2, a);
    const auto rb = hutchinson_smoothness(p, pts, 1.0, 2, b);
    EXPECT_EQ(ra.value, rb.value);
    EXPECT_EQ(ra.grads, rb.grads);
}

TEST(Hutchinson, GradientMatchesFiniteDifferencesWithFrozenNoise) {
    const auto p = small_field(13);
    const auto pts = random_points(5, 3, 14);
    RngStream rng(15, "hutch");
    const auto noise = draw_hutchinson_noise(5, 2, 3, 0.3, rng);
    const auto res = hutchinson_smoothness(p, pts, 0.3, noise);
    const auto fd = fd_params(p, [&](const FieldParams& q) {
        return hutchinson_smoothness(q, pts, 0.3, noise).value;
    });
    EXPECT_LT(normwise_error(res.grads, fd), 1e-6);
}

TEST(HutchinsonProperty, InvariantToConstantOffset) {
    // Rank R + 1 field whose extra component is the constant 0.9 on every axis.
    const auto base = small_field(16, 3, 2);
    FieldSpec s;
    s.order = 3;
    s.rank = 3;
    s.fourier_terms = 2;
    s.hidden = {5};
    s.hidden_activation = Activation::tanh;
    auto shifted = init_params(s, std::vector<Interval>(3, Interval{0.0, 3.0}), 16);
    for (std::size_t d = 0; d < 3; ++d) {
        const auto w0 = base.weight(d, 0);
        std::copy(w0.begin(), w0.end(), shifted.weight(d, 0).begin());
        const auto w1 = base.weight(d, 1);
        auto t1 = shifted.weight(d, 1);
        std::fill(t1.begin(), t1.end(), 0.0);
        std::copy(w1.begin(), w1.end(), t1.begin());
        auto b1 = shifted.bias(d, 1);
        b1[2] = std::cbrt(0.9);
    }
    const auto pts = random_points(7, 3, 17);
    EXPECT_NEAR(value_at(shifted, std::span<const double>(pts.data(), 3)),
                value_at(base, std::span<const double>(pts.data(), 3)) + 0.9, 1e-12);
    RngStream a(18, "hutch");
    const auto noise = draw_hutchinson_noise(7, 3, 3, 0.4, a);
    EXPECT_NEAR(hutchinson_smoothness(shifted, pts, 0.4, noise).value,
                hutchinson_smoothness(base, pts, 0.4, noise).value, 1e-10);
}

TEST(GridNoise, OneOffsetPerCoordinate) {
    const Grid g{{0, 1, 2, 3}, {0, 1}, {0, 1, 2}};
    RngStream rng(19, "hutch");
    const auto n = draw_grid_noise(g, 0.5, rng);
    ASSERT_EQ(n.eps.size(), 3u);
    EXPECT_EQ(n.eps[0].size(), 4u);
    EXPECT_EQ(n.eps[1].size(), 2u);
    EXPECT_EQ(n.eps[2].size(), 3u);
}

TEST(GridNoise, PerturbationScaleIsKappa) {
    const Grid g{std::vector<double>(20000, 0.0)};
    RngStream rng(20, "hutch");
    const auto n = draw_grid_noise(g, 0.25, rng);
    double m2 = 0.0;
    for (double e : n.eps[0]) m2 += e * e;
    EXPECT_NEAR(std::sqrt(m2 / 20000.0), 0.25, 0.01);
}

TEST(GridSmoothness, MatchesPerturbedGridOracle) {
    const auto p = small_field(21);
    const Grid g{{0, 1, 2, 3}, {0, 1, 2}, {0, 1.5, 3}};
    RngStream rng(22, "hutch");
    const auto noise = draw_grid_noise(g, 0.3, rng);
    double want = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) {
                const std::vector<double> x{g[0][i], g[1][j], g[2][k]};
                const std::vector<double> y{g[0][i] + noise.eps[0][i], g[1][j] + noise.eps[1][j],
                                            g[2][k] + noise.eps[2][k]};
                const double diff = value_at(p, y) - value_at(p, x);
                want += diff * diff / 0.09;
                ++n;
            }
    EXPECT_NEAR(grid_smoothness(p, g, 0.3, noise).value, want / double(n), 1e-12);
}

TEST(GridSmoothness, GradientMatchesFiniteDifferences) {
    const auto p = small_field(23);
    const Grid g{{0, 1, 2}, {0, 1, 2, 3}, {0.5, 2.5}};
    RngStream rng(24, "hutch");
    const auto noise = draw_grid_noise(g, 0.5, rng);
    const auto res = grid_smoothness(p, g, 0.5, noise);
    const auto fd = fd_params(p, [&](const FieldParams& q) { return grid_smoothness(q, g, 0.5, noise).value; });
    EXPECT_LT(normwise_error(res.grads, fd), 1e-6);
}

TEST(TiedSmoothness, EntrySubsetAveragesOnlyThoseEntries) {
    const auto base = testutil::random_factors(2, {3, 4}, 25);
    const auto pert = testutil::random_factors(2, {3, 4}, 26);
    const auto tb = cp_reconstruct(base), tp = cp_reconstruct(pert);
    const std::vector<std::size_t> entries{0, 5, 11};
    FactorMatrices gb(2, {3, 4}), gp(2, {3, 4});
    const double v = tied_smoothness_term(base, pert, 2.0, entries, gb, gp);
    double want = 0.0;
    for (auto e : entries) want += (tp[e] - tb[e]) * (tp[e] - tb[e]) / 4.0;
    EXPECT_NEAR(v, want / 3.0, 1e-14);
}

// ---------------------------------------------------------------- soft threshold

TEST(SoftThreshold, Examples) {
    EXPECT_NEAR(soft_threshold(1.2, 0.5), 0.7, 1e-15);
    EXPECT_EQ(soft_threshold(-0.3, 0.5), 0.0);
    EXPECT_NEAR(soft_threshold(-2.0, 0.5), -1.5, 1e-15);
    const auto t = testutil::random_tensor({4, 4}, 27, -1.0, 1.0);
    EXPECT_EQ(soft_threshold(t, 0.0).values(), t.values());
    EXPECT_THROW(soft_threshold(t, -0.1), StructuralError);
}

TEST(SoftThresholdProperty, NonExpansive) {
    RngStream rng(28, "test");
    for (int i = 0; i < 10000; ++i) {
        const double x = rng.uniform(-3, 3), y = rng.uniform(-3, 3), tau = rng.uniform(0, 2);
        ASSERT_LE(std::abs(soft_threshold(x, tau) - soft_threshold(y, tau)), std::abs(x - y) + 1e-15);
    }
}

// ---------------------------------------------------------------- combined

TEST(CombinedRegularizer, BothWeightsZero) {
    const auto p = small_field(29);
    RegWeights w;
    w.lambda_vsp = 0.0;
    w.lambda_j = 0.0;
    RngStream rng(1, "hutch");
    const auto res = combined_regularizer(p, index_grid({4, 4, 4}), random_points(5, 3, 30), w, rng);
    EXPECT_EQ(res.value, 0.0);
    for (double g : res.grads) EXPECT_EQ(g, 0.0);
}

TEST(CombinedRegularizer, WithoutSmoothnessEqualsWeightedVsp) {
    const auto p = small_field(31);
    RegWeights w;
    w.lambda_vsp = 0.25;
    w.lambda_j = 0.0;
    const Grid grid = index_grid({4, 3, 4});
    RngStream rng(1, "hutch");
    const auto res = combined_regularizer(p, grid, random_points(5, 3, 32), w, rng);
    EXPECT_NEAR(res.value, 0.25 * vsp_norm(grid_factors(p, grid), w.p).value, 1e-12);
}

TEST(CombinedRegularizer, GradientMatchesFiniteDifferencesWithFrozenNoise) {
    const auto p = small_field(33);
    RegWeights w;
    w.lambda_vsp = 0.3;
    w.p = 0.5;
    w.lambda_j = 0.7;
    w.kappa = 0.4;
    w.hutchinson_samples = 2;
    const Grid grid = index_grid({4, 4, 3});
    const auto batch = random_points(6, 3, 34);
    RngStream noise_rng(35, "hutch");
    const auto noise = draw_hutchinson_noise(6, 2, 3, w.kappa, noise_rng);
    RngStream rng(1, "hutch");
    const auto res = combined_regularizer(p, grid, batch, w, rng, &noise);
    EXPECT_NEAR(res.value, w.lambda_vsp * res.vsp + w.lambda_j * res.smooth, 1e-14);
    const auto fd = fd_params(p, [&](const FieldParams& q) {
        RngStream unused(1, "hutch");
        return combined_regularizer(q, grid, batch, w, unused, &noise).value;
    });
    EXPECT_LT(normwise_error(res.grads, fd), 1e-4);
}

TEST(RegWeightsTest, Validation) {
    RegWeights w;
    EXPECT_NO_THROW(w.validate());
    EXPECT_DOUBLE_EQ(w.q(3), 0.1 * 3);
    w.p = 0.0;
    EXPECT_THROW(w.validate(), StructuralError);
    w = RegWeights{};
    w.kappa = 0.0;
    EXPECT_THROW(w.validate(), StructuralError);
    w = RegWeights{};
    w.lambda_j = -1.0;
    EXPECT_THROW(w.validate(), StructuralError);
}
