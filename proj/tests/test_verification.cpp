#include "cppruner/error.hpp"
#include "cppruner/verification.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace cppruner;

TEST(UnfoldingBoundCheck, SmallRunPasses) {
    const auto r = check_unfolding_bounds(40, 3);
    EXPECT_TRUE(r.passed()) << r.summary();
    EXPECT_EQ(r.instances, 40u);
    EXPECT_GE(r.worst, -1e-9);
}

TEST(UnfoldingBoundCheck, ZeroInstancesIsNotAPass) {
    CheckReport r{"x", 0, 0, 0.0, 1};
    EXPECT_FALSE(r.passed());
}

TEST(JacobianFd, ScalarQuadratic) {
    const ScalarField f = [](std::span<const double> x) { return x[0] * x[0] + 3.0 * x[1]; };
    const std::vector<double> x{0.5, -2.0};
    const auto g = jacobian_fd(f, x);
    EXPECT_NEAR(g[0], 1.0, 1e-9);
    EXPECT_NEAR(g[1], 3.0, 1e-9);
}

TEST(JacobianFd, VectorFieldShape) {
    const VectorField f = [](std::span<const double> x) {
        return std::vector<double>{x[0] * x[1], x[1], 2.0 * x[0]};
    };
    const std::vector<double> x{2.0, 5.0};
    const auto j = jacobian_fd(f, x);
    ASSERT_EQ(j.rows, 3u);
    ASSERT_EQ(j.cols, 2u);
    EXPECT_NEAR(j(0, 0), 5.0, 1e-8);
    EXPECT_NEAR(j(0, 1), 2.0, 1e-8);
    EXPECT_NEAR(j(1, 1), 1.0, 1e-8);
    EXPECT_NEAR(j(2, 0), 2.0, 1e-8);
}

TEST(SpectralNorm, DiagonalAndRankOne) {
    Matrix d(3, 3);
    d(0, 0) = 1.0;
    d(1, 1) = -4.0;
    d(2, 2) = 2.0;
    EXPECT_NEAR(spectral_norm(d), 4.0, 1e-10);
    Matrix r(2, 3);
    const double u[2] = {1, 2}, v[3] = {2, 0, 1};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = u[i] * v[j];
    EXPECT_NEAR(spectral_norm(r), std::sqrt(5.0) * std::sqrt(5.0), 1e-10);
}

TEST(NormChain, ScalarFieldOnRandomPoints) {
    const auto p = random_smooth_field(2);
    std::vector<double> pts(3 * 20);
    RngStream rng(4, "test");
    for (auto& v : pts) v = rng.uniform();
    const auto r = check_norm_chain(as_scalar_field(p), pts, 3);
    EXPECT_TRUE(r.passed()) << r.summary();
    EXPECT_EQ(r.instances, 20u);
}

TEST(NormChain, VectorFieldChain) {
    const VectorField f = [](std::span<const double> x) {
        return std::vector<double>{std::sin(x[0]) * x[1], x[0] + x[1] * x[1], std::exp(x[0] - x[1])};
    };
    const std::vector<double> pts{0.1, 0.2, 0.7, -0.3, 1.5, 0.9};
    EXPECT_TRUE(check_norm_chain(f, pts, 2).passed());
}

TEST(NormChain, SuiteRuns) {
    const auto r = normchain_suite(50, 6);
    EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(HutchinsonCheckTest, ConstantFieldEstimatesZero) {
    const ScalarField f = [](std::span<const double>) { return 2.5; };
    const std::vector<double> x{0.3, 0.4};
    const auto c = check_hutchinson(f, x, 1e-3, 1000, 7);
    EXPECT_EQ(c.estimate, 0.0);
    EXPECT_EQ(c.reference, 0.0);
}

TEST(HutchinsonCheckTest, SuitePassesOnSmallRun) {
    const auto r = hutchinson_suite(3, 20000, 1e-3, 8);
    EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(HutchinsonCheckTest, ErrorSlopeNearMinusOneHalf) {
    const auto p = random_smooth_field(9);
    const std::vector<double> x{0.4, 0.5, 0.6};
    const std::vector<std::size_t> counts{100, 400, 1600, 6400};
    const double slope = hutchinson_error_slope(as_scalar_field(p), x, 1e-3, counts, 30, 10);
    EXPECT_GT(slope, -0.65);
    EXPECT_LT(slope, -0.35);
}

TEST(GradientCheck, SampledProblemsPass) {
    const auto r = check_gradients(10, 11);
    EXPECT_TRUE(r.passed()) << r.summary();
    EXPECT_LT(r.worst, 1e-5);
}

TEST(GradientCheck, TamperedGradientFails) {
    const auto r = check_gradients(5, 11, [](std::vector<double>& g) { g[0] += 1.0; });
    EXPECT_GT(r.instances, 0u);
    EXPECT_EQ(r.failures, r.instances);
}

TEST(GradientCheck, ProblemsCoverEveryTerm) {
    RngStream rng(12, "test");
    std::set<std::string> seen;
    for (int i = 0; i < 20; ++i)
        for (const auto& p : sample_gradient_problems(rng)) seen.insert(p.term);
    EXPECT_GE(seen.size(), 4u);
}

TEST(GradientRelError, ExactGradientIsTiny) {
    GradientProblem p;
    p.term = "quad";
    p.theta = {1.0, -2.0};
    p.value = [](std::span<const double> t) { return t[0] * t[0] + t[0] * t[1]; };
    p.gradient = [](std::span<const double> t) { return std::vector<double>{2 * t[0] + t[1], t[0]}; };
    EXPECT_LT(gradient_rel_error(p), 1e-8);
}

TEST(CheckReportTest, SummaryAndCsv) {
    const CheckReport r{"demo", 3, 1, 0.5, 42};
    EXPECT_EQ(r.summary(), "demo: instances=3 failures=1 worst=0.5 seed=42");
    EXPECT_EQ(CheckReport::csv_header(), "name,instances,failures,worst,seed");
    EXPECT_EQ(r.csv_row(), "demo,3,1,0.5,42");
}
