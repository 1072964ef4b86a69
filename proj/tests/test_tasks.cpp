#include "cppruner/error.hpp"
#include "cppruner/io.hpp"
#include "cppruner/metrics.hpp"
#include "cppruner/regularizers.hpp"
#include "cppruner/tasks.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cppruner;

namespace {

TrainConfig small_grid_config(std::size_t iters) {
    TrainConfig c = inpaint_defaults();
    c.field.hidden = {32, 32};
    c.field.fourier_terms = 5;
    c.field.rank = 20;
    c.adam.lr = 3e-3;
    c.iterations = iters;
    c.trace_every = 50;
    return c;
}

FieldParams zero_output_field(const Shape& shape, std::uint64_t seed) {
    FieldSpec s;
    s.order = shape.size();
    s.rank = 4;
    s.fourier_terms = 3;
    s.hidden = {8};
    std::vector<Interval> dom;
    for (auto e : shape) dom.push_back(index_domain(e));
    auto p = init_params(s, dom, seed);
    for (std::size_t d = 0; d < p.order(); ++d) {
        for (auto& w : p.weight(d, p.depth() - 1)) w = 0.0;
        for (auto& b : p.bias(d, p.depth() - 1)) b = 0.0;
    }
    return p;
}

double true_sphere(const Point3& q, double r) {
    return std::sqrt((q[0] - 0.5) * (q[0] - 0.5) + (q[1] - 0.5) * (q[1] - 0.5) +
                     (q[2] - 0.5) * (q[2] - 0.5)) -
           r;
}

const PointNormalization kIdentity{{0.5, 0.5, 0.5}, 1.0};

} // namespace

// ---------------------------------------------------------------- inpainting

TEST(Inpaint, FullyObservedSmoothTensorIsRecovered) {
    // Both regularizers bias a noiseless full fit, so only the data term runs.
    const auto s = synth_lowrank({32, 32, 8}, 3, true, 7);
    auto c = small_grid_config(2000);
    c.adam.lr = 1e-2;
    c.reg.lambda_vsp = 0.0;
    c.reg.lambda_j = 0.0;
    const auto res = inpaint(s.tensor, ObservationMask::full(s.tensor.shape()), c);
    EXPECT_LT(nrmse(s.tensor, res.tensor), 1e-2);
    EXPECT_EQ(res.tensor.shape(), s.tensor.shape());
}

TEST(Inpaint, SingleObservedEntry) {
    DenseTensor obs({4, 5, 3});
    std::vector<std::uint8_t> bits(obs.size(), 0);
    bits[17] = 1;
    obs[17] = 0.6;
    auto c = small_grid_config(300);
    c.reg.lambda_vsp = 0.0;
    c.reg.lambda_j = 0.0;
    const auto res = inpaint(obs, ObservationMask(obs.shape(), bits), c);
    EXPECT_NEAR(res.tensor[17], 0.6, 1e-3);
    EXPECT_LT(res.observed_rmse, 1e-3);
}

TEST(Inpaint, EmptyMaskOrShapeMismatchThrows) {
    DenseTensor obs({3, 3});
    EXPECT_THROW(inpaint(obs, ObservationMask(obs.shape(), std::vector<std::uint8_t>(9, 0)),
                         small_grid_config(1)),
                 StructuralError);
    EXPECT_THROW(inpaint(obs, ObservationMask::full({3, 4}), small_grid_config(1)), StructuralError);
}

TEST(InpaintProperty, ObjectiveDecreasesOverMostWindows) {
    const auto s = synth_lowrank({16, 16, 4}, 3, true, 3);
    const auto mask = sample_mask(s.tensor.shape(), 0.3, 3);
    auto c = small_grid_config(600);
    c.trace_every = 1;
    // Averaging 16 draws keeps the traced smoothness estimate from masking the trend.
    c.reg.hutchinson_samples = 16;
    DenseTensor obs(s.tensor.shape());
    for (auto i : mask.indices()) obs[i] = s.tensor[i];
    const auto res = inpaint(obs, mask, c);
    ASSERT_EQ(res.trace.size(), 600u);
    std::size_t good = 0, total = 0;
    for (std::size_t i = 0; i + 100 < res.trace.size(); ++i, ++total)
        good += res.trace[i + 100].loss <= res.trace[i].loss;
    EXPECT_GE(static_cast<double>(good), 0.95 * static_cast<double>(total));
}

TEST(GridObjectiveTest, DataTermIsMeanSquaredResidual) {
    const auto target = testutil::random_tensor({5, 4, 3}, 1);
    const auto mask = sample_mask(target.shape(), 0.5, 2);
    auto c = small_grid_config(1);
    c.field.hidden = {6};
    c.field.rank = 3;
    c.reg.lambda_vsp = 0.0;
    std::vector<Interval> dom{index_domain(5), index_domain(4), index_domain(3)};
    auto spec = c.field;
    spec.order = 3;
    const auto p = init_params(spec, dom, 4);
    GridObjective obj(target, mask.indices(), c);
    EXPECT_FALSE(obj.batched());
    const auto e = obj.evaluate(p, {}, {});
    const auto t = materialize_grid(p, index_grid(target.shape())).tensor;
    double want = 0.0;
    for (auto i : mask.indices()) want += (t[i] - target[i]) * (t[i] - target[i]);
    want /= static_cast<double>(mask.count);
    EXPECT_NEAR(e.loss, want, 1e-14);
    EXPECT_NEAR(obj.last_terms().data, want, 1e-14);
}

TEST(GridObjectiveTest, BatchedAboveFullGridLimit) {
    auto c = small_grid_config(1);
    c.full_grid_limit = 10;
    c.batch_size = 8;
    const auto target = testutil::random_tensor({4, 4, 2}, 5);
    GridObjective obj(target, ObservationMask::full(target.shape()).indices(), c);
    EXPECT_TRUE(obj.batched());
}

// ---------------------------------------------------------------- denoising

TEST(SparseUpdate, IsSoftThresholdOfResidual) {
    const auto y = testutil::random_tensor({4, 4, 2}, 6, -1.0, 1.0);
    const DenseTensor zero(y.shape());
    EXPECT_EQ(sparse_update(y, zero, 0.4).values(), soft_threshold(y, 0.2).values());
}

TEST(Denoise, FrozenZeroFieldGivesClosedFormSparsePart) {
    const auto y = testutil::random_tensor({6, 5, 3}, 7, -1.0, 1.0);
    auto c = small_grid_config(1);
    c.lambda_s = 0.6;
    const auto init = zero_output_field(y.shape(), 8);
    const auto res = denoise(y, c, nullptr, &init);
    EXPECT_EQ(res.sparse.values(), soft_threshold(y, 0.3).values());
}

TEST(Denoise, NegativeSparseWeightThrows) {
    auto c = small_grid_config(1);
    c.lambda_s = -0.1;
    EXPECT_THROW(denoise(DenseTensor({3, 3, 3}), c), StructuralError);
}

TEST(DenoiseProperty, ResidualDecreasesOnSparseCorruption) {
    const auto s = synth_lowrank({16, 16, 4}, 3, true, 9);
    NoiseSpec spec;
    spec.sparse_rate = 0.1;
    const auto noisy = apply_noise(s.tensor, spec, 9);
    auto c = small_grid_config(600);
    c.adam.lr = 1e-3;
    c.lambda_s = 0.5;
    c.trace_every = 100;
    const auto res = denoise(noisy.tensor, c);
    ASSERT_GE(res.residual_norms.size(), 3u);
    for (std::size_t i = 1; i < res.residual_norms.size(); ++i)
        EXPECT_LE(res.residual_norms[i], res.residual_norms[i - 1]) << "row " << i;
    EXPECT_EQ(res.clean.shape(), s.tensor.shape());
    EXPECT_EQ(res.sparse.shape(), s.tensor.shape());
}

// ---------------------------------------------------------------- SDF

TEST(PointNormalizationTest, FitsBoundingBoxIntoMargin) {
    const PointCloud pts{{-1, 2, 0}, {3, 2, 1}, {1, 4, 0.5}};
    const auto n = PointNormalization::fit(pts);
    const auto q = n.apply(pts);
    double lo = 1, hi = 0;
    for (const auto& p : q)
        for (double v : p) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    EXPECT_NEAR(lo, 0.1, 1e-12);
    EXPECT_NEAR(hi, 0.9, 1e-12);
    for (std::size_t i = 0; i < 3; ++i)
        for (int d = 0; d < 3; ++d) EXPECT_NEAR(n.invert(q[i])[d], pts[i][d], 1e-12);
}

TEST(SdfTrain, SinglePointWithoutShapeTermsInterpolates) {
    auto c = sdf_defaults();
    c.field.hidden = {16};
    c.field.rank = 4;
    c.field.fourier_terms = 2;
    c.lambda_eikonal = 0.0;
    c.lambda_offsurface = 0.0;
    c.reg.lambda_vsp = 0.0;
    c.reg.lambda_j = 0.0;
    c.adam.lr = 3e-3;
    c.iterations = 400;
    const PointCloud pts{{0.3, -0.2, 1.1}};
    const auto res = sdf_train(pts, c);
    EXPECT_LT(std::abs(res.model(res.model.normalization.apply(pts[0]))), 1e-3);
}

TEST(SdfTrain, EmptyPointSetThrows) {
    EXPECT_THROW(sdf_train({}, sdf_defaults()), StructuralError);
}

TEST(SdfObjectiveTest, ExactAndFiniteDifferenceEikonalAgree) {
    auto c = sdf_defaults();
    c.field.hidden = {8};
    c.field.rank = 3;
    c.field.fourier_terms = 2;
    auto spec = c.field;
    spec.order = 3;
    const auto p = init_params(spec, std::vector<Interval>(3), 11);
    const auto pts = sphere_points(30, 0.3, 12);
    PointCloud shifted;
    for (auto q : pts) shifted.push_back({q[0] + 0.5, q[1] + 0.5, q[2] + 0.5});
    std::vector<double> free(3 * 40);
    RngStream rng(13, "free");
    for (auto& v : free) v = rng.uniform();
    SdfObjective exact(shifted, c);
    auto cf = c;
    cf.finite_difference_eikonal = true;
    SdfObjective fd(shifted, cf);
    const auto a = exact.evaluate(p, free, nullptr);
    const auto b = fd.evaluate(p, free, nullptr);
    EXPECT_NEAR(a.loss, b.loss, 1e-7);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.grads.size(); ++i) {
        num += (a.grads[i] - b.grads[i]) * (a.grads[i] - b.grads[i]);
        den += a.grads[i] * a.grads[i];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-5);
    EXPECT_EQ(exact.free_count(), 120u);
}

TEST(SdfGradientFd, MatchesExactSpatialGradient) {
    FieldSpec spec;
    spec.order = 3;
    spec.rank = 3;
    spec.fourier_terms = 2;
    spec.hidden = {8};
    const auto p = init_params(spec, std::vector<Interval>(3), 14);
    std::vector<double> pts(3 * 10);
    RngStream rng(15, "test");
    for (auto& v : pts) v = rng.uniform();
    const auto fd = sdf_gradient_fd(p, pts);
    const auto exact = evaluate_points(p, pts, true).gradients;
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(fd[i], exact[i], 1e-7);
}

TEST(Upsample, ExactSphereBandHasSmallTrueDistance) {
    const auto res = upsample_function([](const Point3& q) { return true_sphere(q, 0.3); }, kIdentity,
                                       64, 0.05, 1);
    ASSERT_GT(res.points.size(), 1000u);
    for (const auto& q : res.points) ASSERT_LT(std::abs(true_sphere(q, 0.3)), 0.05);
    EXPECT_EQ(res.grid, 64u);
}

TEST(Upsample, ZeroBandIsEmpty) {
    const auto res = upsample_function([](const Point3& q) { return true_sphere(q, 0.3) + 1e-3; },
                                       kIdentity, 32, 0.0, 0);
    EXPECT_TRUE(res.points.empty());
}

TEST(Upsample, DoublesGridOnceBelowMinimum) {
    const auto res = upsample_function([](const Point3& q) { return true_sphere(q, 0.3); }, kIdentity,
                                       16, 0.02, 1000000);
    EXPECT_EQ(res.grid, 32u);
}

TEST(Upsample, PointsAreMappedBackToOriginalFrame) {
    const PointNormalization n{{10, 20, 30}, 0.1};
    const auto res = upsample_function([](const Point3& q) { return true_sphere(q, 0.3); }, n, 32, 0.03, 1);
    ASSERT_FALSE(res.points.empty());
    for (const auto& p : res.points) {
        const double r = std::sqrt((p[0] - 10) * (p[0] - 10) + (p[1] - 20) * (p[1] - 20) +
                                   (p[2] - 30) * (p[2] - 30));
        EXPECT_NEAR(r, 3.0, 0.3 + 1e-9);
    }
}

TEST(Upsample, RerunIsIdentical) {
    FieldSpec spec;
    spec.order = 3;
    spec.rank = 3;
    spec.fourier_terms = 2;
    spec.hidden = {8};
    SdfModel m{init_params(spec, std::vector<Interval>(3), 16), kIdentity};
    const auto a = upsample(m, 24, 0.05, 10);
    const auto b = upsample(m, 24, 0.05, 10);
    EXPECT_EQ(a.points, b.points);
}

// ---------------------------------------------------------------- mass profile

TEST(MassProfile, SingleComponent) {
    const auto f = testutil::random_factors(1, {3, 4}, 17);
    const auto prof = cp_mass_profile(f);
    ASSERT_EQ(prof.size(), 1u);
    EXPECT_DOUBLE_EQ(prof[0].fraction, 1.0);
}

TEST(MassProfile, TwoComponentsThreeToOne) {
    FactorMatrices f(2, {2, 2});
    f.factors[0].data = {0, 1, 3, 0};    // row norms 1, 3
    f.factors[1].data = {0, -1, 0, 1};   // row norms 1, 1
    const auto prof = cp_mass_profile(f);
    EXPECT_EQ(prof[0].component, 1u);
    EXPECT_DOUBLE_EQ(prof[0].fraction, 0.75);
    EXPECT_DOUBLE_EQ(prof[1].fraction, 0.25);
}

TEST(MassProfile, AllZeroGivesZeroFractions) {
    const auto prof = cp_mass_profile(FactorMatrices(3, {2, 2, 2}));
    for (const auto& e : prof) EXPECT_EQ(e.fraction, 0.0);
}

TEST(MassProfileProperty, SumsToOneAndFollowsPermutations) {
    const auto f = testutil::random_factors(5, {4, 3, 6}, 18);
    const auto prof = cp_mass_profile(f);
    double sum = 0.0;
    for (const auto& e : prof) sum += e.fraction;
    EXPECT_NEAR(sum, 1.0, 1e-14);
    for (std::size_t i = 1; i < prof.size(); ++i) EXPECT_GE(prof[i - 1].fraction, prof[i].fraction);
    // Reverse the component order.
    auto g = f;
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t i = 0; i < g.factors[d].cols; ++i) g.factors[d](r, i) = f.factors[d](4 - r, i);
    const auto pg = cp_mass_profile(g);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_DOUBLE_EQ(pg[i].fraction, prof[i].fraction);
        EXPECT_EQ(pg[i].component, 4 - prof[i].component);
    }
}

TEST(ReferenceGridTest, SpansDomain) {
    FieldSpec spec;
    spec.order = 2;
    spec.hidden = {4};
    const auto p = init_params(spec, {{0.0, 1.0}, {-2.0, 2.0}}, 1);
    const auto g = reference_grid(p, 5);
    EXPECT_EQ(g[0], (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
    EXPECT_EQ(g[1].front(), -2.0);
    EXPECT_EQ(g[1].back(), 2.0);
    EXPECT_THROW(reference_grid(p, 1), StructuralError);
}
