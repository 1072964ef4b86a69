#include "cppruner/verification.hpp"

#include "cppruner/error.hpp"
#include "cppruner/linalg.hpp"
#include "cppruner/optimizer.hpp"
#include "cppruner/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace cppruner {

std::string CheckReport::summary() const {
    std::ostringstream out;
    out << name << ": instances=" << instances << " failures=" << failures << " worst=" << worst
        << " seed=" << seed;
    return out.str();
}

std::string CheckReport::csv_header() { return "name,instances,failures,worst,seed"; }

std::string CheckReport::csv_row() const {
    std::ostringstream out;
    out.precision(17);
    out << name << ',' << instances << ',' << failures << ',' << worst << ',' << seed;
    return out.str();
}

ScalarField as_scalar_field(const FieldParams& params) {
    return [&params](std::span<const double> x) { return field_forward(params, x).value; };
}

// ---------------------------------------------------------------------------

CheckReport check_unfolding_bounds(std::size_t n_instances, std::uint64_t seed) {
    if (n_instances == 0) throw StructuralError("need at least one instance");
    static constexpr double ps[3] = {0.1, 0.5, 1.0};
    std::vector<double> worst(n_instances, 1.0);
    std::vector<std::size_t> failed(n_instances, 0);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n_instances; ++i) {
        RngStream rng(seed, "theorem1", i);
        const std::size_t D = 3 + rng.below(2);
        const std::size_t R = 1 + rng.below(5);
        Shape shape(D);
        for (auto& n : shape) n = 2 + rng.below(7);
        const double p = ps[rng.below(3)];
        FactorMatrices f(R, shape);
        for (auto& U : f.factors)
            for (auto& v : U.data) v = rng.normal();
        const double upper = vsp_norm(f, p).value;
        const double middle = vsp_middle_term(f, p);
        const DenseTensor t = cp_reconstruct(f);
        double w = (upper - middle) / upper;
        for (const auto& set : IndexSet::all_proper(D)) {
            const double sp = schatten_p(unfold(t, set), p);
            w = std::min(w, (middle - sp) / middle);
        }
        worst[i] = w;
        failed[i] = w < -1e-9 ? 1 : 0;
    }
    CheckReport r{"theorem1", n_instances, 0, 1.0, seed};
    for (std::size_t i = 0; i < n_instances; ++i) {
        r.failures += failed[i];
        r.worst = std::min(r.worst, worst[i]);
    }
    return r;
}

// ---------------------------------------------------------------------------

std::vector<double> jacobian_fd(const ScalarField& f, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw StructuralError("step must be positive");
    std::vector<double> y(x.begin(), x.end()), g(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        y[d] = x[d] + h;
        const double fp = f(y);
        y[d] = x[d] - h;
        const double fm = f(y);
        y[d] = x[d];
        g[d] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix jacobian_fd(const VectorField& f, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw StructuralError("step must be positive");
    std::vector<double> y(x.begin(), x.end());
    Matrix J;
    for (std::size_t d = 0; d < x.size(); ++d) {
        y[d] = x[d] + h;
        const auto fp = f(y);
        y[d] = x[d] - h;
        const auto fm = f(y);
        y[d] = x[d];
        if (d == 0) J = Matrix(fp.size(), x.size());
        for (std::size_t o = 0; o < fp.size(); ++o) J(o, d) = (fp[o] - fm[o]) / (2.0 * h);
    }
    return J;
}

double spectral_norm(const Matrix& m) {
    const auto s = singular_values(m);
    return s.empty() ? 0.0 : s.front();
}

CheckReport check_norm_chain(const ScalarField& f, std::span<const double> points, std::size_t dim) {
    if (dim == 0 || points.size() % dim != 0) throw StructuralError("point buffer is not n x dim");
    CheckReport r{"normchain", points.size() / dim, 0, 0.0, 0};
    for (std::size_t k = 0; k < r.instances; ++k) {
        const auto g = jacobian_fd(f, points.subspan(k * dim, dim));
        Matrix J(1, dim);
        std::copy(g.begin(), g.end(), J.data.begin());
        const double two = spectral_norm(J), fro = J.frobenius_norm();
        const double err = std::abs(two - fro) / std::max(1.0, fro);
        r.worst = std::max(r.worst, err);
        if (err > 1e-10) ++r.failures;
    }
    return r;
}

CheckReport check_norm_chain(const VectorField& f, std::span<const double> points, std::size_t dim) {
    if (dim == 0 || points.size() % dim != 0) throw StructuralError("point buffer is not n x dim");
    CheckReport r{"normchain", points.size() / dim, 0, 1.0, 0};
    for (std::size_t k = 0; k < r.instances; ++k) {
        const Matrix J = jacobian_fd(f, points.subspan(k * dim, dim));
        const double two = spectral_norm(J), fro = J.frobenius_norm();
        const double rank = static_cast<double>(std::max<std::size_t>(1, numerical_rank(J)));
        const double scale = std::max(fro, 1e-300);
        const double slack = std::min(fro - two, std::sqrt(rank) * two - fro) / scale;
        r.worst = std::min(r.worst, slack);
        if (slack < -1e-12) ++r.failures;
    }
    return r;
}

// ---------------------------------------------------------------------------

static double squared(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

HutchinsonCheck check_hutchinson(const ScalarField& f, std::span<const double> x, double kappa,
                                 std::size_t n, std::uint64_t seed) {
    if (n == 0) throw StructuralError("need at least one sample");
    RngStream rng(seed, "hutch");
    const auto est = hutchinson_estimate(f, x, kappa, n, rng);
    HutchinsonCheck c;
    c.estimate = est.mean;
    c.std_error = est.std_error;
    c.reference = squared(jacobian_fd(f, x));
    const double diff = std::abs(c.estimate - c.reference);
    c.deviation = c.reference > 0.0 ? diff / c.reference : diff;
    c.report = CheckReport{"hutchinson", 1, 0, c.deviation, seed};
    if (diff > 3.0 * c.std_error + 1e-6 * c.reference) c.report.failures = 1;
    return c;
}

double hutchinson_error_slope(const ScalarField& f, std::span<const double> x, double kappa,
                              std::span<const std::size_t> sample_counts, std::size_t reps,
                              std::uint64_t seed) {
    if (sample_counts.size() < 2 || reps == 0) throw StructuralError("need two sample counts and reps");
    const double ref = squared(jacobian_fd(f, x));
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < sample_counts.size(); ++i) {
        double ss = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            RngStream rng(seed, "hutch", i * reps + r);
            const double e = hutchinson_estimate(f, x, kappa, sample_counts[i], rng).mean - ref;
            ss += e * e;
        }
        lx.push_back(std::log(static_cast<double>(sample_counts[i])));
        ly.push_back(0.5 * std::log(ss / static_cast<double>(reps)));
    }
    const double n = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / n;
        my += ly[i] / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

// ---------------------------------------------------------------------------

double gradient_rel_error(const GradientProblem& problem, double h) {
    const auto analytic = problem.gradient(problem.theta);
    if (analytic.size() != problem.theta.size()) throw StructuralError("gradient size mismatch");
    std::vector<double> t(problem.theta);
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double orig = t[i];
        t[i] = orig + h;
        const double fp = problem.value(t);
        t[i] = orig - h;
        const double fm = problem.value(t);
        t[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        diff += (analytic[i] - numeric) * (analytic[i] - numeric);
        na += analytic[i] * analytic[i];
        nb += numeric * numeric;
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom > 0.0 ? std::sqrt(diff) / denom : std::sqrt(diff);
}

namespace {

FieldSpec random_spec(RngStream& rng, std::size_t order) {
    FieldSpec s;
    s.order = order;
    s.rank = 1 + rng.below(4);
    s.fourier_terms = 1 + rng.below(3);
    s.base_frequency = rng.uniform(0.2, 1.0);
    s.hidden.assign(1 + rng.below(2), 0);
    for (auto& w : s.hidden) w = 3 + rng.below(4);
    s.hidden_activation = rng.below(2) == 0 ? Activation::sine : Activation::tanh;
    s.activated_head = rng.below(2) == 0;
    s.bias = rng.below(2) == 0;
    return s;
}

// Wraps a params -> (loss, grads) evaluator as a problem over flat weights.
GradientProblem make_problem(std::string term, const FieldParams& base,
                             std::function<Evaluation(const FieldParams&)> eval) {
    GradientProblem g;
    g.term = std::move(term);
    g.theta.assign(base.weights().begin(), base.weights().end());
    auto with = [base](std::span<const double> theta) {
        FieldParams p = base;
        std::copy(theta.begin(), theta.end(), p.weights().begin());
        return p;
    };
    g.value = [with, eval](std::span<const double> th) { return eval(with(th)).loss; };
    g.gradient = [with, eval](std::span<const double> th) { return eval(with(th)).grads; };
    return g;
}

// Random grid points away from the domain ends, as a flat n x D buffer.
std::vector<double> random_points(RngStream& rng, const FieldParams& p, std::size_t n) {
    std::vector<double> pts(n * p.order());
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t d = 0; d < p.order(); ++d) {
            const auto iv = p.domain()[d];
            pts[k * p.order() + d] = rng.uniform(iv.lo, iv.hi);
        }
    return pts;
}

} // namespace

std::vector<GradientProblem> sample_gradient_problems(RngStream& rng) {
    std::vector<GradientProblem> out;
    const std::uint64_t seed = rng.next_u64();

    // Grid tasks: data term, VS_p, grid-tied smoothness.
    const std::size_t D = 2 + rng.below(2);
    Shape shape(D);
    for (auto& n : shape) n = 2 + rng.below(4);
    const FieldSpec spec = random_spec(rng, D);
    std::vector<Interval> dom;
    for (auto n : shape) dom.push_back(index_domain(n));
    const FieldParams grid_params = init_params(spec, dom, seed);

    DenseTensor target(shape);
    for (auto& v : target.values()) v = rng.uniform();
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < target.size(); ++i)
        if (rng.uniform() < 0.6 || i == 0) observed.push_back(i);

    TrainConfig data_cfg;
    data_cfg.reg.lambda_vsp = 0.0;
    data_cfg.reg.lambda_j = 0.0;
    auto data_obj = std::make_shared<GridObjective>(target, observed, data_cfg);
    out.push_back(make_problem("data", grid_params, [data_obj](const FieldParams& p) {
        return data_obj->evaluate(p, {}, {});
    }));

    RegWeights vsp_w;
    vsp_w.lambda_vsp = 1.0;
    vsp_w.lambda_j = 0.0;
    vsp_w.p = rng.below(2) == 0 ? 0.5 : 1.0;
    const Grid ig = index_grid(shape);
    out.push_back(make_problem("vsp", grid_params, [vsp_w, ig](const FieldParams& p) {
        RngStream unused(0, "hutch");
        auto r = combined_regularizer(p, ig, {}, vsp_w, unused);
        return Evaluation{r.value, std::move(r.grads)};
    }));

    TrainConfig tied_cfg;
    tied_cfg.reg.lambda_vsp = 0.0;
    tied_cfg.reg.lambda_j = 1.0;
    tied_cfg.reg.kappa = rng.uniform(0.2, 1.0);
    RngStream noise_rng(seed, "hutch");
    auto noise = std::make_shared<std::vector<GridNoise>>(
        1, draw_grid_noise(ig, tied_cfg.reg.kappa, noise_rng));
    auto tied_obj = std::make_shared<GridObjective>(target, observed, tied_cfg);
    out.push_back(make_problem("hutchinson-grid", grid_params, [tied_obj, noise](const FieldParams& p) {
        return tied_obj->evaluate(p, {}, *noise);
    }));

    const auto pts = random_points(rng, grid_params, 4);
    const double kappa = rng.uniform(0.1, 0.5);
    auto pnoise = std::make_shared<HutchinsonNoise>(draw_hutchinson_noise(4, 2, D, kappa, noise_rng));
    out.push_back(make_problem("hutchinson", grid_params, [pts, kappa, pnoise](const FieldParams& p) {
        auto s = hutchinson_smoothness(p, pts, kappa, *pnoise);
        return Evaluation{s.value, std::move(s.grads)};
    }));

    // Signed-distance objective, every term on.
    const FieldSpec sdf_spec = random_spec(rng, 3);
    const FieldParams sdf_params =
        init_params(sdf_spec, std::vector<Interval>(3, Interval{0.0, 1.0}), seed + 1);
    PointCloud surface(3);
    for (auto& q : surface)
        for (auto& c : q) c = rng.uniform(0.1, 0.9);
    TrainConfig sdf_cfg = sdf_defaults();
    sdf_cfg.reg.lambda_vsp = 0.01;
    sdf_cfg.reg.lambda_j = 0.1;
    sdf_cfg.reg.kappa = 0.05;
    sdf_cfg.vsp_grid = 5;
    sdf_cfg.lambda_eikonal = 0.5;
    sdf_cfg.lambda_offsurface = 0.5;
    auto sdf_obj = std::make_shared<SdfObjective>(surface, sdf_cfg);
    std::vector<double> free(3 * 4);
    for (auto& v : free) v = rng.uniform();
    auto snoise = std::make_shared<HutchinsonNoise>(
        draw_hutchinson_noise(3 + 4, 1, 3, sdf_cfg.reg.kappa, noise_rng));
    out.push_back(make_problem("sdf", sdf_params, [sdf_obj, free, snoise](const FieldParams& p) {
        return sdf_obj->evaluate(p, free, snoise.get());
    }));
    return out;
}

CheckReport check_gradients(std::size_t n_configs, std::uint64_t seed,
                            const std::function<void(std::vector<double>&)>& tamper) {
    if (n_configs == 0) throw StructuralError("need at least one configuration");
    CheckReport r{"gradients", 0, 0, 0.0, seed};
    for (std::size_t c = 0; c < n_configs; ++c) {
        RngStream rng(seed, "gradients", c);
        for (auto& prob : sample_gradient_problems(rng)) {
            if (tamper) {
                auto inner = prob.gradient;
                prob.gradient = [inner, &tamper](std::span<const double> th) {
                    auto g = inner(th);
                    tamper(g);
                    return g;
                };
            }
            const double err = gradient_rel_error(prob);
            ++r.instances;
            r.worst = std::max(r.worst, err);
            if (!(err < 1e-5)) ++r.failures;
        }
    }
    return r;
}

} // namespace cppruner

namespace cppruner {

FieldParams random_smooth_field(std::uint64_t seed, std::size_t order) {
    FieldSpec s;
    s.order = order;
    s.rank = 3;
    s.fourier_terms = 2;
    s.base_frequency = 0.5;
    s.hidden = {8};
    s.hidden_activation = Activation::tanh;
    return init_params(s, std::vector<Interval>(order, Interval{0.0, 1.0}), seed);
}

CheckReport hutchinson_suite(std::size_t n_fields, std::size_t n_samples, double kappa,
                             std::uint64_t seed) {
    if (n_fields == 0) throw StructuralError("need at least one field");
    CheckReport r{"hutchinson", n_fields, 0, 0.0, seed};
    for (std::size_t i = 0; i < n_fields; ++i) {
        RngStream rng(seed, "verify", i);
        const FieldParams params = random_smooth_field(rng.next_u64());
        std::vector<double> x(params.order());
        for (auto& v : x) v = rng.uniform(0.2, 0.8);
        const auto c = check_hutchinson(as_scalar_field(params), x, kappa, n_samples, rng.next_u64());
        r.worst = std::max(r.worst, c.deviation);
        if (!c.report.passed() || !(c.deviation < 0.02)) ++r.failures;
    }
    return r;
}

CheckReport normchain_suite(std::size_t n_points, std::uint64_t seed) {
    if (n_points == 0) throw StructuralError("need at least one point");
    RngStream rng(seed, "verify");
    const FieldParams params = random_smooth_field(rng.next_u64());
    std::vector<double> pts(n_points * params.order());
    for (auto& v : pts) v = rng.uniform();
    CheckReport r = check_norm_chain(as_scalar_field(params), pts, params.order());
    r.seed = seed;
    return r;
}

} // namespace cppruner
