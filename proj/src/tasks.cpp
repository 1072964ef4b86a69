#include "cppruner/tasks.hpp"

#include "cppruner/error.hpp"
#include "cppruner/kernels.hpp"
#include "cppruner/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cppruner {

PointNormalization PointNormalization::fit(const PointCloud& pts, double margin) {
    if (pts.empty()) throw StructuralError("cannot normalize an empty point set");
    if (!(margin >= 0.0 && margin < 0.5)) throw StructuralError("margin must lie in [0, 0.5)");
    Point3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts)
        for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], p[d]);
            hi[d] = std::max(hi[d], p[d]);
        }
    PointNormalization n;
    double extent = 0.0;
    for (int d = 0; d < 3; ++d) {
        n.center[d] = 0.5 * (lo[d] + hi[d]);
        extent = std::max(extent, hi[d] - lo[d]);
    }
    n.scale = extent > 0.0 ? (1.0 - 2.0 * margin) / extent : 1.0;
    return n;
}

TrainConfig inpaint_defaults() {
    TrainConfig c;
    c.field.hidden = {256, 256};
    c.iterations = 5000;
    return c;
}

TrainConfig denoise_defaults() {
    TrainConfig c = inpaint_defaults();
    c.iterations = 8000;
    return c;
}

TrainConfig sdf_defaults() {
    TrainConfig c;
    c.field.hidden = {128, 128};
    c.iterations = 10000;
    // Perturbations live in the unit cube rather than in grid steps.
    c.reg.kappa = 0.01;
    return c;
}

Grid reference_grid(const FieldParams& params, std::size_t points_per_axis) {
    if (points_per_axis < 2) throw StructuralError("reference grid needs at least 2 points");
    Grid g(params.order());
    for (std::size_t d = 0; d < params.order(); ++d) {
        const auto iv = params.domain()[d];
        g[d].resize(points_per_axis);
        for (std::size_t i = 0; i < points_per_axis; ++i)
            g[d][i] = iv.lo + (iv.hi - iv.lo) * static_cast<double>(i) /
                                  static_cast<double>(points_per_axis - 1);
    }
    return g;
}

static std::vector<Interval> index_domains(const Shape& shape) {
    std::vector<Interval> dom;
    for (auto n : shape) dom.push_back(index_domain(n));
    return dom;
}

static void add_scaled(FactorMatrices& dst, const FactorMatrices& src, double scale) {
    for (std::size_t d = 0; d < dst.factors.size(); ++d)
        for (std::size_t i = 0; i < dst.factors[d].data.size(); ++i)
            dst.factors[d].data[i] += scale * src.factors[d].data[i];
}

// ---------------------------------------------------------------------------
// Grid objective

GridObjective::GridObjective(DenseTensor target, std::vector<std::size_t> observed,
                             const TrainConfig& config)
    : target_(std::move(target)), observed_(std::move(observed)), config_(config),
      batch_rng_(config.seed, "batch"), hutch_rng_(config.seed, "hutch") {
    config_.validate();
    if (observed_.empty()) throw StructuralError("no observed entries");
    for (auto i : observed_)
        if (i >= target_.size()) throw StructuralError("observed index out of range");
    grid_ = index_grid(target_.shape());
    batched_ = target_.size() > config_.full_grid_limit;
}

void GridObjective::set_target(DenseTensor target) {
    require_same_shape(target, target_);
    target_ = std::move(target);
}

Evaluation GridObjective::operator()(const FieldParams& params, std::size_t) {
    std::vector<std::size_t> entries;
    if (batched_) {
        entries.resize(config_.batch_size);
        for (auto& e : entries) e = observed_[batch_rng_.below(observed_.size())];
    }
    std::vector<GridNoise> noise;
    if (config_.reg.lambda_j > 0.0)
        for (std::size_t s = 0; s < config_.reg.hutchinson_samples; ++s)
            noise.push_back(draw_grid_noise(grid_, config_.reg.kappa, hutch_rng_));
    return evaluate(params, entries, noise);
}

Evaluation GridObjective::evaluate(const FieldParams& params, std::span<const std::size_t> entries,
                                   std::span<const GridNoise> noise) {
    const std::size_t D = params.order(), R = params.rank();
    if (D != target_.order()) throw StructuralError("field order does not match the target");
    const Shape& shape = target_.shape();
    const std::span<const std::size_t> ent = entries.empty() ? std::span<const std::size_t>(observed_)
                                                             : entries;
    const auto& w = config_.reg;

    std::vector<DimTape> tapes(D);
    FactorMatrices fb;
    fb.rank = R;
    for (std::size_t d = 0; d < D; ++d) {
        forward_dim_batch(params, d, grid_[d], false, tapes[d]);
        fb.factors.push_back(tape_factor(tapes[d], R));
    }

    const std::size_t n = ent.size();
    last_entries_.assign(ent.begin(), ent.end());
    last_prediction_.assign(n, 0.0);
    kernels::parallel::cp_entries(fb, ent, last_prediction_);
    std::vector<double> up(n);
    double data = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = last_prediction_[k] - target_[ent[k]];
        data += r * r;
        up[k] = 2.0 * r / static_cast<double>(n);
    }
    last_ = Terms{};
    last_.data = data / static_cast<double>(n);

    FactorMatrices gb(R, shape);
    kernels::parallel::cp_factor_gradients(fb, ent, up, gb);

    if (w.lambda_vsp > 0.0) {
        const auto v = vsp_norm(fb, w.p, w.epsilon_floor);
        last_.vsp = v.value;
        add_scaled(gb, v.grad, w.lambda_vsp);
    }

    Evaluation e;
    e.grads.assign(params.size(), 0.0);
    if (w.lambda_j > 0.0 && !noise.empty()) {
        const std::span<const std::size_t> smooth_entries =
            batched_ ? ent : std::span<const std::size_t>();
        const double share = w.lambda_j / static_cast<double>(noise.size());
        for (const auto& nz : noise) {
            if (nz.eps.size() != D) throw StructuralError("grid noise does not match the field");
            std::vector<DimTape> pt(D);
            FactorMatrices fp;
            fp.rank = R;
            for (std::size_t d = 0; d < D; ++d) {
                if (nz.eps[d].size() != grid_[d].size())
                    throw StructuralError("grid noise size mismatch");
                std::vector<double> shifted(grid_[d]);
                for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += nz.eps[d][i];
                forward_dim_batch(params, d, shifted, false, pt[d]);
                fp.factors.push_back(tape_factor(pt[d], R));
            }
            FactorMatrices g0(R, shape), g1(R, shape);
            last_.smooth += tied_smoothness_term(fb, fp, w.kappa, smooth_entries, g0, g1) /
                            static_cast<double>(noise.size());
            add_scaled(gb, g0, share);
            for (auto& m : g1.factors)
                for (auto& g : m.data) g *= share;
            backprop_factor_grads(params, pt, g1, e.grads);
        }
    }
    backprop_factor_grads(params, tapes, gb, e.grads);
    e.loss = last_.data + w.lambda_vsp * last_.vsp + w.lambda_j * last_.smooth;
    return e;
}

// ---------------------------------------------------------------------------
// Inpainting and denoising

static FieldParams init_grid_field(const TrainConfig& config, const Shape& shape) {
    FieldSpec spec = config.field;
    spec.order = shape.size();
    return init_params(spec, index_domains(shape), config.seed);
}

InpaintResult inpaint(const DenseTensor& observed, const ObservationMask& mask,
                      const TrainConfig& config, const DenseTensor* truth) {
    config.validate();
    if (mask.shape != observed.shape()) throw StructuralError("mask shape does not match the tensor");
    if (mask.count == 0) throw StructuralError("observation mask is empty");
    if (truth) require_same_shape(*truth, observed);

    const Grid grid = index_grid(observed.shape());
    GridObjective objective(observed, mask.indices(), config);
    TrainCallbacks cb;
    if (truth)
        cb.metric = [&](const FieldParams& p) -> std::optional<double> {
            return psnr(*truth, materialize_grid(p, grid).tensor);
        };
    auto tr = train(init_grid_field(config, observed.shape()),
                    [&](const FieldParams& p, std::size_t it) { return objective(p, it); },
                    config.iterations, config.adam, config.trace_every, cb);

    InpaintResult res;
    res.tensor = materialize_grid(tr.params, grid).tensor;
    double ss = 0.0;
    for (auto i : mask.indices()) {
        const double r = res.tensor[i] - observed[i];
        ss += r * r;
    }
    res.observed_rmse = std::sqrt(ss / static_cast<double>(mask.count));
    res.params = std::move(tr.params);
    res.trace = std::move(tr.trace);
    return res;
}

DenseTensor sparse_update(const DenseTensor& observed, const DenseTensor& clean, double lambda_s) {
    if (lambda_s < 0.0) throw StructuralError("lambda_s must be >= 0");
    require_same_shape(observed, clean);
    DenseTensor s(observed.shape());
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = soft_threshold(observed[i] - clean[i], 0.5 * lambda_s);
    return s;
}

DenoiseResult denoise(const DenseTensor& observed, const TrainConfig& config,
                      const DenseTensor* truth, const FieldParams* initial) {
    config.validate();
    if (config.lambda_s < 0.0) throw StructuralError("lambda_s must be >= 0");
    if (truth) require_same_shape(*truth, observed);

    const Grid grid = index_grid(observed.shape());
    std::vector<std::size_t> all(observed.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    GridObjective objective(observed, all, config);
    DenseTensor sparse(observed.shape());
    const double tau = 0.5 * config.lambda_s;

    DenoiseResult res;
    TrainCallbacks cb;
    cb.metric = [&](const FieldParams& p) -> std::optional<double> {
        // Residual of the decomposition at the entries just evaluated.
        const auto& ent = objective.last_entries();
        const auto& pred = objective.last_prediction();
        double ss = 0.0;
        for (std::size_t k = 0; k < ent.size(); ++k) {
            const double r = observed[ent[k]] - pred[k] - sparse[ent[k]];
            ss += r * r;
        }
        res.residual_norms.push_back(std::sqrt(ss));
        if (!truth) return std::nullopt;
        return psnr(*truth, materialize_grid(p, grid).tensor);
    };
    cb.after_step = [&](std::size_t, const FieldParams&) {
        const auto& ent = objective.last_entries();
        const auto& pred = objective.last_prediction();
        DenseTensor& target = objective.target();
        for (std::size_t k = 0; k < ent.size(); ++k) {
            const std::size_t i = ent[k];
            sparse[i] = soft_threshold(observed[i] - pred[k], tau);
            target[i] = observed[i] - sparse[i];
        }
    };

    FieldParams start;
    if (initial) {
        if (initial->order() != observed.order())
            throw StructuralError("initial field order does not match the tensor");
        start = *initial;
    } else {
        start = init_grid_field(config, observed.shape());
    }
    auto tr = train(std::move(start),
                    [&](const FieldParams& p, std::size_t it) { return objective(p, it); },
                    config.iterations, config.adam, config.trace_every, cb);

    res.clean = materialize_grid(tr.params, grid).tensor;
    res.sparse = std::move(sparse);
    res.params = std::move(tr.params);
    res.trace = std::move(tr.trace);
    return res;
}

// ---------------------------------------------------------------------------
// Signed distance fields

double SdfModel::operator()(const Point3& normalized) const {
    return field_forward(params, normalized).value;
}

static double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

SdfObjective::SdfObjective(PointCloud normalized_points, const TrainConfig& config)
    : config_(config), free_rng_(config.seed, "free"), hutch_rng_(config.seed, "hutch") {
    config_.validate();
    if (normalized_points.empty()) throw StructuralError("empty point set");
    n_points_ = normalized_points.size();
    points_.reserve(3 * n_points_);
    for (const auto& p : normalized_points) points_.insert(points_.end(), p.begin(), p.end());
    n_free_ = static_cast<std::size_t>(std::llround(config_.free_factor * static_cast<double>(n_points_)));
}

Evaluation SdfObjective::operator()(const FieldParams& params, std::size_t) {
    std::vector<double> free(3 * n_free_);
    for (auto& v : free) v = free_rng_.uniform();
    const auto& w = config_.reg;
    if (w.lambda_j > 0.0) {
        const auto noise =
            draw_hutchinson_noise(n_points_ + n_free_, w.hutchinson_samples, 3, w.kappa, hutch_rng_);
        return evaluate(params, free, &noise);
    }
    return evaluate(params, free, nullptr);
}

Evaluation SdfObjective::evaluate(const FieldParams& params, std::span<const double> free_points,
                                  const HutchinsonNoise* noise) {
    if (params.order() != 3) throw StructuralError("signed distance fields are 3-D");
    if (free_points.size() % 3 != 0) throw StructuralError("free point buffer is not n x 3");
    const std::size_t n = n_points_, m = free_points.size() / 3, total = n + m;
    const auto& w = config_.reg;

    std::vector<double> all(points_);
    all.insert(all.end(), free_points.begin(), free_points.end());
    const bool fd = config_.finite_difference_eikonal;
    const auto batch = evaluate_points(params, all, !fd);
    const std::vector<double> grad_s = fd ? sdf_gradient_fd(params, all) : batch.gradients;

    std::vector<double> up_v(total, 0.0), up_g(fd ? 0 : 3 * total, 0.0), coef(3 * total, 0.0);
    last_ = Terms{};
    for (std::size_t k = 0; k < n; ++k) {
        last_.surface += std::abs(batch.values[k]) / static_cast<double>(n);
        up_v[k] += sign_of(batch.values[k]) / static_cast<double>(n);
    }
    for (std::size_t k = 0; k < total; ++k) {
        double g2 = 0.0;
        for (int d = 0; d < 3; ++d) g2 += grad_s[3 * k + d] * grad_s[3 * k + d];
        const double e = g2 - 1.0;
        last_.eikonal += std::abs(e) / static_cast<double>(total);
        const double c = config_.lambda_eikonal * sign_of(e) * 2.0 / static_cast<double>(total);
        for (int d = 0; d < 3; ++d) coef[3 * k + d] = c * grad_s[3 * k + d];
    }
    for (std::size_t k = n; k < total; ++k) {
        const double v = std::exp(-std::abs(batch.values[k]));
        last_.offsurface += v / static_cast<double>(m);
        up_v[k] += config_.lambda_offsurface * (-sign_of(batch.values[k]) * v) / static_cast<double>(m);
    }

    Evaluation e;
    e.grads.assign(params.size(), 0.0);
    if (!fd) {
        up_g = coef;
        backpropagate_points(params, batch, up_v, up_g, e.grads, {});
    } else {
        backpropagate_points(params, batch, up_v, {}, e.grads, {});
        // Differentiate the central differences themselves.
        const double h = 1e-4;
        std::vector<double> shifted;
        shifted.reserve(18 * total);
        std::vector<double> up_shift;
        up_shift.reserve(6 * total);
        for (std::size_t k = 0; k < total; ++k)
            for (int d = 0; d < 3; ++d)
                for (int s = 0; s < 2; ++s) {
                    for (int j = 0; j < 3; ++j)
                        shifted.push_back(all[3 * k + j] + (j == d ? (s == 0 ? h : -h) : 0.0));
                    up_shift.push_back((s == 0 ? 1.0 : -1.0) * coef[3 * k + d] / (2.0 * h));
                }
        const auto sb = evaluate_points(params, shifted, false);
        backpropagate_points(params, sb, up_shift, {}, e.grads, {});
    }

    if (w.lambda_vsp > 0.0) {
        const Grid g = reference_grid(params, config_.vsp_grid);
        std::vector<DimTape> tapes(3);
        FactorMatrices f;
        f.rank = params.rank();
        for (std::size_t d = 0; d < 3; ++d) {
            forward_dim_batch(params, d, g[d], false, tapes[d]);
            f.factors.push_back(tape_factor(tapes[d], params.rank()));
        }
        auto v = vsp_norm(f, w.p, w.epsilon_floor);
        last_.vsp = v.value;
        for (auto& mtx : v.grad.factors)
            for (auto& x : mtx.data) x *= w.lambda_vsp;
        backprop_factor_grads(params, tapes, v.grad, e.grads);
    }
    if (w.lambda_j > 0.0 && noise) {
        const auto s = hutchinson_smoothness(params, all, w.kappa, *noise);
        last_.smooth = s.value;
        for (std::size_t i = 0; i < e.grads.size(); ++i) e.grads[i] += w.lambda_j * s.grads[i];
    }
    e.loss = last_.surface + config_.lambda_eikonal * last_.eikonal +
             config_.lambda_offsurface * last_.offsurface + w.lambda_vsp * last_.vsp +
             w.lambda_j * last_.smooth;
    return e;
}

SdfResult sdf_train(const PointCloud& points, const TrainConfig& config) {
    if (points.empty()) throw StructuralError("empty point set");
    config.validate();
    SdfResult res;
    res.model.normalization = PointNormalization::fit(points);
    FieldSpec spec = config.field;
    spec.order = 3;
    auto params = init_params(spec, std::vector<Interval>(3, Interval{0.0, 1.0}), config.seed);
    SdfObjective objective(res.model.normalization.apply(points), config);
    auto tr = train(std::move(params),
                    [&](const FieldParams& p, std::size_t it) { return objective(p, it); },
                    config.iterations, config.adam, config.trace_every);
    res.model.params = std::move(tr.params);
    res.trace = std::move(tr.trace);
    return res;
}

std::vector<double> sdf_gradient_fd(const FieldParams& params, std::span<const double> points,
                                    double h) {
    const std::size_t D = params.order();
    if (points.size() % D != 0) throw StructuralError("point buffer is not a multiple of D");
    if (!(h > 0.0)) throw StructuralError("step must be positive");
    const std::size_t n = points.size() / D;
    std::vector<double> shifted;
    shifted.reserve(2 * D * points.size());
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t d = 0; d < D; ++d)
            for (int s = 0; s < 2; ++s)
                for (std::size_t j = 0; j < D; ++j)
                    shifted.push_back(points[k * D + j] + (j == d ? (s == 0 ? h : -h) : 0.0));
    const auto b = evaluate_points(params, shifted, false);
    std::vector<double> g(n * D);
    for (std::size_t k = 0; k < n * D; ++k) g[k] = (b.values[2 * k] - b.values[2 * k + 1]) / (2.0 * h);
    return g;
}

double eikonal_residual(const FieldParams& params, std::span<const double> points) {
    const auto b = evaluate_points(params, points, true);
    if (b.n == 0) return 0.0;
    const std::size_t D = params.order();
    double total = 0.0;
    for (std::size_t k = 0; k < b.n; ++k) {
        double g2 = 0.0;
        for (std::size_t d = 0; d < D; ++d) g2 += b.gradients[k * D + d] * b.gradients[k * D + d];
        total += std::abs(g2 - 1.0);
    }
    return total / static_cast<double>(b.n);
}

static std::vector<double> cube_axis(std::size_t g) {
    std::vector<double> a(g);
    for (std::size_t i = 0; i < g; ++i) a[i] = static_cast<double>(i) / static_cast<double>(g - 1);
    return a;
}

template <class Values>
static UpsampleResult upsample_impl(Values&& values_at, const PointNormalization& norm,
                                    std::size_t grid, double tau, std::size_t min_count) {
    if (grid < 2) throw StructuralError("upsampling grid needs G >= 2");
    UpsampleResult res;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto axis = cube_axis(grid);
        const std::vector<double> s = values_at(axis);
        res.points.clear();
        for (std::size_t i = 0; i < grid; ++i)
            for (std::size_t j = 0; j < grid; ++j)
                for (std::size_t k = 0; k < grid; ++k)
                    if (std::abs(s[(i * grid + j) * grid + k]) < tau)
                        res.points.push_back(norm.invert({axis[i], axis[j], axis[k]}));
        res.grid = grid;
        if (res.points.size() >= min_count || attempt == 1) break;
        grid *= 2;
    }
    return res;
}

UpsampleResult upsample(const SdfModel& model, std::size_t grid, double tau, std::size_t min_count) {
    if (model.params.order() != 3) throw StructuralError("signed distance fields are 3-D");
    return upsample_impl(
        [&](const std::vector<double>& axis) {
            return materialize_grid(model.params, Grid(3, axis)).tensor.values();
        },
        model.normalization, grid, tau, min_count);
}

UpsampleResult upsample_function(const std::function<double(const Point3&)>& sdf,
                                 const PointNormalization& normalization, std::size_t grid,
                                 double tau, std::size_t min_count) {
    return upsample_impl(
        [&](const std::vector<double>& axis) {
            const std::size_t g = axis.size();
            std::vector<double> s(g * g * g);
#pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < g; ++i)
                for (std::size_t j = 0; j < g; ++j)
                    for (std::size_t k = 0; k < g; ++k)
                        s[(i * g + j) * g + k] = sdf({axis[i], axis[j], axis[k]});
            return s;
        },
        normalization, grid, tau, min_count);
}

// ---------------------------------------------------------------------------

std::vector<MassEntry> cp_mass_profile(const FactorMatrices& factors) {
    factors.validate();
    std::vector<MassEntry> out(factors.rank);
    double total = 0.0;
    for (std::size_t r = 0; r < factors.rank; ++r) {
        double mass = 1.0;
        for (const auto& U : factors.factors) {
            double s = 0.0;
            for (double v : U.row(r)) s += v * v;
            mass *= std::sqrt(s);
        }
        out[r] = {r, mass};
        total += mass;
    }
    for (auto& e : out) e.fraction = total > 0.0 ? e.fraction / total : 0.0;
    std::stable_sort(out.begin(), out.end(),
                     [](const MassEntry& a, const MassEntry& b) { return a.fraction > b.fraction; });
    return out;
}

} // namespace cppruner
