#include "cppruner/regularizers.hpp"

#include "cppruner/error.hpp"
#include "cppruner/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cppruner {

void RegWeights::validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw StructuralError("p must lie in (0, 1]");
    if (lambda_vsp < 0.0 || lambda_j < 0.0) throw StructuralError("regularizer weights must be >= 0");
    if (!(kappa > 0.0)) throw StructuralError("kappa must be positive");
    if (hutchinson_samples == 0) throw StructuralError("need at least one Hutchinson sample");
    if (!(epsilon_floor > 0.0)) throw StructuralError("epsilon floor must be positive");
}

static double row_norm(const Matrix& m, std::size_t r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v * v;
    return std::sqrt(s);
}

VspResult vsp_norm(const FactorMatrices& factors, double p, double epsilon_floor) {
    if (!(p > 0.0 && p <= 1.0)) throw StructuralError("vsp_norm needs p in (0, 1]");
    factors.validate();
    const std::size_t D = factors.order();
    const double q = p * static_cast<double>(D);
    const double invD = 1.0 / static_cast<double>(D);
    VspResult res;
    res.grad = FactorMatrices(factors.rank, factors.shape());
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
        const Matrix& U = factors.factors[d];
        Matrix& G = res.grad.factors[d];
        for (std::size_t r = 0; r < factors.rank; ++r) {
            const double norm = row_norm(U, r);
            total += norm > 0.0 ? std::pow(norm, q) : 0.0;
            const double scale =
                invD * q * std::pow(norm * norm + epsilon_floor, 0.5 * (q - 2.0));
            auto src = U.row(r);
            auto dst = G.row(r);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = scale * src[i];
        }
    }
    res.value = invD * total;
    return res;
}

double vsp_middle_term(const FactorMatrices& factors, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw StructuralError("vsp_middle_term needs p in (0, 1]");
    factors.validate();
    const std::size_t D = factors.order();
    const double q = p * static_cast<double>(D);
    double total = 0.0;
    for (std::size_t r = 0; r < factors.rank; ++r) {
        double prod = 1.0;
        for (std::size_t d = 0; d < D; ++d) {
            const double norm = row_norm(factors.factors[d], r);
            prod *= norm > 0.0 ? std::pow(norm, q) : 0.0;
        }
        total += std::pow(prod, 1.0 / static_cast<double>(D));
    }
    return total;
}

HutchinsonNoise draw_hutchinson_noise(std::size_t points, std::size_t samples, std::size_t dim,
                                      double kappa, RngStream& rng) {
    HutchinsonNoise n{points, samples, dim, std::vector<double>(points * samples * dim)};
    for (auto& e : n.eps) e = kappa * rng.normal();
    return n;
}

HutchinsonNoise axis_noise(std::size_t points, std::size_t dim, double kappa, std::size_t axis) {
    if (axis >= dim) throw StructuralError("axis out of range");
    HutchinsonNoise n{points, 1, dim, std::vector<double>(points * dim, 0.0)};
    for (std::size_t k = 0; k < points; ++k) n.eps[k * dim + axis] = kappa;
    return n;
}

SmoothnessResult hutchinson_smoothness(const FieldParams& params, std::span<const double> points,
                                       double kappa, const HutchinsonNoise& noise) {
    if (!(kappa > 0.0)) throw StructuralError("kappa must be positive");
    const std::size_t D = params.order();
    if (points.size() % D != 0) throw StructuralError("point buffer is not a multiple of D");
    const std::size_t n = points.size() / D;
    if (noise.points != n || noise.dim != D || noise.samples == 0 ||
        noise.eps.size() != n * noise.samples * D)
        throw StructuralError("Hutchinson noise does not match the batch");
    const std::size_t S = noise.samples;

    // Base points followed by every perturbed copy, one forward pass.
    std::vector<double> all(points.begin(), points.end());
    all.reserve(points.size() * (1 + S));
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t d = 0; d < D; ++d)
                all.push_back(points[k * D + d] + noise.eps[(k * S + s) * D + d]);
    const auto batch = evaluate_points(params, all, false);

    const double norm = 1.0 / (static_cast<double>(n * S) * kappa * kappa);
    std::vector<double> up(batch.n, 0.0);
    double value = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t j = n + k * S + s;
            const double diff = batch.values[j] - batch.values[k];
            value += diff * diff;
            up[j] += 2.0 * diff * norm;
            up[k] -= 2.0 * diff * norm;
        }
    SmoothnessResult res;
    res.value = value * norm;
    res.grads.assign(params.size(), 0.0);
    backpropagate_points(params, batch, up, {}, res.grads, {});
    return res;
}

SmoothnessResult hutchinson_smoothness(const FieldParams& params, std::span<const double> points,
                                       double kappa, std::size_t n_samples, RngStream& rng) {
    if (n_samples == 0) throw StructuralError("need at least one Hutchinson sample");
    const std::size_t n = points.size() / params.order();
    const auto noise = draw_hutchinson_noise(n, n_samples, params.order(), kappa, rng);
    return hutchinson_smoothness(params, points, kappa, noise);
}

GridNoise draw_grid_noise(const Grid& grid, double kappa, RngStream& rng) {
    GridNoise g;
    g.eps.resize(grid.size());
    for (std::size_t d = 0; d < grid.size(); ++d) {
        g.eps[d].resize(grid[d].size());
        for (auto& e : g.eps[d]) e = kappa * rng.normal();
    }
    return g;
}

double tied_smoothness_term(const FactorMatrices& base, const FactorMatrices& perturbed,
                            double kappa, std::span<const std::size_t> entries,
                            FactorMatrices& base_grad, FactorMatrices& perturbed_grad) {
    const std::size_t total = shape_size(base.shape());
    const std::size_t n = entries.empty() ? total : entries.size();
    std::vector<double> t0(n), t1(n);
    if (entries.empty()) {
        kernels::parallel::cp_reconstruct(base, t0);
        kernels::parallel::cp_reconstruct(perturbed, t1);
    } else {
        kernels::parallel::cp_entries(base, entries, t0);
        kernels::parallel::cp_entries(perturbed, entries, t1);
    }
    const double norm = 1.0 / (static_cast<double>(n) * kappa * kappa);
    std::vector<double> up1(n), up0(n);
    double value = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double diff = t1[k] - t0[k];
        value += diff * diff;
        up1[k] = 2.0 * diff * norm;
        up0[k] = -up1[k];
    }
    kernels::parallel::cp_factor_gradients(base, entries, up0, base_grad);
    kernels::parallel::cp_factor_gradients(perturbed, entries, up1, perturbed_grad);
    return value * norm;
}

void backprop_factor_grads(const FieldParams& params, const std::vector<DimTape>& tapes,
                           const FactorMatrices& factor_grads, std::span<double> param_grads) {
    const std::size_t R = params.rank();
    for (std::size_t d = 0; d < params.order(); ++d) {
        const Matrix& G = factor_grads.factors[d];
        const std::size_t n = tapes[d].n;
        std::vector<double> up(n * R);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t r = 0; r < R; ++r) up[k * R + r] = G(r, k);
        backward_dim_batch(params, d, tapes[d], up, {}, param_grads, {});
    }
}

SmoothnessResult grid_smoothness(const FieldParams& params, const Grid& grid, double kappa,
                                 const GridNoise& noise) {
    if (!(kappa > 0.0)) throw StructuralError("kappa must be positive");
    if (grid.size() != params.order() || noise.eps.size() != grid.size())
        throw StructuralError("grid noise does not match the grid");
    const std::size_t D = params.order(), R = params.rank();
    std::vector<DimTape> base(D), pert(D);
    FactorMatrices fb, fp;
    fb.rank = fp.rank = R;
    for (std::size_t d = 0; d < D; ++d) {
        if (noise.eps[d].size() != grid[d].size()) throw StructuralError("grid noise size mismatch");
        std::vector<double> shifted(grid[d]);
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += noise.eps[d][i];
        forward_dim_batch(params, d, grid[d], false, base[d]);
        forward_dim_batch(params, d, shifted, false, pert[d]);
        fb.factors.push_back(tape_factor(base[d], R));
        fp.factors.push_back(tape_factor(pert[d], R));
    }
    FactorMatrices gb(R, fb.shape()), gp(R, fp.shape());
    SmoothnessResult res;
    res.value = tied_smoothness_term(fb, fp, kappa, {}, gb, gp);
    res.grads.assign(params.size(), 0.0);
    backprop_factor_grads(params, base, gb, res.grads);
    backprop_factor_grads(params, pert, gp, res.grads);
    return res;
}

double soft_threshold(double x, double tau) {
    const double mag = std::abs(x) - tau;
    if (mag <= 0.0) return 0.0;
    return x > 0.0 ? mag : -mag;
}

DenseTensor soft_threshold(const DenseTensor& t, double tau) {
    if (tau < 0.0) throw StructuralError("soft threshold needs tau >= 0");
    DenseTensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = soft_threshold(t[i], tau);
    return out;
}

RegularizerResult combined_regularizer(const FieldParams& params, const Grid& vsp_grid,
                                       std::span<const double> batch, const RegWeights& weights,
                                       RngStream& rng, const HutchinsonNoise* frozen) {
    weights.validate();
    RegularizerResult res;
    res.grads.assign(params.size(), 0.0);
    if (weights.lambda_vsp > 0.0) {
        std::vector<DimTape> tapes(params.order());
        FactorMatrices f;
        f.rank = params.rank();
        for (std::size_t d = 0; d < params.order(); ++d) {
            forward_dim_batch(params, d, vsp_grid[d], false, tapes[d]);
            f.factors.push_back(tape_factor(tapes[d], params.rank()));
        }
        auto v = vsp_norm(f, weights.p, weights.epsilon_floor);
        for (auto& m : v.grad.factors)
            for (auto& g : m.data) g *= weights.lambda_vsp;
        res.vsp = v.value;
        backprop_factor_grads(params, tapes, v.grad, res.grads);
    }
    if (weights.lambda_j > 0.0 && !batch.empty()) {
        const auto s = frozen ? hutchinson_smoothness(params, batch, weights.kappa, *frozen)
                              : hutchinson_smoothness(params, batch, weights.kappa,
                                                      weights.hutchinson_samples, rng);
        res.smooth = s.value;
        for (std::size_t i = 0; i < res.grads.size(); ++i) res.grads[i] += weights.lambda_j * s.grads[i];
    }
    res.value = weights.lambda_vsp * res.vsp + weights.lambda_j * res.smooth;
    return res;
}

} // namespace cppruner
