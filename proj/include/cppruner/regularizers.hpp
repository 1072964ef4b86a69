#pragma once

#include "cppruner/field.hpp"
#include "cppruner/rng.hpp"
#include "cppruner/tensor.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace cppruner {

/// Weights of  lambda_vsp * ||T||_VSp^p + (lambda_j / kappa^2) E ||f(x+e) - f(x)||^2.
struct RegWeights {
    double lambda_vsp = 1e-4;
    double p = 0.1;
    double lambda_j = 0.01;
    double kappa = 1.0;
    std::size_t hutchinson_samples = 1;
    double epsilon_floor = 1e-12;

    /// q = p * D.
    double q(std::size_t order) const { return p * static_cast<double>(order); }
    void validate() const;
};

struct VspResult {
    double value = 0.0;
    FactorMatrices grad;
};

/// (1/D) sum_r sum_d ||u_r^(d)||^q with q = pD. The gradient uses the smoothed
/// q (||u||^2 + floor)^((q-2)/2) u so zero rows stay finite.
VspResult vsp_norm(const FactorMatrices& factors, double p, double epsilon_floor = 1e-12);

/// sum_r (prod_d ||u_r^(d)||^q)^(1/D): the quantity sandwiched between the
/// Schatten-p value of any unfolding and vsp_norm.
double vsp_middle_term(const FactorMatrices& factors, double p);

/// Perturbations for the pointwise estimator, laid out
/// eps[(point * samples + sample) * dim + axis].
struct HutchinsonNoise {
    std::size_t points = 0;
    std::size_t samples = 0;
    std::size_t dim = 0;
    std::vector<double> eps;
};

HutchinsonNoise draw_hutchinson_noise(std::size_t points, std::size_t samples, std::size_t dim,
                                      double kappa, RngStream& rng);

/// kappa * e_axis for every point: the forward-difference degenerate case.
HutchinsonNoise axis_noise(std::size_t points, std::size_t dim, double kappa, std::size_t axis);

struct SmoothnessResult {
    double value = 0.0;
    std::vector<double> grads;  // congruent with FieldParams::weights()
};

/// Mean over points and samples of (f(x + e) - f(x))^2 / kappa^2, with exact
/// gradients through both evaluations.
SmoothnessResult hutchinson_smoothness(const FieldParams& params, std::span<const double> points,
                                       double kappa, const HutchinsonNoise& noise);
SmoothnessResult hutchinson_smoothness(const FieldParams& params, std::span<const double> points,
                                       double kappa, std::size_t n_samples, RngStream& rng);

struct HutchinsonEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Monte-Carlo estimate of ||J_f(x)||_F^2 for any scalar field f.
template <class F>
HutchinsonEstimate hutchinson_estimate(F&& f, std::span<const double> x, double kappa,
                                       std::size_t n, RngStream& rng) {
    const double base = f(x);
    std::vector<double> y(x.begin(), x.end());
    double mean = 0.0, m2 = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t d = 0; d < x.size(); ++d) y[d] = x[d] + kappa * rng.normal();
        const double diff = f(std::span<const double>(y)) - base;
        const double sample = diff * diff / (kappa * kappa);
        const double delta = sample - mean;
        mean += delta / static_cast<double>(s + 1);
        m2 += delta * (sample - mean);
    }
    HutchinsonEstimate est;
    est.mean = mean;
    est.std_error = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    return est;
}

/// Grid-tied perturbations: one offset per axis per grid coordinate, shared
/// by every entry on that coordinate. Each entry still sees e ~ N(0, kappa^2 I).
struct GridNoise {
    std::vector<std::vector<double>> eps;
};

GridNoise draw_grid_noise(const Grid& grid, double kappa, RngStream& rng);

/// Mean over `entries` (all when empty) of (T~ - T)^2 / kappa^2 where T~ is the
/// CP tensor of perturbed factors. Adds factor gradients for both sides.
double tied_smoothness_term(const FactorMatrices& base, const FactorMatrices& perturbed,
                            double kappa, std::span<const std::size_t> entries,
                            FactorMatrices& base_grad, FactorMatrices& perturbed_grad);

/// Grid-tied smoothness with its own forward passes.
SmoothnessResult grid_smoothness(const FieldParams& params, const Grid& grid, double kappa,
                                 const GridNoise& noise);

double soft_threshold(double x, double tau);

/// Element-wise sgn(x) max(|x| - tau, 0).
DenseTensor soft_threshold(const DenseTensor& t, double tau);

struct RegularizerResult {
    double value = 0.0;
    double vsp = 0.0;
    double smooth = 0.0;
    std::vector<double> grads;
};

/// lambda_vsp * vsp_norm(factors on `vsp_grid`) + lambda_j * pointwise
/// smoothness over `batch`. `frozen` replaces the random draws when given.
RegularizerResult combined_regularizer(const FieldParams& params, const Grid& vsp_grid,
                                       std::span<const double> batch, const RegWeights& weights,
                                       RngStream& rng, const HutchinsonNoise* frozen = nullptr);

/// Backpropagates factor gradients (R x n per axis) through the axis MLPs
/// that produced them.
void backprop_factor_grads(const FieldParams& params, const std::vector<DimTape>& tapes,
                           const FactorMatrices& factor_grads, std::span<double> param_grads);

} // namespace cppruner
