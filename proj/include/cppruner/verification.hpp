#pragma once

#include "cppruner/field.hpp"
#include "cppruner/regularizers.hpp"
#include "cppruner/rng.hpp"
#include "cppruner/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cppruner {

/// Outcome of a numerical check. `worst` is the smallest relative slack for
/// inequality checks (negative means violated) and the largest relative error
/// for comparison checks.
struct CheckReport {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    double worst = 0.0;
    std::uint64_t seed = 0;

    bool passed() const noexcept { return failures == 0 && instances > 0; }
    /// "<name>: instances=.. failures=.. worst=.. seed=.."
    std::string summary() const;
    static std::string csv_header();
    std::string csv_row() const;
};

using ScalarField = std::function<double(std::span<const double>)>;
using VectorField = std::function<std::vector<double>(std::span<const double>)>;

ScalarField as_scalar_field(const FieldParams& params);

/// schatten_p(unfolding) <= middle term <= vsp_norm for every proper index
/// set of random Gaussian factor sets, within 1e-9 relative slack.
CheckReport check_unfolding_bounds(std::size_t n_instances, std::uint64_t seed);

/// Central differences (f(x + h e_d) - f(x - h e_d)) / 2h.
std::vector<double> jacobian_fd(const ScalarField& f, std::span<const double> x, double h = 1e-5);

/// m x D central-difference Jacobian of a vector field.
Matrix jacobian_fd(const VectorField& f, std::span<const double> x, double h = 1e-5);

/// Largest singular value.
double spectral_norm(const Matrix& m);

/// ||J||_2 == ||J||_F (to 1e-10 relative) for the 1 x D Jacobian at each
/// point (points are n x D row-major).
CheckReport check_norm_chain(const ScalarField& f, std::span<const double> points, std::size_t dim);

/// ||J||_2 <= ||J||_F <= sqrt(rank J) ||J||_2 at each point.
CheckReport check_norm_chain(const VectorField& f, std::span<const double> points, std::size_t dim);

struct HutchinsonCheck {
    CheckReport report;
    double estimate = 0.0;
    double reference = 0.0;  // ||jacobian_fd(x)||^2
    double deviation = 0.0;  // |estimate - reference| / reference
    double std_error = 0.0;
};

/// Monte-Carlo estimate with n draws (stream "hutch") against the
/// finite-difference reference. Fails outside the 3-standard-error band.
HutchinsonCheck check_hutchinson(const ScalarField& f, std::span<const double> x, double kappa,
                                 std::size_t n, std::uint64_t seed);

/// Least-squares slope of log RMS error against log n, with `reps`
/// independent estimates per sample count.
double hutchinson_error_slope(const ScalarField& f, std::span<const double> x, double kappa,
                              std::span<const std::size_t> sample_counts, std::size_t reps,
                              std::uint64_t seed);

/// Objective with analytic gradient, evaluated at a flat parameter vector.
struct GradientProblem {
    std::string term;
    std::vector<double> theta;
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

/// ||a - b|| / max(||a||, ||b||) between the analytic gradient a and the
/// central difference b at step h.
double gradient_rel_error(const GradientProblem& problem, double h = 1e-6);

/// Random small problems covering the data term, VS_p, frozen-noise
/// Hutchinson (pointwise and grid-tied) and the signed-distance objective.
std::vector<GradientProblem> sample_gradient_problems(RngStream& rng);

/// Runs `n_configs` sampled configurations and fails any whose relative
/// error reaches 1e-5. `tamper` edits each analytic gradient first.
CheckReport check_gradients(std::size_t n_configs, std::uint64_t seed,
                            const std::function<void(std::vector<double>&)>& tamper = {});

/// Small tanh field over [0, 1]^order with Fourier features, for checks.
FieldParams random_smooth_field(std::uint64_t seed, std::size_t order = 3);

/// check_hutchinson on `n_fields` random fields at random interior points;
/// an instance also fails when its deviation reaches 2%.
CheckReport hutchinson_suite(std::size_t n_fields, std::size_t n_samples, double kappa,
                             std::uint64_t seed);

/// check_norm_chain for a random field at `n_points` random points.
CheckReport normchain_suite(std::size_t n_points, std::uint64_t seed);

} // namespace cppruner
