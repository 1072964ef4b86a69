#pragma once

#include "cppruner/field.hpp"
#include "cppruner/geometry.hpp"
#include "cppruner/optimizer.hpp"
#include "cppruner/regularizers.hpp"
#include "cppruner/rng.hpp"
#include "cppruner/tensor.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace cppruner {

/// Defaults per task: wide fields for images, narrower for point sets.
TrainConfig inpaint_defaults();
TrainConfig denoise_defaults();
TrainConfig sdf_defaults();

/// G evenly spaced coordinates across each axis domain of `params`.
Grid reference_grid(const FieldParams& params, std::size_t points_per_axis);

/// Data fit on grid entries plus both regularizers, for a field over index
/// coordinates:
///
///   mean_k (T[k] - Y[k])^2 + lambda_vsp * vsp(factors) + lambda_j * smooth
///
/// The smoothness term uses grid-tied perturbations and runs over the whole
/// grid, or over the same entries as the data term in batched mode.
class GridObjective {
public:
    struct Terms {
        double data = 0.0;
        double vsp = 0.0;
        double smooth = 0.0;
    };

    GridObjective(DenseTensor target, std::vector<std::size_t> observed, const TrainConfig& config);

    void set_target(DenseTensor target);
    const DenseTensor& target() const noexcept { return target_; }
    DenseTensor& target() noexcept { return target_; }

    /// True when steps use random batches instead of every observed entry.
    bool batched() const noexcept { return batched_; }

    /// Draws the step's batch and noise from streams "batch" and "hutch".
    Evaluation operator()(const FieldParams& params, std::size_t iter);

    /// Deterministic evaluation on given entries (empty = all observed). The
    /// smoothness term averages over the given noise draws (none = no term).
    Evaluation evaluate(const FieldParams& params, std::span<const std::size_t> entries,
                        std::span<const GridNoise> noise);

    const Terms& last_terms() const noexcept { return last_; }
    /// Flat indices and predictions of the last data term.
    const std::vector<std::size_t>& last_entries() const noexcept { return last_entries_; }
    const std::vector<double>& last_prediction() const noexcept { return last_prediction_; }

private:
    DenseTensor target_;
    std::vector<std::size_t> observed_;
    TrainConfig config_;
    Grid grid_;
    bool batched_ = false;
    RngStream batch_rng_;
    RngStream hutch_rng_;
    Terms last_;
    std::vector<std::size_t> last_entries_;
    std::vector<double> last_prediction_;
};

struct InpaintResult {
    DenseTensor tensor;
    FieldParams params;
    std::vector<TraceRow> trace;
    double observed_rmse = 0.0;  // RMS residual on observed entries
};

/// Fits the observed entries and returns the field on the full grid. With
/// `truth`, trace rows carry the PSNR against it.
InpaintResult inpaint(const DenseTensor& observed, const ObservationMask& mask,
                      const TrainConfig& config, const DenseTensor* truth = nullptr);

struct DenoiseResult {
    DenseTensor clean;
    DenseTensor sparse;
    FieldParams params;
    std::vector<TraceRow> trace;
    std::vector<double> residual_norms;  // ||Y - T - S||_F at each trace row
};

/// S = soft_threshold(Y - T, lambda_s / 2).
DenseTensor sparse_update(const DenseTensor& observed, const DenseTensor& clean, double lambda_s);

/// Alternates one Adam step on the field against ||Y - T - S||^2 + R(T) with
/// the closed-form sparse update.
DenoiseResult denoise(const DenseTensor& observed, const TrainConfig& config,
                      const DenseTensor* truth = nullptr,
                      const FieldParams* initial = nullptr);

struct SdfModel {
    FieldParams params;
    PointNormalization normalization;

    /// Signed distance in the normalized frame at a normalized point.
    double operator()(const Point3& normalized) const;
};

/// Surface fit of a signed distance field on normalized points:
///
///   mean |s(v)| over points
///   + lambda_eikonal * mean | ||grad s||^2 - 1 | over points and free samples
///   + lambda_offsurface * mean exp(-|s|) over free samples
///   + lambda_vsp * vsp(reference-grid factors) + lambda_j * smooth
class SdfObjective {
public:
    struct Terms {
        double surface = 0.0;
        double eikonal = 0.0;
        double offsurface = 0.0;
        double vsp = 0.0;
        double smooth = 0.0;
    };

    SdfObjective(PointCloud normalized_points, const TrainConfig& config);

    std::size_t free_count() const noexcept { return n_free_; }

    /// Draws free samples from "free" and noise from "hutch".
    Evaluation operator()(const FieldParams& params, std::size_t iter);

    /// Deterministic evaluation with given free points (n x 3) and noise over
    /// points followed by free samples (null = no smoothness term).
    Evaluation evaluate(const FieldParams& params, std::span<const double> free_points,
                        const HutchinsonNoise* noise);

    const Terms& last_terms() const noexcept { return last_; }

private:
    std::vector<double> points_;
    std::size_t n_points_ = 0;
    std::size_t n_free_ = 0;
    TrainConfig config_;
    RngStream free_rng_;
    RngStream hutch_rng_;
    Terms last_;
};

struct SdfResult {
    SdfModel model;
    std::vector<TraceRow> trace;
};

SdfResult sdf_train(const PointCloud& points, const TrainConfig& config);

/// Spatial gradient of s at normalized points by central differences.
std::vector<double> sdf_gradient_fd(const FieldParams& params, std::span<const double> points,
                                    double h = 1e-4);

/// Mean | ||grad s||^2 - 1 | at normalized points.
double eikonal_residual(const FieldParams& params, std::span<const double> points);

struct UpsampleResult {
    PointCloud points;      // original frame
    std::size_t grid = 0;   // resolution actually used
};

/// Grid points of the normalized cube with |s| < tau, mapped back to the
/// original frame. Below `min_count`, the resolution is doubled once.
UpsampleResult upsample(const SdfModel& model, std::size_t grid, double tau,
                        std::size_t min_count = 1000);

/// Same rule for any signed distance given in the normalized frame.
UpsampleResult upsample_function(const std::function<double(const Point3&)>& sdf,
                                 const PointNormalization& normalization, std::size_t grid,
                                 double tau, std::size_t min_count = 1000);

struct MassEntry {
    std::size_t component = 0;
    double fraction = 0.0;
};

/// prod_d ||u_r^(d)|| normalized to sum one, sorted descending.
std::vector<MassEntry> cp_mass_profile(const FactorMatrices& factors);

} // namespace cppruner
