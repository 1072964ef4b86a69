#pragma once

#include "cppruner/field.hpp"
#include "cppruner/regularizers.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cppruner {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamOptions options;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    AdamState() = default;
    AdamState(std::size_t n, AdamOptions opt) : options(opt), m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

/// Everything a training run needs. Task-specific weights are ignored by
/// tasks that do not use them.
struct TrainConfig {
    FieldSpec field;
    RegWeights reg;
    AdamOptions adam;
    std::size_t iterations = 5000;
    std::size_t trace_every = 100;
    std::uint64_t seed = 7;

    // Grid tasks: full-grid steps up to this many entries, else random batches.
    std::size_t full_grid_limit = std::size_t{1} << 20;
    std::size_t batch_size = std::size_t{1} << 16;

    // Denoising.
    double lambda_s = 0.1;

    // SDF fitting.
    double lambda_eikonal = 0.1;
    double lambda_offsurface = 0.01;
    double free_factor = 4.0;
    std::size_t vsp_grid = 64;
    bool finite_difference_eikonal = false;

    /// Throws StructuralError on out-of-range settings.
    void validate() const;
};

struct Evaluation {
    double loss = 0.0;
    std::vector<double> grads;
};

/// Called once per step with the current parameters and step index. Any
/// randomness must come from streams the objective owns.
using Objective = std::function<Evaluation(const FieldParams&, std::size_t)>;

struct TraceRow {
    std::size_t iter = 0;
    double loss = 0.0;
    std::optional<double> psnr;
};

struct TrainCallbacks {
    /// Runs after each Adam step; may edit auxiliary state (e.g. the sparse part).
    std::function<void(std::size_t, const FieldParams&)> after_step;
    /// Extra metric recorded on trace rows.
    std::function<std::optional<double>(const FieldParams&)> metric;
};

struct TrainResult {
    FieldParams params;
    std::vector<TraceRow> trace;
};

/// Runs `iterations` Adam steps. Loss is recorded at step 0, every
/// `trace_every` steps, and at the last step. Throws NumericError on a
/// non-finite loss or gradient.
TrainResult train(FieldParams params, const Objective& objective, std::size_t iterations,
                  const AdamOptions& adam, std::size_t trace_every,
                  const TrainCallbacks& callbacks = {});

/// "iter,loss,psnr" lines; an empty psnr column when no metric was recorded.
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

} // namespace cppruner
