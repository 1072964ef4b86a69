#include "cppruner/optimizer.hpp"

#include "cppruner/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace cppruner {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
    if (grads.size() != params.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw StructuralError("Adam state does not match the parameter layout");
    const auto& o = state.options;
    state.t += 1;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
        state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
}

void TrainConfig::validate() const {
    reg.validate();
    if (field.rank == 0) throw StructuralError("rank must be positive");
    if (field.fourier_terms == 0) throw StructuralError("fourier_terms must be positive");
    if (!(field.base_frequency > 0.0)) throw StructuralError("base frequency must be positive");
    for (auto w : field.hidden)
        if (w == 0) throw StructuralError("hidden widths must be positive");
    if (!(adam.lr > 0.0) || !(adam.eps > 0.0)) throw StructuralError("Adam lr and eps must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw StructuralError("Adam betas must lie in [0, 1)");
    if (trace_every == 0) throw StructuralError("trace interval must be positive");
    if (batch_size == 0) throw StructuralError("batch size must be positive");
    if (lambda_s < 0.0) throw StructuralError("lambda_s must be >= 0");
    if (lambda_eikonal < 0.0 || lambda_offsurface < 0.0)
        throw StructuralError("SDF weights must be >= 0");
    if (!(free_factor >= 0.0)) throw StructuralError("free_factor must be >= 0");
    if (vsp_grid < 2) throw StructuralError("vsp grid needs at least 2 points");
}

static double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

static void require_finite(const Evaluation& e, std::size_t iter, const FieldParams& params) {
    bool ok = std::isfinite(e.loss);
    for (double g : e.grads) ok = ok && std::isfinite(g);
    if (!ok) {
        std::ostringstream msg;
        msg << "non-finite " << (std::isfinite(e.loss) ? "gradient" : "loss") << " at iteration "
            << iter << " (parameter norm " << l2(params.weights()) << ")";
        throw NumericError(msg.str());
    }
}

TrainResult train(FieldParams params, const Objective& objective, std::size_t iterations,
                  const AdamOptions& adam, std::size_t trace_every,
                  const TrainCallbacks& callbacks) {
    if (trace_every == 0) throw StructuralError("trace interval must be positive");
    TrainResult res;
    AdamState state(params.size(), adam);
    for (std::size_t it = 0; it < iterations; ++it) {
        Evaluation e = objective(params, it);
        if (e.grads.size() != params.size())
            throw StructuralError("objective gradient does not match the parameter layout");
        require_finite(e, it, params);
        if (it % trace_every == 0 || it + 1 == iterations) {
            TraceRow row{it, e.loss, std::nullopt};
            if (callbacks.metric) row.psnr = callbacks.metric(params);
            res.trace.push_back(row);
        }
        adam_step(params.weights(), e.grads, state);
        if (callbacks.after_step) callbacks.after_step(it, params);
    }
    res.params = std::move(params);
    return res;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(17);
    out << "iter,loss,psnr\n";
    for (const auto& r : trace) {
        out << r.iter << ',' << r.loss << ',';
        if (r.psnr) out << *r.psnr;
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

} // namespace cppruner
