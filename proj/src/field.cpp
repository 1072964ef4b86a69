#include "cppruner/field.hpp"

#include "cppruner/error.hpp"
#include "cppruner/kernels.hpp"
#include "cppruner/parallel.hpp"
#include "cppruner/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cppruner {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double activate(Activation a, double z) {
    switch (a) {
    case Activation::linear: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sine: return std::sin(z);
    case Activation::tanh: return std::tanh(z);
    }
    return z;
}

// First and second derivative given pre-activation z and output g(z).
// ReLU uses subgradient 0 at exactly 0.
inline void derivatives(Activation a, double z, double g, double& d1, double& d2) {
    d1 = 1.0;
    d2 = 0.0;
    switch (a) {
    case Activation::linear: return;
    case Activation::relu: d1 = z > 0.0 ? 1.0 : 0.0; d2 = 0.0; return;
    case Activation::sine: d1 = std::cos(z); d2 = -g; return;
    case Activation::tanh: d1 = 1.0 - g * g; d2 = -2.0 * g * d1; return;
    }
}

inline double normalize(const Interval& dom, double x) { return (x - dom.lo) / (dom.hi - dom.lo); }

void features(const FourierMap& map, double t, double* out) {
    for (std::size_t j = 0; j < map.terms(); ++j) {
        const double w = kTwoPi * map.freqs[j] * t;
        out[2 * j] = map.coeffs[j] * std::cos(w);
        out[2 * j + 1] = map.coeffs[j] * std::sin(w);
    }
}

// d gamma / d x and d^2 gamma / d x^2, with dt/dx = scale.
void feature_derivs(const FourierMap& map, double t, double scale, double* d1, double* d2) {
    for (std::size_t j = 0; j < map.terms(); ++j) {
        const double om = kTwoPi * map.freqs[j];
        const double w = om * t;
        const double c = std::cos(w), s = std::sin(w);
        const double a = map.coeffs[j];
        if (d1) {
            d1[2 * j] = -a * om * s * scale;
            d1[2 * j + 1] = a * om * c * scale;
        }
        if (d2) {
            d2[2 * j] = -a * om * om * c * scale * scale;
            d2[2 * j + 1] = -a * om * om * s * scale * scale;
        }
    }
}

} // namespace

Activation parse_activation(std::string_view name) {
    if (name == "linear") return Activation::linear;
    if (name == "relu") return Activation::relu;
    if (name == "sine" || name == "sin") return Activation::sine;
    if (name == "tanh") return Activation::tanh;
    throw StructuralError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
    switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sine: return "sine";
    case Activation::tanh: return "tanh";
    }
    return "?";
}

std::vector<double> fourier_features(double t, const FourierMap& map) {
    std::vector<double> out(map.width());
    features(map, t, out.data());
    return out;
}

Interval index_domain(std::size_t extent) {
    if (extent <= 1) return {0.0, 1.0};
    return {0.0, static_cast<double>(extent - 1)};
}

FieldParams::FieldParams(std::size_t rank, FourierMap fourier,
                         std::vector<std::vector<LayerShape>> layers, Activation hidden,
                         Activation head, bool bias, std::vector<Interval> domain)
    : rank_(rank), fourier_(std::move(fourier)), layers_(std::move(layers)), hidden_(hidden),
      head_(head), bias_(bias) {
    if (layers_.empty()) throw StructuralError("field needs at least one axis");
    if (rank_ == 0) throw StructuralError("field rank must be positive");
    if (fourier_.coeffs.size() != fourier_.freqs.size() || fourier_.terms() == 0)
        throw StructuralError("Fourier map needs matching, nonempty a and b");
    const std::size_t L = layers_[0].size();
    if (L == 0) throw StructuralError("field stacks need at least one layer");
    std::size_t offset = 0;
    offsets_.resize(layers_.size());
    for (std::size_t d = 0; d < layers_.size(); ++d) {
        const auto& stack = layers_[d];
        if (stack.size() != L) throw StructuralError("all axis stacks must share depth");
        if (stack.front().cols != fourier_.width())
            throw StructuralError("first layer width must equal 2m");
        if (stack.back().rows != rank_) throw StructuralError("last layer must output R values");
        for (std::size_t l = 0; l < L; ++l) {
            if (stack[l].rows == 0 || stack[l].cols == 0)
                throw StructuralError("layer with zero width");
            if (l > 0 && stack[l].cols != stack[l - 1].rows)
                throw StructuralError("layer shapes do not chain");
            offsets_[d].push_back(offset);
            offset += stack[l].rows * stack[l].cols;
            offsets_[d].push_back(offset);
            if (bias_) offset += stack[l].rows;
        }
    }
    values_.assign(offset, 0.0);
    set_domain(std::move(domain));
}

void FieldParams::set_domain(std::vector<Interval> domain) {
    if (domain.size() != layers_.size()) throw StructuralError("domain count must equal order");
    for (const auto& iv : domain)
        if (!(iv.hi > iv.lo) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi))
            throw StructuralError("degenerate axis domain");
    domain_ = std::move(domain);
}

std::span<double> FieldParams::weight(std::size_t d, std::size_t l) {
    return {values_.data() + weight_offset(d, l), layers_[d][l].rows * layers_[d][l].cols};
}
std::span<const double> FieldParams::weight(std::size_t d, std::size_t l) const {
    return {values_.data() + weight_offset(d, l), layers_[d][l].rows * layers_[d][l].cols};
}
std::span<double> FieldParams::bias(std::size_t d, std::size_t l) {
    if (!bias_) return {};
    return {values_.data() + bias_offset(d, l), layers_[d][l].rows};
}
std::span<const double> FieldParams::bias(std::size_t d, std::size_t l) const {
    if (!bias_) return {};
    return {values_.data() + bias_offset(d, l), layers_[d][l].rows};
}

FieldParams init_params(const FieldSpec& spec, std::vector<Interval> domain, std::uint64_t seed) {
    if (spec.order == 0 || spec.rank == 0 || spec.fourier_terms == 0)
        throw StructuralError("field spec needs positive order, rank and Fourier terms");
    FourierMap map;
    for (std::size_t j = 0; j < spec.fourier_terms; ++j) {
        map.coeffs.push_back(1.0 / static_cast<double>(spec.fourier_terms));
        map.freqs.push_back(std::ldexp(spec.base_frequency, static_cast<int>(j)));
    }
    std::vector<LayerShape> stack;
    std::size_t in = map.width();
    for (auto h : spec.hidden) {
        stack.push_back({h, in});
        in = h;
    }
    stack.push_back({spec.rank, in});
    std::vector<std::vector<LayerShape>> layers(spec.order, stack);
    const Activation head = spec.activated_head ? spec.hidden_activation : Activation::linear;
    FieldParams p(spec.rank, map, std::move(layers), spec.hidden_activation, head, spec.bias,
                  std::move(domain));
    for (std::size_t d = 0; d < spec.order; ++d) {
        RngStream rng(seed, "init", d);
        for (std::size_t l = 0; l < stack.size(); ++l) {
            const double bound =
                std::sqrt(6.0 / static_cast<double>(stack[l].rows + stack[l].cols));
            for (auto& w : p.weight(d, l)) w = rng.uniform(-bound, bound);
        }
    }
    return p;
}

void forward_dim_batch(const FieldParams& params, std::size_t d, std::span<const double> xs,
                       bool tangent, DimTape& tape) {
    const auto& stack = params.layers(d);
    const std::size_t L = stack.size();
    const std::size_t n = xs.size();
    const auto& dom = params.domain()[d];
    const double scale = 1.0 / (dom.hi - dom.lo);
    const std::size_t m2 = params.fourier().width();

    tape.n = n;
    tape.tangent = tangent;
    tape.t.resize(n);
    tape.act.resize(L + 1);
    tape.pre.resize(L);
    tape.act[0].resize(n * m2);
    for (std::size_t l = 0; l < L; ++l) {
        tape.pre[l].resize(n * stack[l].rows);
        tape.act[l + 1].resize(n * stack[l].rows);
    }
    if (tangent) {
        tape.act_dot.resize(L + 1);
        tape.pre_dot.resize(L);
        tape.act_dot[0].resize(n * m2);
        for (std::size_t l = 0; l < L; ++l) {
            tape.pre_dot[l].resize(n * stack[l].rows);
            tape.act_dot[l + 1].resize(n * stack[l].rows);
        }
    } else {
        tape.act_dot.clear();
        tape.pre_dot.clear();
    }

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ks = 0; ks < static_cast<std::ptrdiff_t>(n); ++ks) {
        const std::size_t k = static_cast<std::size_t>(ks);
        const double t = normalize(dom, xs[k]);
        tape.t[k] = t;
        features(params.fourier(), t, &tape.act[0][k * m2]);
        if (tangent) feature_derivs(params.fourier(), t, scale, &tape.act_dot[0][k * m2], nullptr);
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t rows = stack[l].rows, cols = stack[l].cols;
            const auto W = params.weight(d, l);
            const auto b = params.bias(d, l);
            const Activation act = params.activation(l);
            const double* a = &tape.act[l][k * cols];
            double* z = &tape.pre[l][k * rows];
            double* out = &tape.act[l + 1][k * rows];
            for (std::size_t o = 0; o < rows; ++o) {
                const double* w = &W[o * cols];
                double s = 0.0;
                for (std::size_t i = 0; i < cols; ++i) s += w[i] * a[i];
                if (!b.empty()) s += b[o];
                z[o] = s;
                out[o] = activate(act, s);
            }
            if (tangent) {
                const double* ad = &tape.act_dot[l][k * cols];
                double* zd = &tape.pre_dot[l][k * rows];
                double* outd = &tape.act_dot[l + 1][k * rows];
                for (std::size_t o = 0; o < rows; ++o) {
                    const double* w = &W[o * cols];
                    double s = 0.0;
                    for (std::size_t i = 0; i < cols; ++i) s += w[i] * ad[i];
                    zd[o] = s;
                    double d1, d2;
                    derivatives(act, z[o], out[o], d1, d2);
                    outd[o] = d1 * s;
                }
            }
        }
    }
}

void backward_dim_batch(const FieldParams& params, std::size_t d, const DimTape& tape,
                        std::span<const double> up_value, std::span<const double> up_tangent,
                        std::span<double> param_grads, std::span<double> input_grads) {
    const auto& stack = params.layers(d);
    const std::size_t L = stack.size();
    const std::size_t n = tape.n;
    const std::size_t R = params.rank();
    const bool with_tangent = !up_tangent.empty();
    if (up_value.size() != n * R) throw StructuralError("upstream value size mismatch");
    if (with_tangent && (!tape.tangent || up_tangent.size() != n * R))
        throw StructuralError("tangent upstream needs a tangent tape of matching size");
    if (param_grads.size() != params.size()) throw StructuralError("gradient layout mismatch");
    if (!input_grads.empty() && input_grads.size() != n)
        throw StructuralError("input gradient size mismatch");

    const std::size_t base = params.stack_begin(d);
    const std::size_t width = params.stack_end(d) - base;
    const auto& dom = params.domain()[d];
    const double scale = 1.0 / (dom.hi - dom.lo);
    const std::size_t m2 = params.fourier().width();
    std::size_t widest = m2;
    for (const auto& ls : stack) widest = std::max(widest, ls.rows);

    parallel::chunked_accumulate(n, param_grads.subspan(base, width), [&](std::size_t begin,
                                                                          std::size_t end,
                                                                          std::span<double> acc) {
        std::vector<double> abar(widest), adbar(widest), zbar(widest), zdbar(widest);
        std::vector<double> nabar(widest), nadbar(widest);
        std::vector<double> g1(m2), g2(m2);
        for (std::size_t k = begin; k < end; ++k) {
            std::copy_n(&up_value[k * R], R, abar.begin());
            if (with_tangent) std::copy_n(&up_tangent[k * R], R, adbar.begin());
            for (std::size_t l = L; l-- > 0;) {
                const std::size_t rows = stack[l].rows, cols = stack[l].cols;
                const auto W = params.weight(d, l);
                const Activation act = params.activation(l);
                const double* z = &tape.pre[l][k * rows];
                const double* out = &tape.act[l + 1][k * rows];
                for (std::size_t o = 0; o < rows; ++o) {
                    double d1, d2;
                    derivatives(act, z[o], out[o], d1, d2);
                    zbar[o] = abar[o] * d1;
                    if (with_tangent) {
                        zbar[o] += adbar[o] * tape.pre_dot[l][k * rows + o] * d2;
                        zdbar[o] = adbar[o] * d1;
                    }
                }
                const double* a = &tape.act[l][k * cols];
                const double* ad = with_tangent ? &tape.act_dot[l][k * cols] : nullptr;
                double* gW = acc.data() + (params.weight_offset(d, l) - base);
                for (std::size_t o = 0; o < rows; ++o) {
                    double* g = gW + o * cols;
                    const double zb = zbar[o];
                    if (zb != 0.0)
                        for (std::size_t i = 0; i < cols; ++i) g[i] += zb * a[i];
                    if (with_tangent && zdbar[o] != 0.0)
                        for (std::size_t i = 0; i < cols; ++i) g[i] += zdbar[o] * ad[i];
                }
                if (params.has_bias()) {
                    double* gb = acc.data() + (params.bias_offset(d, l) - base);
                    for (std::size_t o = 0; o < rows; ++o) gb[o] += zbar[o];
                }
                if (l == 0 && input_grads.empty()) break;
                std::fill_n(nabar.begin(), cols, 0.0);
                if (with_tangent) std::fill_n(nadbar.begin(), cols, 0.0);
                for (std::size_t o = 0; o < rows; ++o) {
                    const double* w = &W[o * cols];
                    const double zb = zbar[o];
                    for (std::size_t i = 0; i < cols; ++i) nabar[i] += w[i] * zb;
                    if (with_tangent) {
                        const double zdb = zdbar[o];
                        for (std::size_t i = 0; i < cols; ++i) nadbar[i] += w[i] * zdb;
                    }
                }
                std::copy_n(nabar.begin(), cols, abar.begin());
                if (with_tangent) std::copy_n(nadbar.begin(), cols, adbar.begin());
            }
            if (!input_grads.empty()) {
                feature_derivs(params.fourier(), tape.t[k], scale, g1.data(),
                               with_tangent ? g2.data() : nullptr);
                double s = 0.0;
                for (std::size_t i = 0; i < m2; ++i) s += abar[i] * g1[i];
                if (with_tangent)
                    for (std::size_t i = 0; i < m2; ++i) s += adbar[i] * g2[i];
                input_grads[k] = s;
            }
        }
    });
}

Matrix tape_factor(const DimTape& tape, std::size_t rank) {
    Matrix m(rank, tape.n);
    const auto out = tape.output();
    for (std::size_t k = 0; k < tape.n; ++k)
        for (std::size_t r = 0; r < rank; ++r) m(r, k) = out[k * rank + r];
    return m;
}

std::vector<double> dim_forward(const FieldParams& params, std::size_t d, double x) {
    if (d >= params.order()) throw StructuralError("axis index out of range");
    DimTape tape;
    const double xs[1] = {x};
    forward_dim_batch(params, d, xs, false, tape);
    const auto out = tape.output();
    return {out.begin(), out.end()};
}

FieldValue field_forward(const FieldParams& params, std::span<const double> x) {
    if (x.size() != params.order()) throw StructuralError("point has the wrong dimension");
    FieldValue fv;
    for (std::size_t d = 0; d < params.order(); ++d) fv.factors.push_back(dim_forward(params, d, x[d]));
    double sum = 0.0;
    for (std::size_t r = 0; r < params.rank(); ++r) {
        double prod = 1.0;
        for (std::size_t d = 0; d < params.order(); ++d) prod *= fv.factors[d][r];
        sum += prod;
    }
    fv.value = sum;
    return fv;
}

Grid index_grid(const Shape& shape) {
    Grid g(shape.size());
    for (std::size_t d = 0; d < shape.size(); ++d) {
        g[d].resize(shape[d]);
        for (std::size_t i = 0; i < shape[d]; ++i) g[d][i] = static_cast<double>(i);
    }
    return g;
}

FactorMatrices grid_factors(const FieldParams& params, const Grid& grid) {
    if (grid.size() != params.order()) throw StructuralError("grid order mismatch");
    FactorMatrices f;
    f.rank = params.rank();
    DimTape tape;
    for (std::size_t d = 0; d < grid.size(); ++d) {
        if (grid[d].empty()) throw StructuralError("empty grid axis");
        forward_dim_batch(params, d, grid[d], false, tape);
        f.factors.push_back(tape_factor(tape, params.rank()));
    }
    return f;
}

GridEval materialize_grid(const FieldParams& params, const Grid& grid) {
    GridEval ge;
    ge.factors = grid_factors(params, grid);
    ge.tensor = cp_reconstruct(ge.factors);
    return ge;
}

PointBatch evaluate_points(const FieldParams& params, std::span<const double> points,
                           bool with_gradients) {
    const std::size_t D = params.order(), R = params.rank();
    if (points.size() % D != 0) throw StructuralError("point buffer is not a multiple of D");
    PointBatch b;
    b.n = points.size() / D;
    b.tapes.resize(D);
    std::vector<double> xs(b.n);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t k = 0; k < b.n; ++k) xs[k] = points[k * D + d];
        forward_dim_batch(params, d, xs, with_gradients, b.tapes[d]);
    }
    b.values.assign(b.n, 0.0);
    if (with_gradients) b.gradients.assign(b.n * D, 0.0);
    for (std::size_t k = 0; k < b.n; ++k) {
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            double prod = 1.0;
            for (std::size_t d = 0; d < D; ++d) prod *= b.tapes[d].act.back()[k * R + r];
            sum += prod;
        }
        b.values[k] = sum;
        if (!with_gradients) continue;
        for (std::size_t d = 0; d < D; ++d) {
            double g = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                double prod = b.tapes[d].act_dot.back()[k * R + r];
                for (std::size_t e = 0; e < D; ++e)
                    if (e != d) prod *= b.tapes[e].act.back()[k * R + r];
                g += prod;
            }
            b.gradients[k * D + d] = g;
        }
    }
    return b;
}

void backpropagate_points(const FieldParams& params, const PointBatch& batch,
                          std::span<const double> up_value,
                          std::span<const double> up_gradient, std::span<double> param_grads,
                          std::span<double> input_grads) {
    const std::size_t D = params.order(), R = params.rank(), n = batch.n;
    const bool with_grad = !up_gradient.empty();
    if (up_value.size() != n) throw StructuralError("upstream size mismatch");
    if (with_grad && (up_gradient.size() != n * D || batch.gradients.empty()))
        throw StructuralError("gradient upstream needs a batch evaluated with gradients");
    if (!input_grads.empty() && input_grads.size() != n * D)
        throw StructuralError("input gradient size mismatch");

    std::vector<std::vector<double>> upu(D, std::vector<double>(n * R, 0.0));
    std::vector<std::vector<double>> upt(with_grad ? D : 0, std::vector<double>(n * R, 0.0));
    auto u = [&](std::size_t d, std::size_t k, std::size_t r) {
        return batch.tapes[d].act.back()[k * R + r];
    };
    auto ud = [&](std::size_t d, std::size_t k, std::size_t r) {
        return batch.tapes[d].act_dot.back()[k * R + r];
    };
    for (std::size_t k = 0; k < n; ++k) {
        const double c = up_value[k];
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t j = 0; j < D; ++j) {
                double others = 1.0;
                for (std::size_t e = 0; e < D; ++e)
                    if (e != j) others *= u(e, k, r);
                double g = c * others;
                if (with_grad) {
                    upt[j][k * R + r] = up_gradient[k * D + j] * others;
                    for (std::size_t dd = 0; dd < D; ++dd) {
                        if (dd == j) continue;
                        double p = up_gradient[k * D + dd] * ud(dd, k, r);
                        for (std::size_t e = 0; e < D; ++e)
                            if (e != j && e != dd) p *= u(e, k, r);
                        g += p;
                    }
                }
                upu[j][k * R + r] = g;
            }
        }
    }
    std::vector<double> xg(input_grads.empty() ? 0 : n);
    for (std::size_t d = 0; d < D; ++d) {
        backward_dim_batch(params, d, batch.tapes[d], upu[d],
                           with_grad ? std::span<const double>(upt[d]) : std::span<const double>{},
                           param_grads, xg);
        if (!input_grads.empty())
            for (std::size_t k = 0; k < n; ++k) input_grads[k * D + d] = xg[k];
    }
}

GradientBundle backward(const FieldParams& params, std::span<const double> points,
                        std::span<const double> upstream, bool want_input_grads) {
    const auto batch = evaluate_points(params, points, false);
    GradientBundle g;
    g.params.assign(params.size(), 0.0);
    if (want_input_grads) g.inputs.assign(points.size(), 0.0);
    backpropagate_points(params, batch, upstream, {}, g.params, g.inputs);
    return g;
}

} // namespace cppruner
