#pragma once

// CP-structured implicit neural field
//
//   f(x) = sum_r prod_d f_d(x_d)_r,   f_d = mlp_d o gamma o normalize_d
//
// Each axis owns a small MLP mapping a scalar coordinate to R factor values.
// Coordinates are first mapped affinely from the axis domain [lo, hi] to
// [0, 1], then through the Fourier map gamma, then through the MLP.

#include "cppruner/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cppruner {

enum class Activation : std::uint32_t { linear = 0, relu = 1, sine = 2, tanh = 3 };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

/// gamma(t) = [a_j cos(2 pi b_j t), a_j sin(2 pi b_j t)]_j, output width 2m.
struct FourierMap {
    std::vector<double> coeffs;  // a_j
    std::vector<double> freqs;   // b_j, cycles per normalized unit

    std::size_t terms() const noexcept { return coeffs.size(); }
    std::size_t width() const noexcept { return 2 * coeffs.size(); }
};

std::vector<double> fourier_features(double t, const FourierMap& map);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Domain [0, I - 1] for an axis of I grid points ([0, 1] when I == 1).
Interval index_domain(std::size_t extent);

struct LayerShape {
    std::size_t rows = 0;  // outputs
    std::size_t cols = 0;  // inputs
};

/// Architecture of a field. `hidden` lists hidden widths, so the number of
/// weight layers is hidden.size() + 1.
struct FieldSpec {
    std::size_t order = 3;
    std::size_t rank = 20;
    std::size_t fourier_terms = 8;
    double base_frequency = 0.5;
    std::vector<std::size_t> hidden{256, 256};
    Activation hidden_activation = Activation::sine;
    bool activated_head = false;  // apply the hidden activation on the output layer too
    bool bias = true;
};

/// All trainable weights of a field plus its fixed Fourier map and domain.
///
/// Weights live in one contiguous vector: for each axis d, for each layer l,
/// the row-major matrix W_l^(d) followed by its bias (when enabled).
class FieldParams {
public:
    FieldParams() = default;
    FieldParams(std::size_t rank, FourierMap fourier,
                std::vector<std::vector<LayerShape>> layers, Activation hidden,
                Activation head, bool bias, std::vector<Interval> domain);

    std::size_t order() const noexcept { return layers_.size(); }
    std::size_t rank() const noexcept { return rank_; }
    std::size_t depth() const noexcept { return layers_.empty() ? 0 : layers_[0].size(); }

    const FourierMap& fourier() const noexcept { return fourier_; }
    const std::vector<Interval>& domain() const noexcept { return domain_; }
    void set_domain(std::vector<Interval> domain);

    Activation hidden_activation() const noexcept { return hidden_; }
    Activation head_activation() const noexcept { return head_; }
    Activation activation(std::size_t layer) const noexcept {
        return layer + 1 == depth() ? head_ : hidden_;
    }
    bool has_bias() const noexcept { return bias_; }

    const std::vector<LayerShape>& layers(std::size_t d) const { return layers_[d]; }

    std::span<double> weights() noexcept { return values_; }
    std::span<const double> weights() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t weight_offset(std::size_t d, std::size_t l) const { return offsets_[d][2 * l]; }
    std::size_t bias_offset(std::size_t d, std::size_t l) const { return offsets_[d][2 * l + 1]; }
    std::size_t stack_begin(std::size_t d) const { return offsets_[d][0]; }
    std::size_t stack_end(std::size_t d) const {
        return d + 1 < order() ? offsets_[d + 1][0] : values_.size();
    }

    std::span<double> weight(std::size_t d, std::size_t l);
    std::span<const double> weight(std::size_t d, std::size_t l) const;
    std::span<double> bias(std::size_t d, std::size_t l);
    std::span<const double> bias(std::size_t d, std::size_t l) const;

private:
    std::size_t rank_ = 0;
    FourierMap fourier_;
    std::vector<std::vector<LayerShape>> layers_;
    Activation hidden_ = Activation::sine;
    Activation head_ = Activation::linear;
    bool bias_ = true;
    std::vector<Interval> domain_;
    std::vector<std::vector<std::size_t>> offsets_;
    std::vector<double> values_;
};

/// Gradients congruent with FieldParams::weights(), plus optional d value / d x
/// per batch point (n x D, row-major).
struct GradientBundle {
    std::vector<double> params;
    std::vector<double> inputs;
};

/// Glorot-uniform weights from stream "init:<d>", zero biases,
/// a_j = 1/m and b_j = 2^(j-1) * base_frequency.
FieldParams init_params(const FieldSpec& spec, std::vector<Interval> domain, std::uint64_t seed);

/// f_d(x): the R factor values of axis d at coordinate x.
std::vector<double> dim_forward(const FieldParams& params, std::size_t d, double x);

struct FieldValue {
    double value = 0.0;
    std::vector<std::vector<double>> factors;  // D vectors of R values
};

FieldValue field_forward(const FieldParams& params, std::span<const double> x);

/// Per-axis coordinate lists.
using Grid = std::vector<std::vector<double>>;

/// Coordinates 0..I_d-1 along each axis.
Grid index_grid(const Shape& shape);

struct GridEval {
    DenseTensor tensor;
    FactorMatrices factors;
};

GridEval materialize_grid(const FieldParams& params, const Grid& grid);
FactorMatrices grid_factors(const FieldParams& params, const Grid& grid);

/// Exact gradient of sum_k upstream[k] * f(points[k]) with respect to every
/// weight, and optionally with respect to the points (n x D row-major).
GradientBundle backward(const FieldParams& params, std::span<const double> points,
                        std::span<const double> upstream, bool want_input_grads);

// Lower-level batch machinery shared by the regularizers and task objectives.

/// Activations of one axis MLP over a batch of scalar inputs. act[0] holds the
/// Fourier features; act[l + 1] the output of layer l. With tangents, the
/// *_dot arrays carry the forward-mode derivative with respect to the input.
struct DimTape {
    std::size_t n = 0;
    bool tangent = false;
    std::vector<double> t;  // normalized inputs
    std::vector<std::vector<double>> pre, act, pre_dot, act_dot;

    std::span<const double> output() const { return act.back(); }
    std::span<const double> output_dot() const { return act_dot.back(); }
};

void forward_dim_batch(const FieldParams& params, std::size_t d, std::span<const double> xs,
                       bool tangent, DimTape& tape);

/// Accumulates into param_grads (full layout) and writes input_grads[k]
/// (if non-empty). up_tangent may be empty; otherwise the tape must carry
/// tangents.
void backward_dim_batch(const FieldParams& params, std::size_t d, const DimTape& tape,
                        std::span<const double> up_value, std::span<const double> up_tangent,
                        std::span<double> param_grads, std::span<double> input_grads);

/// Transposes a tape's n x R output into an R x n factor matrix.
Matrix tape_factor(const DimTape& tape, std::size_t rank);

/// Field values and (optionally) spatial gradients at n scattered points.
struct PointBatch {
    std::size_t n = 0;
    std::vector<DimTape> tapes;
    std::vector<double> values;
    std::vector<double> gradients;  // n x D, present when evaluated with tangents
};

PointBatch evaluate_points(const FieldParams& params, std::span<const double> points,
                           bool with_gradients);

/// Backpropagates up_value (n) and, if non-empty, up_gradient (n x D, the
/// derivative of the loss with respect to each spatial gradient entry).
void backpropagate_points(const FieldParams& params, const PointBatch& batch,
                          std::span<const double> up_value,
                          std::span<const double> up_gradient, std::span<double> param_grads,
                          std::span<double> input_grads);

} // namespace cppruner
