#include "cppruner/tensor.hpp"

#include "cppruner/error.hpp"
#include "cppruner/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cppruner {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
    return strides;
}

static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw StructuralError("tensor order must be at least 1");
    for (auto s : shape)
        if (s == 0) throw StructuralError("tensor extents must be positive");
}

DenseTensor::DenseTensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_))
        throw StructuralError("data length " + std::to_string(data_.size()) +
                              " does not match shape product " +
                              std::to_string(shape_size(shape_)));
}

std::size_t DenseTensor::flat_index(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) throw StructuralError("index order mismatch");
    std::size_t flat = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) {
        if (index[d] >= shape_[d]) throw StructuralError("index out of range");
        flat = flat * shape_[d] + index[d];
    }
    return flat;
}

double DenseTensor::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
}

FactorMatrices::FactorMatrices(std::size_t r, const Shape& shape, double fill) : rank(r) {
    factors.reserve(shape.size());
    for (auto extent : shape) factors.emplace_back(r, extent, fill);
}

Shape FactorMatrices::shape() const {
    Shape s;
    s.reserve(factors.size());
    for (const auto& f : factors) s.push_back(f.cols);
    return s;
}

void FactorMatrices::validate() const {
    if (factors.empty()) throw StructuralError("factor list is empty");
    if (rank == 0) throw StructuralError("rank must be positive");
    for (std::size_t d = 0; d < factors.size(); ++d) {
        if (factors[d].rows != rank)
            throw StructuralError("factor " + std::to_string(d) + " has " +
                                  std::to_string(factors[d].rows) + " rows, expected rank " +
                                  std::to_string(rank));
        if (factors[d].cols == 0) throw StructuralError("factor with zero columns");
        if (factors[d].data.size() != factors[d].rows * factors[d].cols)
            throw StructuralError("factor storage size mismatch");
    }
}

IndexSet::IndexSet(std::vector<std::size_t> dims, std::size_t order)
    : dims_(std::move(dims)), order_(order) {
    std::sort(dims_.begin(), dims_.end());
    if (dims_.empty()) throw StructuralError("index set is empty");
    if (std::adjacent_find(dims_.begin(), dims_.end()) != dims_.end())
        throw StructuralError("index set has duplicates");
    if (dims_.back() >= order_) throw StructuralError("index set axis out of range");
    if (dims_.size() >= order_) throw StructuralError("index set must be a proper subset");
}

std::vector<std::size_t> IndexSet::complement() const {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < order_; ++d)
        if (!contains(d)) out.push_back(d);
    return out;
}

bool IndexSet::contains(std::size_t d) const {
    return std::binary_search(dims_.begin(), dims_.end(), d);
}

std::vector<IndexSet> IndexSet::all_proper(std::size_t order) {
    std::vector<IndexSet> sets;
    if (order < 2) return sets;
    const std::size_t full = (std::size_t{1} << order) - 1;
    for (std::size_t bits = 1; bits < full; ++bits) {
        std::vector<std::size_t> dims;
        for (std::size_t d = 0; d < order; ++d)
            if (bits & (std::size_t{1} << d)) dims.push_back(d);
        sets.emplace_back(std::move(dims), order);
    }
    return sets;
}

ObservationMask::ObservationMask(Shape s, std::vector<std::uint8_t> bits)
    : shape(std::move(s)), observed(std::move(bits)) {
    if (observed.size() != shape_size(shape)) throw StructuralError("mask size mismatch");
    count = static_cast<std::size_t>(std::count_if(observed.begin(), observed.end(),
                                                   [](std::uint8_t b) { return b != 0; }));
}

ObservationMask ObservationMask::full(const Shape& s) {
    return ObservationMask(s, std::vector<std::uint8_t>(shape_size(s), 1));
}

std::vector<std::size_t> ObservationMask::indices() const {
    std::vector<std::size_t> idx;
    idx.reserve(count);
    for (std::size_t i = 0; i < observed.size(); ++i)
        if (observed[i]) idx.push_back(i);
    return idx;
}

DenseTensor ObservationMask::as_tensor() const {
    DenseTensor t(shape);
    for (std::size_t i = 0; i < observed.size(); ++i) t[i] = observed[i] ? 1.0 : 0.0;
    return t;
}

ObservationMask ObservationMask::from_tensor(const DenseTensor& t) {
    std::vector<std::uint8_t> bits(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) bits[i] = t[i] != 0.0 ? 1 : 0;
    return ObservationMask(t.shape(), std::move(bits));
}

DenseTensor cp_reconstruct(const FactorMatrices& factors) {
    factors.validate();
    DenseTensor out(factors.shape());
    kernels::parallel::cp_reconstruct(factors, out.data());
    return out;
}

Matrix unfold(const DenseTensor& t, const IndexSet& dims) {
    if (dims.order() != t.order()) throw StructuralError("index set order does not match tensor");
    const auto& shape = t.shape();
    const auto rows_dims = dims.dims();
    const auto cols_dims = dims.complement();
    std::size_t rows = 1, cols = 1;
    for (auto d : rows_dims) rows *= shape[d];
    for (auto d : cols_dims) cols *= shape[d];

    Matrix m(rows, cols);
    const auto strides = row_major_strides(shape);
    // Walk the tensor once, computing (row, col) by mixed-radix accumulation.
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t rem = flat;
        for (std::size_t d = 0; d < shape.size(); ++d) {
            idx[d] = rem / strides[d];
            rem %= strides[d];
        }
        std::size_t r = 0, c = 0;
        for (auto d : rows_dims) r = r * shape[d] + idx[d];
        for (auto d : cols_dims) c = c * shape[d] + idx[d];
        m(r, c) = t[flat];
    }
    return m;
}

void require_same_shape(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw StructuralError("tensor shapes differ");
}

} // namespace cppruner
