#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cppruner {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

/// Row-major strides (last axis fastest).
std::vector<std::size_t> row_major_strides(const Shape& shape);

/// Dense D-way array of doubles, row-major with the last axis fastest.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(Shape shape, double fill = 0.0);
    DenseTensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t order() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    std::size_t flat_index(std::span<const std::size_t> index) const;
    double& at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
    double at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }

    double frobenius_norm() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    double frobenius_norm() const;
};

/// CP factor matrices: factor d is R x I_d and row r holds u_r^(d).
struct FactorMatrices {
    std::size_t rank = 0;
    std::vector<Matrix> factors;

    FactorMatrices() = default;
    FactorMatrices(std::size_t r, const Shape& shape, double fill = 0.0);

    std::size_t order() const noexcept { return factors.size(); }
    Shape shape() const;

    /// Throws StructuralError when factors disagree on R or are empty.
    void validate() const;
};

/// Nonempty proper subset of the axes {0..D-1}, sorted ascending.
class IndexSet {
public:
    IndexSet(std::vector<std::size_t> dims, std::size_t order);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t order() const noexcept { return order_; }
    std::vector<std::size_t> complement() const;
    bool contains(std::size_t d) const;

    /// All 2^D - 2 proper nonempty subsets of {0..D-1}.
    static std::vector<IndexSet> all_proper(std::size_t order);

private:
    std::vector<std::size_t> dims_;
    std::size_t order_;
};

/// Observation pattern over a tensor shape.
struct ObservationMask {
    Shape shape;
    std::vector<std::uint8_t> observed;
    std::size_t count = 0;

    ObservationMask() = default;
    ObservationMask(Shape s, std::vector<std::uint8_t> bits);

    static ObservationMask full(const Shape& s);

    std::vector<std::size_t> indices() const;
    DenseTensor as_tensor() const;
    static ObservationMask from_tensor(const DenseTensor& t);
};

/// Entry (i_1..i_D) = sum_r prod_d factors[d](r, i_d).
DenseTensor cp_reconstruct(const FactorMatrices& factors);

/// Matricization with rows over `dims` and columns over the complement. Both
/// sides flatten their multi-index row-major in ascending axis order.
Matrix unfold(const DenseTensor& t, const IndexSet& dims);

void require_same_shape(const DenseTensor& a, const DenseTensor& b);

} // namespace cppruner
