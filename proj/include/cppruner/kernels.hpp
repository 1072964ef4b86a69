#pragma once

// Data-parallel inner loops. Every kernel exists twice: a straight serial
// reference that tests and benchmarks compare against, and an OpenMP version
// used by the library. The parallel versions reduce in fixed-size chunks so
// their results do not depend on the thread count.

#include "cppruner/geometry.hpp"
#include "cppruner/tensor.hpp"

#include <span>
#include <vector>

namespace cppruner::kernels {

namespace serial {

/// Dense CP reconstruction into `out` (size = prod I_d).
void cp_reconstruct(const FactorMatrices& f, std::span<double> out);

/// CP values at the listed flat indices.
void cp_entries(const FactorMatrices& f, std::span<const std::size_t> flat,
                std::span<double> out);

/// Adds d/dU of sum_k upstream[k] * T(flat[k]) into `grads`.
void cp_factor_gradients(const FactorMatrices& f, std::span<const std::size_t> flat,
                         std::span<const double> upstream, FactorMatrices& grads);

/// For each query point, Euclidean distance to the nearest reference point.
void nearest_distances(const PointCloud& queries, const PointCloud& refs,
                       std::span<double> out);

} // namespace serial

namespace parallel {

void cp_reconstruct(const FactorMatrices& f, std::span<double> out);
void cp_entries(const FactorMatrices& f, std::span<const std::size_t> flat,
                std::span<double> out);
void cp_factor_gradients(const FactorMatrices& f, std::span<const std::size_t> flat,
                         std::span<const double> upstream, FactorMatrices& grads);

/// Uniform-grid accelerated search; exact, same results as the serial scan.
void nearest_distances(const PointCloud& queries, const PointCloud& refs,
                       std::span<double> out);

} // namespace parallel

} // namespace cppruner::kernels
