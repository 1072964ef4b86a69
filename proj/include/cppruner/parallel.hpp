#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace cppruner::parallel {

/// Work is split into fixed-size chunks so reductions never depend on the
/// thread count.
inline constexpr std::size_t kChunk = 1024;

/// Applies CPPRUNER_THREADS (0 or unset = OpenMP default).
void configure_from_env();

int max_threads();

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kChunk) {
    return (n + chunk - 1) / chunk;
}

/// Pairwise tree sum of per-chunk buffers, always in the same order.
void tree_reduce(std::vector<std::vector<double>>& partials, std::span<double> out);

/// Runs `body(begin, end, acc)` on every chunk of [0, n), each chunk owning an
/// accumulator of `width` zeros, and adds the tree-reduced result into `out`.
template <class Body>
void chunked_accumulate(std::size_t n, std::span<double> out, Body&& body,
                        std::size_t chunk = kChunk) {
    const std::size_t chunks = chunk_count(n, chunk);
    if (chunks == 0) return;
    if (chunks == 1) {
        std::vector<double> acc(out.size(), 0.0);
        body(std::size_t{0}, n, std::span<double>(acc));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += acc[i];
        return;
    }
    std::vector<std::vector<double>> partials(chunks);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        partials[c].assign(out.size(), 0.0);
        body(begin, end, std::span<double>(partials[c]));
    }
    tree_reduce(partials, out);
}

} // namespace cppruner::parallel
