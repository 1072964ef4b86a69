#include "cppruner/parallel.hpp"

#include <cstdlib>
#include <omp.h>
#include <string>

namespace cppruner::parallel {

void configure_from_env() {
    const char* env = std::getenv("CPPRUNER_THREADS");
    if (!env) return;
    try {
        const int n = std::stoi(env);
        if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
        // ignore malformed values and keep the OpenMP default
    }
}

int max_threads() { return omp_get_max_threads(); }

void tree_reduce(std::vector<std::vector<double>>& partials, std::span<double> out) {
    std::size_t n = partials.size();
    for (std::size_t stride = 1; stride < n; stride *= 2) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); i += 2 * stride) {
            const std::size_t j = static_cast<std::size_t>(i) + stride;
            if (j < n) {
                auto& a = partials[i];
                const auto& b = partials[j];
                for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
            }
        }
    }
    if (n == 0) return;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += partials[0][k];
}

} // namespace cppruner::parallel
