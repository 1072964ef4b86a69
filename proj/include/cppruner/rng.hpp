#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace cppruner {

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view s);

/// Labelled, reproducible random stream: xoshiro256++ seeded through
/// SplitMix64 from (master seed XOR FNV-1a(label)). Normals use Box-Muller.
///
/// Labels in use: init, batch, hutch, free, mask, noise. Sub-streams append
/// ":<index>" to the label.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view label);
    RngStream(std::uint64_t master_seed, std::string_view label, std::uint64_t index);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    void seed(std::uint64_t stream_seed);

    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace cppruner
