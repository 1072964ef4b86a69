#pragma once

// File formats, synthetic ground truth and noise models.
//
// CPT1 tensors: "CPT1", u8 dtype (0 = f32, 1 = f64), u8 ndim, ndim x u32 dims,
// then the row-major payload; all little-endian.

#include "cppruner/geometry.hpp"
#include "cppruner/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cppruner {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

std::string encode_tensor(const DenseTensor& t, Dtype dtype = Dtype::f64);
DenseTensor decode_tensor(const std::string& bytes);
void write_tensor(const DenseTensor& t, const std::string& path, Dtype dtype = Dtype::f64);
DenseTensor read_tensor(const std::string& path);

/// "x y z" per line; blank lines and lines starting with '#' are skipped.
PointCloud parse_points(const std::string& text);
std::string format_points(const PointCloud& pts);
PointCloud read_points(const std::string& path);
void write_points(const PointCloud& pts, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// Which part of a tensor becomes an image. Axis 0 runs down, axis 1 across.
/// For order >= 3, `bands` picks indices along axis 2: one band gives a
/// grayscale image, three give RGB. `rest` fixes indices of axes 3 and up.
struct SliceSpec {
    std::vector<std::size_t> bands;
    std::vector<std::size_t> rest;

    /// Grayscale for matrices, RGB when axis 2 has extent 3, else band 0.
    static SliceSpec defaults(const Shape& shape);
    /// Parses "k" or "r,g,b".
    static SliceSpec parse(const std::string& text);
};

/// Binary PGM (P5) or PPM (P6), values min-max scaled to 0..255 over the
/// slice. A constant slice maps to 128.
std::string encode_preview(const DenseTensor& t, const SliceSpec& slice);
void write_image_preview(const DenseTensor& t, const std::string& path, const SliceSpec& slice);

struct SynthResult {
    DenseTensor tensor;
    FactorMatrices factors;  // exact CP factors of `tensor`
    bool rank_exceeds_dims = false;
};

/// Random CP tensor: Gaussian factor rows from stream "noise" (binomially
/// smoothed when `smooth`), each row mapped to [0, 1], and the tensor scaled
/// so its maximum is 1. Scaling instead of shifting keeps the CP rank exact.
SynthResult synth_lowrank(const Shape& shape, std::size_t rank, bool smooth, std::uint64_t seed);

/// Noise recipe. Lines run along axis 0 at fixed (column = axis 1, band = axis 2).
struct NoiseSpec {
    int case_id = 0;  // 0 = custom
    double sigma = 0.0;
    double sparse_rate = 0.0;
    bool dead_lines = false;
    std::size_t dead_lines_per_band = 2;
    double stripe_band_fraction = 0.0;
    double stripe_column_fraction = 0.0;
    double stripe_amplitude = 0.25;
    bool clamp = true;

    /// Cases 1-5: Gaussian 0.2; Gaussian 0.1 + impulses; + dead lines;
    /// + stripes; + dead lines and stripes.
    static NoiseSpec from_case(int id);
    void validate() const;
};

struct NoisyResult {
    DenseTensor tensor;
    /// 1 where an impulse, dead line or stripe touched the entry.
    std::vector<std::uint8_t> sparse;
};

NoisyResult apply_noise(const DenseTensor& t, const NoiseSpec& spec, std::uint64_t seed);

/// n points uniformly distributed on the sphere of `radius` about the origin
/// (stream "noise").
PointCloud sphere_points(std::size_t n, double radius, std::uint64_t seed);

/// Each entry observed independently with probability sr (stream "mask").
ObservationMask sample_mask(const Shape& shape, double sr, std::uint64_t seed);

/// Parses "32x32x8".
Shape parse_shape(const std::string& text);

} // namespace cppruner
