#include "cppruner/io.hpp"

#include "cppruner/error.hpp"
#include "cppruner/rng.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace cppruner {

static_assert(std::endian::native == std::endian::little, "little-endian host expected");

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// CPT1

std::string encode_tensor(const DenseTensor& t, Dtype dtype) {
    if (t.order() == 0 || t.order() > 255) throw StructuralError("tensor order must be 1..255");
    std::string out = "CPT1";
    out.push_back(static_cast<char>(dtype));
    out.push_back(static_cast<char>(t.order()));
    for (auto n : t.shape()) {
        if (n > std::numeric_limits<std::uint32_t>::max()) throw StructuralError("extent too large");
        const auto v = static_cast<std::uint32_t>(n);
        out.append(reinterpret_cast<const char*>(&v), 4);
    }
    if (dtype == Dtype::f64) {
        out.append(reinterpret_cast<const char*>(t.values().data()), 8 * t.size());
    } else {
        for (double x : t.values()) {
            const float f = static_cast<float>(x);
            out.append(reinterpret_cast<const char*>(&f), 4);
        }
    }
    return out;
}

DenseTensor decode_tensor(const std::string& b) {
    using K = FormatError::Kind;
    if (b.size() < 4 || b.compare(0, 4, "CPT1") != 0) throw FormatError(K::bad_magic, "not a CPT1 file (bad magic)");
    if (b.size() < 6) throw FormatError(K::truncated, "CPT1 header is truncated");
    const auto dtype = static_cast<std::uint8_t>(b[4]);
    const auto ndim = static_cast<std::uint8_t>(b[5]);
    if (dtype > 1) throw FormatError(K::bad_dtype, "unknown CPT1 dtype " + std::to_string(dtype));
    if (ndim == 0) throw FormatError(K::zero_rank, "CPT1 tensor has ndim = 0");
    if (b.size() < 6 + 4 * static_cast<std::size_t>(ndim))
        throw FormatError(K::truncated, "CPT1 dims are truncated");
    Shape shape(ndim);
    std::size_t count = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
        std::uint32_t v;
        std::memcpy(&v, b.data() + 6 + 4 * d, 4);
        if (v == 0) throw FormatError(K::bad_header, "CPT1 extent is zero");
        shape[d] = v;
        count *= v;
    }
    const std::size_t width = dtype == 1 ? 8 : 4;
    const std::size_t offset = 6 + 4 * static_cast<std::size_t>(ndim);
    if (b.size() - offset != count * width)
        throw FormatError(K::truncated, "CPT1 payload holds " + std::to_string(b.size() - offset) +
                                            " bytes, header implies " + std::to_string(count * width));
    std::vector<double> data(count);
    if (dtype == 1) {
        std::memcpy(data.data(), b.data() + offset, 8 * count);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, b.data() + offset + 4 * i, 4);
            data[i] = f;
        }
    }
    return DenseTensor(std::move(shape), std::move(data));
}

void write_tensor(const DenseTensor& t, const std::string& path, Dtype dtype) {
    write_file(path, encode_tensor(t, dtype));
}

DenseTensor read_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

// ---------------------------------------------------------------------------
// XYZ points

static bool parse_double(std::string_view tok, double& out) {
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc() && ptr == end;
}

PointCloud parse_points(const std::string& text) {
    PointCloud pts;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string tok; ls >> tok;) toks.push_back(tok);
        if (toks.size() != 3) throw ParseError(lineno, "expected 3 coordinates, got " + std::to_string(toks.size()));
        Point3 p;
        for (int d = 0; d < 3; ++d)
            if (!parse_double(toks[d], p[d])) throw ParseError(lineno, "not a number: '" + toks[d] + "'");
        pts.push_back(p);
    }
    return pts;
}

std::string format_points(const PointCloud& pts) {
    std::ostringstream out;
    out.precision(9);
    for (const auto& p : pts) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    return out.str();
}

PointCloud read_points(const std::string& path) { return parse_points(read_file(path)); }

void write_points(const PointCloud& pts, const std::string& path) {
    write_file(path, format_points(pts));
}

// ---------------------------------------------------------------------------
// Previews

SliceSpec SliceSpec::defaults(const Shape& shape) {
    SliceSpec s;
    if (shape.size() >= 3) s.bands = shape[2] == 3 ? std::vector<std::size_t>{0, 1, 2} : std::vector<std::size_t>{0};
    if (shape.size() > 3) s.rest.assign(shape.size() - 3, 0);
    return s;
}

SliceSpec SliceSpec::parse(const std::string& text) {
    SliceSpec s;
    std::istringstream in(text);
    for (std::string tok; std::getline(in, tok, ',');) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size())
            throw StructuralError("bad slice spec '" + text + "'");
        s.bands.push_back(v);
    }
    if (s.bands.size() != 1 && s.bands.size() != 3)
        throw StructuralError("slice spec needs one band or three");
    return s;
}

std::string encode_preview(const DenseTensor& t, const SliceSpec& slice) {
    const Shape& shape = t.shape();
    if (shape.size() < 2) throw StructuralError("preview needs at least two axes");
    const std::size_t H = shape[0], W = shape[1];
    std::vector<std::size_t> bands = slice.bands;
    if (shape.size() == 2) {
        if (!bands.empty() && !(bands.size() == 1 && bands[0] == 0))
            throw StructuralError("slice out of range for a matrix");
        bands = {0};
    } else {
        if (bands.size() != 1 && bands.size() != 3) throw StructuralError("slice needs one band or three");
        for (auto b : bands)
            if (b >= shape[2]) throw StructuralError("slice band " + std::to_string(b) + " out of range");
    }
    std::vector<std::size_t> rest = slice.rest;
    const std::size_t extra = shape.size() > 3 ? shape.size() - 3 : 0;
    if (rest.empty()) rest.assign(extra, 0);
    if (rest.size() != extra) throw StructuralError("slice must fix every axis beyond the third");
    for (std::size_t i = 0; i < extra; ++i)
        if (rest[i] >= shape[3 + i]) throw StructuralError("slice index out of range");

    const std::size_t C = bands.size();
    std::vector<double> vals(H * W * C);
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t i = 0; i < extra; ++i) idx[3 + i] = rest[i];
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                idx[0] = y;
                idx[1] = x;
                if (shape.size() > 2) idx[2] = bands[c];
                vals[(y * W + x) * C + c] = t.at(idx);
            }
    const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
    const double lo = *mn, range = *mx - *mn;
    std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (double v : vals) {
        const long q = range > 0.0 ? std::lround((v - lo) / range * 255.0) : 128;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0L, 255L))));
    }
    return out;
}

void write_image_preview(const DenseTensor& t, const std::string& path, const SliceSpec& slice) {
    write_file(path, encode_preview(t, slice));
}

// ---------------------------------------------------------------------------
// Synthetic data

static void binomial_smooth(std::span<double> row) {
    static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    const std::size_t n = row.size();
    std::vector<double> src(row.begin(), row.end());
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int o = -2; o <= 2; ++o) {
            const auto j = std::clamp<long>(static_cast<long>(i) + o, 0, static_cast<long>(n) - 1);
            s += k[o + 2] * src[static_cast<std::size_t>(j)];
        }
        row[i] = s;
    }
}

SynthResult synth_lowrank(const Shape& shape, std::size_t rank, bool smooth, std::uint64_t seed) {
    if (shape.empty()) throw StructuralError("shape must have at least one axis");
    if (rank == 0) throw StructuralError("rank must be positive");
    SynthResult res;
    res.rank_exceeds_dims = rank > *std::min_element(shape.begin(), shape.end());
    RngStream rng(seed, "noise");
    res.factors = FactorMatrices(rank, shape);
    for (auto& U : res.factors.factors)
        for (std::size_t r = 0; r < rank; ++r) {
            auto row = U.row(r);
            for (auto& v : row) v = rng.normal();
            if (smooth) binomial_smooth(row);
            const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
            const double lo = *mn, range = *mx - *mn;
            for (auto& v : row) v = range > 0.0 ? (v - lo) / range : 1.0;
        }
    DenseTensor t = cp_reconstruct(res.factors);
    double mx = 0.0;
    for (double v : t.values()) mx = std::max(mx, v);
    if (mx > 0.0) {
        for (auto& v : t.values()) v /= mx;
        const double s = std::pow(mx, -1.0 / static_cast<double>(shape.size()));
        for (auto& U : res.factors.factors)
            for (auto& v : U.data) v *= s;
    }
    res.tensor = std::move(t);
    return res;
}

// ---------------------------------------------------------------------------
// Noise

NoiseSpec NoiseSpec::from_case(int id) {
    NoiseSpec s;
    s.case_id = id;
    switch (id) {
    case 1:
        s.sigma = 0.2;
        break;
    case 5:
        s.stripe_band_fraction = 0.4;
        s.stripe_column_fraction = 0.1;
        [[fallthrough]];
    case 3:
        s.dead_lines = true;
        s.sigma = 0.1;
        s.sparse_rate = 0.1;
        break;
    case 4:
        s.stripe_band_fraction = 0.4;
        s.stripe_column_fraction = 0.1;
        [[fallthrough]];
    case 2:
        s.sigma = 0.1;
        s.sparse_rate = 0.1;
        break;
    default:
        throw StructuralError("noise case must be 1..5");
    }
    return s;
}

void NoiseSpec::validate() const {
    if (!(sigma >= 0.0)) throw StructuralError("noise sigma must be >= 0");
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(sparse_rate) || !unit(stripe_band_fraction) || !unit(stripe_column_fraction))
        throw StructuralError("noise rates must lie in [0, 1]");
    if (!(stripe_amplitude >= 0.0)) throw StructuralError("stripe amplitude must be >= 0");
}

// Distinct picks from [0, n) by a partial Fisher-Yates shuffle.
static std::vector<std::size_t> choose(std::size_t n, std::size_t k, RngStream& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

NoisyResult apply_noise(const DenseTensor& t, const NoiseSpec& spec, std::uint64_t seed) {
    spec.validate();
    NoisyResult res{t, std::vector<std::uint8_t>(t.size(), 0)};
    RngStream rng(seed, "noise", 1);
    auto& v = res.tensor.values();
    if (spec.sigma > 0.0)
        for (auto& x : v) x += spec.sigma * rng.normal();
    if (spec.sparse_rate > 0.0)
        for (std::size_t i = 0; i < v.size(); ++i)
            if (rng.uniform() < spec.sparse_rate) {
                v[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
                res.sparse[i] = 1;
            }

    const bool lines = spec.dead_lines ||
                       (spec.stripe_band_fraction > 0.0 && spec.stripe_column_fraction > 0.0);
    if (lines) {
        const Shape& s = t.shape();
        if (s.size() < 2) throw StructuralError("line noise needs at least two axes");
        const std::size_t H = s[0], W = s[1], B = s.size() > 2 ? s[2] : 1;
        const std::size_t tail = t.size() / (H * W * B);
        auto line = [&](std::size_t col, std::size_t band, auto&& fn) {
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t r = 0; r < tail; ++r) {
                    const std::size_t i = ((y * W + col) * B + band) * tail + r;
                    fn(v[i]);
                    res.sparse[i] = 1;
                }
        };
        if (spec.dead_lines)
            for (std::size_t b = 0; b < B; ++b)
                for (auto col : choose(W, spec.dead_lines_per_band, rng))
                    line(col, b, [](double& x) { x = 0.0; });
        if (spec.stripe_band_fraction > 0.0 && spec.stripe_column_fraction > 0.0) {
            const auto nb = static_cast<std::size_t>(std::llround(spec.stripe_band_fraction * B));
            const auto nc = static_cast<std::size_t>(std::llround(spec.stripe_column_fraction * W));
            for (auto b : choose(B, nb, rng))
                for (auto col : choose(W, nc, rng)) {
                    const double off = rng.uniform(-spec.stripe_amplitude, spec.stripe_amplitude);
                    line(col, b, [off](double& x) { x += off; });
                }
        }
    }
    if (spec.clamp)
        for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return res;
}

PointCloud sphere_points(std::size_t n, double radius, std::uint64_t seed) {
    RngStream rng(seed, "noise");
    PointCloud pts;
    pts.reserve(n);
    while (pts.size() < n) {
        Point3 p{rng.normal(), rng.normal(), rng.normal()};
        const double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (len < 1e-12) continue;
        for (auto& c : p) c *= radius / len;
        pts.push_back(p);
    }
    return pts;
}

ObservationMask sample_mask(const Shape& shape, double sr, std::uint64_t seed) {
    if (!(sr >= 0.0 && sr <= 1.0)) throw StructuralError("sampling rate must lie in [0, 1]");
    RngStream rng(seed, "mask");
    std::vector<std::uint8_t> bits(shape_size(shape));
    for (auto& b : bits) b = rng.uniform() < sr ? 1 : 0;
    return ObservationMask(shape, std::move(bits));
}

Shape parse_shape(const std::string& text) {
    Shape s;
    // getline drops a trailing empty token, so "3x" needs its own check.
    if (!text.empty() && text.back() == 'x') throw StructuralError("bad shape '" + text + "'");
    std::istringstream in(text);
    for (std::string tok; std::getline(in, tok, 'x');) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0)
            throw StructuralError("bad shape '" + text + "'");
        s.push_back(v);
    }
    if (s.empty()) throw StructuralError("bad shape '" + text + "'");
    return s;
}

} // namespace cppruner
