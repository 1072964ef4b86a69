#include "cppruner/kernels.hpp"

#include "cppruner/error.hpp"
#include "cppruner/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cppruner::kernels {

namespace {

struct Layout {
    Shape shape;
    std::vector<std::size_t> strides;
    std::size_t total = 0;
};

Layout layout_of(const FactorMatrices& f) {
    Layout l;
    l.shape = f.shape();
    l.strides = row_major_strides(l.shape);
    l.total = shape_size(l.shape);
    return l;
}

inline void decode(std::size_t flat, const Layout& l, std::size_t* idx) {
    for (std::size_t d = 0; d < l.shape.size(); ++d) {
        idx[d] = flat / l.strides[d];
        flat %= l.strides[d];
    }
}

// Factor values regrouped so the R values of (axis d, index i) are contiguous.
struct Rows {
    std::size_t R = 0;
    std::vector<std::size_t> base;
    std::vector<double> data;

    explicit Rows(const FactorMatrices& f) : R(f.rank) {
        base.push_back(0);
        for (const auto& U : f.factors) base.push_back(base.back() + U.data.size());
        data.resize(base.back());
        for (std::size_t d = 0; d < f.factors.size(); ++d) {
            const Matrix& U = f.factors[d];
            for (std::size_t r = 0; r < U.rows; ++r)
                for (std::size_t i = 0; i < U.cols; ++i) data[base[d] + i * R + r] = U(r, i);
        }
    }
    const double* at(std::size_t d, std::size_t i) const { return data.data() + base[d] + i * R; }
};

// r outer, d inner; every path multiplies in this exact order.
inline double entry_value(const Rows& rows, std::size_t D, const std::size_t* idx,
                          const double** p) {
    for (std::size_t d = 0; d < D; ++d) p[d] = rows.at(d, idx[d]);
    double sum = 0.0;
    for (std::size_t r = 0; r < rows.R; ++r) {
        double prod = 1.0;
        for (std::size_t d = 0; d < D; ++d) prod *= p[d][r];
        sum += prod;
    }
    return sum;
}

// Steps a row-major multi-index; returns the slowest axis that changed.
inline std::size_t advance(std::size_t* idx, const Shape& shape) {
    for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) return d;
        idx[d] = 0;
    }
    return 0;
}

// Dense entries [begin, end). Products over the leading axes are cached per
// r, which gives the same rounding as entry_value.
void reconstruct_range(const Rows& rows, const Layout& l, std::size_t begin, std::size_t end,
                       double* out) {
    const std::size_t D = l.shape.size(), R = rows.R;
    std::vector<std::size_t> idx(D);
    decode(begin, l, idx.data());
    // pre[d * R + r] = product of axes < d.
    std::vector<double> pre(D * R, 1.0);
    auto refresh = [&](std::size_t from) {
        for (std::size_t d = std::max<std::size_t>(from, 1); d < D; ++d) {
            const double* row = rows.at(d - 1, idx[d - 1]);
            for (std::size_t r = 0; r < R; ++r) pre[d * R + r] = pre[(d - 1) * R + r] * row[r];
        }
    };
    refresh(1);
    const double* last_pre = pre.data() + (D - 1) * R;
    for (std::size_t k = begin; k < end; ++k) {
        const double* row = rows.at(D - 1, idx[D - 1]);
        double sum = 0.0;
        for (std::size_t r = 0; r < R; ++r) sum += last_pre[r] * row[r];
        out[k - begin] = sum;
        const std::size_t changed = advance(idx.data(), l.shape);
        if (changed + 1 < D) refresh(changed + 1);
    }
}

// Adds the gradient contribution of entries [begin, end) into acc, laid out
// like Rows::data.
void accumulate_factor_grads(const Rows& rows, const Layout& l, std::span<const std::size_t> flat,
                             std::span<const double> up, std::size_t begin, std::size_t end,
                             double* acc) {
    const std::size_t D = l.shape.size();
    const std::size_t R = rows.R;
    std::vector<std::size_t> idx(D);
    std::vector<const double*> p(D);
    std::vector<double> prefix(D + 1);
    std::vector<double*> a(D);
    if (flat.empty()) decode(begin, l, idx.data());
    for (std::size_t k = begin; k < end; ++k) {
        if (!flat.empty()) decode(flat[k], l, idx.data());
        const double g = up[k];
        if (g != 0.0) {
            for (std::size_t d = 0; d < D; ++d) {
                p[d] = rows.at(d, idx[d]);
                a[d] = acc + rows.base[d] + idx[d] * R;
            }
            for (std::size_t r = 0; r < R; ++r) {
                prefix[0] = 1.0;
                for (std::size_t d = 0; d < D; ++d) prefix[d + 1] = prefix[d] * p[d][r];
                double suffix = g;
                for (std::size_t d = D; d-- > 0;) {
                    a[d][r] += prefix[d] * suffix;
                    suffix *= p[d][r];
                }
            }
        }
        if (flat.empty()) advance(idx.data(), l.shape);
    }
}

// Full-grid gradient below axis d for the block starting at `offset`.
// `pre` holds the products of the axes above d; returns into `sum` the
// upstream-weighted products of the axes from d down.
void grid_grads_rec(const Rows& rows, const Layout& l, std::span<const double> up, std::size_t d,
                    std::size_t offset, const double* pre, double* sum, double* acc,
                    std::vector<std::vector<double>>& scratch) {
    const std::size_t D = l.shape.size(), R = rows.R, n = l.shape[d];
    std::fill(sum, sum + R, 0.0);
    if (d + 1 == D) {
        for (std::size_t i = 0; i < n; ++i) {
            const double g = up[offset + i];
            const double* row = rows.at(d, i);
            double* a = acc + rows.base[d] + i * R;
            for (std::size_t r = 0; r < R; ++r) {
                a[r] += pre[r] * g;
                sum[r] += row[r] * g;
            }
        }
        return;
    }
    double* next_pre = scratch[2 * d].data();
    double* below = scratch[2 * d + 1].data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = rows.at(d, i);
        for (std::size_t r = 0; r < R; ++r) next_pre[r] = pre[r] * row[r];
        grid_grads_rec(rows, l, up, d + 1, offset + i * l.strides[d], next_pre, below, acc, scratch);
        double* a = acc + rows.base[d] + i * R;
        for (std::size_t r = 0; r < R; ++r) {
            a[r] += pre[r] * below[r];
            sum[r] += row[r] * below[r];
        }
    }
}

void add_rows_to(const Rows& rows, const std::vector<double>& acc, FactorMatrices& grads) {
    for (std::size_t d = 0; d < grads.factors.size(); ++d) {
        Matrix& G = grads.factors[d];
        for (std::size_t r = 0; r < G.rows; ++r)
            for (std::size_t i = 0; i < G.cols; ++i) G(r, i) += acc[rows.base[d] + i * rows.R + r];
    }
}

void check_grads_layout(const FactorMatrices& f, const FactorMatrices& grads) {
    if (grads.rank != f.rank || grads.factors.size() != f.factors.size())
        throw StructuralError("gradient factors do not match factor layout");
    for (std::size_t d = 0; d < f.factors.size(); ++d)
        if (grads.factors[d].data.size() != f.factors[d].data.size())
            throw StructuralError("gradient factor size mismatch");
}

struct CellGrid {
    Point3 lo{};
    double cell = 1.0;
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::vector<std::size_t> start;  // CSR offsets, size cells + 1
    std::vector<std::size_t> items;  // reference indices bucketed by cell

    std::size_t cell_of(double v, int axis) const {
        double c = std::floor((v - lo[axis]) / cell);
        if (c < 0) c = 0;
        const double hi = static_cast<double>(dims[axis] - 1);
        if (c > hi) c = hi;
        return static_cast<std::size_t>(c);
    }
    std::size_t linear(std::size_t x, std::size_t y, std::size_t z) const {
        return (x * dims[1] + y) * dims[2] + z;
    }
};

CellGrid build_grid(const PointCloud& refs) {
    CellGrid g;
    Point3 lo = refs[0], hi = refs[0];
    for (const auto& p : refs)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    double extent = 0.0;
    for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
    const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(refs.size())));
    g.cell = extent > 0.0 ? extent / per_axis : 1.0;
    g.lo = lo;
    for (int a = 0; a < 3; ++a)
        g.dims[a] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor((hi[a] - lo[a]) / g.cell)) + 1);
    const std::size_t cells = g.dims[0] * g.dims[1] * g.dims[2];
    std::vector<std::size_t> counts(cells + 1, 0);
    std::vector<std::size_t> cell_of_ref(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& p = refs[i];
        cell_of_ref[i] = g.linear(g.cell_of(p[0], 0), g.cell_of(p[1], 1), g.cell_of(p[2], 2));
        ++counts[cell_of_ref[i] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) counts[c + 1] += counts[c];
    g.start = counts;
    g.items.resize(refs.size());
    std::vector<std::size_t> fill(g.start.begin(), g.start.end() - 1);
    for (std::size_t i = 0; i < refs.size(); ++i) g.items[fill[cell_of_ref[i]]++] = i;
    return g;
}

inline double dist2(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

double nearest_in_grid(const CellGrid& g, const PointCloud& refs, const Point3& q) {
    const std::array<long, 3> c{static_cast<long>(g.cell_of(q[0], 0)),
                                static_cast<long>(g.cell_of(q[1], 1)),
                                static_cast<long>(g.cell_of(q[2], 2))};
    const long max_ring =
        static_cast<long>(std::max({g.dims[0], g.dims[1], g.dims[2]}));
    double best = std::numeric_limits<double>::infinity();
    for (long ring = 0; ring <= max_ring; ++ring) {
        for (long dx = -ring; dx <= ring; ++dx) {
            const long x = c[0] + dx;
            if (x < 0 || x >= static_cast<long>(g.dims[0])) continue;
            for (long dy = -ring; dy <= ring; ++dy) {
                const long y = c[1] + dy;
                if (y < 0 || y >= static_cast<long>(g.dims[1])) continue;
                for (long dz = -ring; dz <= ring; ++dz) {
                    if (std::max({std::labs(dx), std::labs(dy), std::labs(dz)}) != ring) continue;
                    const long z = c[2] + dz;
                    if (z < 0 || z >= static_cast<long>(g.dims[2])) continue;
                    const std::size_t cell = g.linear(x, y, z);
                    for (std::size_t k = g.start[cell]; k < g.start[cell + 1]; ++k)
                        best = std::min(best, dist2(q, refs[g.items[k]]));
                }
            }
        }
        // Anything in ring+1 or beyond is at least ring * cell away.
        const double bound = static_cast<double>(ring) * g.cell;
        if (best <= bound * bound) break;
    }
    return best;
}

void check_points(const PointCloud& queries, const PointCloud& refs, std::span<double> out) {
    if (refs.empty()) throw StructuralError("reference point set is empty");
    if (out.size() != queries.size()) throw StructuralError("output size mismatch");
}

} // namespace

namespace serial {

void cp_reconstruct(const FactorMatrices& f, std::span<double> out) {
    const Layout l = layout_of(f);
    if (out.size() != l.total) throw StructuralError("output size mismatch");
    reconstruct_range(Rows(f), l, 0, l.total, out.data());
}

void cp_entries(const FactorMatrices& f, std::span<const std::size_t> flat,
                std::span<double> out) {
    const Layout l = layout_of(f);
    if (out.size() != flat.size()) throw StructuralError("output size mismatch");
    const Rows rows(f);
    std::vector<std::size_t> idx(l.shape.size());
    std::vector<const double*> p(l.shape.size());
    for (std::size_t k = 0; k < flat.size(); ++k) {
        decode(flat[k], l, idx.data());
        out[k] = entry_value(rows, l.shape.size(), idx.data(), p.data());
    }
}

void cp_factor_gradients(const FactorMatrices& f, std::span<const std::size_t> flat,
                         std::span<const double> upstream, FactorMatrices& grads) {
    check_grads_layout(f, grads);
    const Layout l = layout_of(f);
    const std::size_t n = flat.empty() ? l.total : flat.size();
    if (upstream.size() != n) throw StructuralError("upstream size mismatch");
    const Rows rows(f);
    std::vector<double> acc(rows.data.size(), 0.0);
    accumulate_factor_grads(rows, l, flat, upstream, 0, n, acc.data());
    add_rows_to(rows, acc, grads);
}

void nearest_distances(const PointCloud& queries, const PointCloud& refs,
                       std::span<double> out) {
    check_points(queries, refs, out);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& r : refs) best = std::min(best, dist2(queries[i], r));
        out[i] = std::sqrt(best);
    }
}

} // namespace serial

namespace parallel {

void cp_reconstruct(const FactorMatrices& f, std::span<double> out) {
    const Layout l = layout_of(f);
    if (out.size() != l.total) throw StructuralError("output size mismatch");
    const Rows rows(f);
    const std::size_t chunks = cppruner::parallel::chunk_count(l.total);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * cppruner::parallel::kChunk;
        const std::size_t end = std::min(l.total, begin + cppruner::parallel::kChunk);
        reconstruct_range(rows, l, begin, end, out.data() + begin);
    }
}

void cp_entries(const FactorMatrices& f, std::span<const std::size_t> flat,
                std::span<double> out) {
    const Layout l = layout_of(f);
    if (out.size() != flat.size()) throw StructuralError("output size mismatch");
    const Rows rows(f);
#pragma omp parallel
    {
        std::vector<std::size_t> idx(l.shape.size());
        std::vector<const double*> p(l.shape.size());
#pragma omp for schedule(static)
        for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(flat.size()); ++k) {
            decode(flat[k], l, idx.data());
            out[k] = entry_value(rows, l.shape.size(), idx.data(), p.data());
        }
    }
}

void cp_factor_gradients(const FactorMatrices& f, std::span<const std::size_t> flat,
                         std::span<const double> upstream, FactorMatrices& grads) {
    check_grads_layout(f, grads);
    const Layout l = layout_of(f);
    const std::size_t n = flat.empty() ? l.total : flat.size();
    if (upstream.size() != n) throw StructuralError("upstream size mismatch");
    const Rows rows(f);
    std::vector<double> acc(rows.data.size(), 0.0);
    if (flat.empty() && l.shape.size() > 1) {
        // One chunk per index of the first axis, each walking its block
        // recursively instead of entry by entry.
        const std::size_t D = l.shape.size(), R = rows.R;
        cppruner::parallel::chunked_accumulate(
            l.shape[0], acc,
            [&](std::size_t begin, std::size_t end, std::span<double> part) {
                std::vector<std::vector<double>> scratch(2 * D, std::vector<double>(R));
                std::vector<double> below(R);
                for (std::size_t i = begin; i < end; ++i) {
                    const double* row = rows.at(0, i);
                    grid_grads_rec(rows, l, upstream, 1, i * l.strides[0], row, below.data(),
                                   part.data(), scratch);
                    double* a = part.data() + i * R;
                    for (std::size_t r = 0; r < R; ++r) a[r] += below[r];
                }
            },
            1);
        add_rows_to(rows, acc, grads);
        return;
    }
    // Chunk size depends only on n; caps the number of partial buffers.
    const std::size_t chunk = std::max(cppruner::parallel::kChunk, (n + 255) / 256);
    cppruner::parallel::chunked_accumulate(
        n, acc,
        [&](std::size_t begin, std::size_t end, std::span<double> part) {
            accumulate_factor_grads(rows, l, flat, upstream, begin, end, part.data());
        },
        chunk);
    add_rows_to(rows, acc, grads);
}

void nearest_distances(const PointCloud& queries, const PointCloud& refs,
                       std::span<double> out) {
    check_points(queries, refs, out);
    const CellGrid g = build_grid(refs);
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(queries.size()); ++i)
        out[i] = std::sqrt(nearest_in_grid(g, refs, queries[i]));
}

} // namespace parallel

} // namespace cppruner::kernels
