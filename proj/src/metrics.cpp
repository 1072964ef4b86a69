#include "cppruner/metrics.hpp"

#include "cppruner/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cppruner {

double psnr(const DenseTensor& ref, const DenseTensor& est, double peak) {
    require_same_shape(ref, est);
    if (!(peak > 0.0)) throw StructuralError("psnr peak must be positive");
    double se = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = ref[i] - est[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(ref.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double nrmse(const DenseTensor& ref, const DenseTensor& est) {
    require_same_shape(ref, est);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = ref[i] - est[i];
        num += d * d;
        den += ref[i] * ref[i];
    }
    if (den == 0.0) throw NumericError("nrmse undefined for a zero reference");
    return std::sqrt(num / den);
}

namespace {

std::vector<double> gaussian_kernel(std::size_t n, double sigma) {
    std::vector<double> w(n);
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) - c;
        w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    }
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= s;
    return w;
}

// Valid-mode separable filtering of an h x w image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
    const std::size_t n = k.size();
    const std::size_t oh = h - n + 1, ow = w - n + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < n; ++t) s += k[t] * img[i * w + j + t];
            rows[i * ow + j] = s;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < n; ++t) s += k[t] * rows[(i + t) * ow + j];
            out[i * ow + j] = s;
        }
    return out;
}

double ssim_slice(const std::vector<double>& x, const std::vector<double>& y, std::size_t h,
                  std::size_t w, const std::vector<double>& k, double c1, double c2) {
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, k);
    const auto my = filter_valid(y, h, w, k);
    const auto mxx = filter_valid(xx, h, w, k);
    const auto myy = filter_valid(yy, h, w, k);
    const auto mxy = filter_valid(xy, h, w, k);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

} // namespace

double ssim(const DenseTensor& ref, const DenseTensor& est, const SsimOptions& opt) {
    require_same_shape(ref, est);
    const auto& shape = ref.shape();
    if (shape.size() < 2 || shape[0] < opt.window || shape[1] < opt.window)
        throw StructuralError("ssim needs both image axes at least as large as the window");
    const std::size_t h = shape[0], w = shape[1];
    const std::size_t slices = ref.size() / (h * w);
    const auto k = gaussian_kernel(opt.window, opt.sigma);
    const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2);
    const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2);

    std::vector<double> scores(slices);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(slices); ++s) {
        std::vector<double> x(h * w), y(h * w);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t flat = (i * w + j) * slices + static_cast<std::size_t>(s);
                x[i * w + j] = ref[flat];
                y[i * w + j] = est[flat];
            }
        scores[s] = ssim_slice(x, y, h, w, k, c1, c2);
    }
    return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(slices);
}

void normalize_by_reference(DenseTensor& ref, DenseTensor& est) {
    require_same_shape(ref, est);
    const auto [lo, hi] = std::minmax_element(ref.values().begin(), ref.values().end());
    const double a = *lo, range = *hi - *lo;
    if (range == 0.0) return;
    for (auto& v : ref.values()) v = (v - a) / range;
    for (auto& v : est.values()) v = (v - a) / range;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw StructuralError("chamfer needs nonempty point sets");
    std::vector<double> da(a.size()), db(b.size());
    kernels::parallel::nearest_distances(a, b, da);
    kernels::parallel::nearest_distances(b, a, db);
    const double ma = std::accumulate(da.begin(), da.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(db.begin(), db.end(), 0.0) / static_cast<double>(b.size());
    return 0.5 * (ma + mb);
}

double f_score(const PointCloud& pred, const PointCloud& gt, double thr) {
    if (pred.empty() || gt.empty()) throw StructuralError("f_score needs nonempty point sets");
    if (!(thr > 0.0)) throw StructuralError("f_score threshold must be positive");
    std::vector<double> dp(pred.size()), dg(gt.size());
    kernels::parallel::nearest_distances(pred, gt, dp);
    kernels::parallel::nearest_distances(gt, pred, dg);
    const auto within = [thr](const std::vector<double>& d) {
        return static_cast<double>(std::count_if(d.begin(), d.end(),
                                                 [thr](double v) { return v <= thr; })) /
               static_cast<double>(d.size());
    };
    const double precision = within(dp);
    const double recall = within(dg);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double bounding_box_diagonal(const PointCloud& pts) {
    if (pts.empty()) throw StructuralError("bounding box of an empty set");
    Point3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += (hi[a] - lo[a]) * (hi[a] - lo[a]);
    return std::sqrt(s);
}

} // namespace cppruner
