#pragma once

#include <array>
#include <vector>

namespace cppruner {

using Point3 = std::array<double, 3>;
using PointCloud = std::vector<Point3>;

/// Similarity transform into the unit cube: p' = (p - center) * scale + 0.5.
struct PointNormalization {
    Point3 center{0.0, 0.0, 0.0};
    double scale = 1.0;

    Point3 apply(const Point3& p) const {
        return {(p[0] - center[0]) * scale + 0.5, (p[1] - center[1]) * scale + 0.5,
                (p[2] - center[2]) * scale + 0.5};
    }
    Point3 invert(const Point3& q) const {
        return {(q[0] - 0.5) / scale + center[0], (q[1] - 0.5) / scale + center[1],
                (q[2] - 0.5) / scale + center[2]};
    }
    PointCloud apply(const PointCloud& pts) const {
        PointCloud out;
        out.reserve(pts.size());
        for (const auto& p : pts) out.push_back(apply(p));
        return out;
    }

    /// Fits the bounding box of `pts` so its longest side spans [margin, 1 - margin].
    static PointNormalization fit(const PointCloud& pts, double margin = 0.1);
};

} // namespace cppruner
