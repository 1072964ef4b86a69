#pragma once

#include "cppruner/kernels.hpp"
#include "cppruner/tensor.hpp"

namespace cppruner {

/// 10 log10(peak^2 / MSE); +infinity when the tensors are identical.
double psnr(const DenseTensor& ref, const DenseTensor& est, double peak = 1.0);

/// ||ref - est||_F / ||ref||_F.
double nrmse(const DenseTensor& ref, const DenseTensor& est);

/// Gaussian-window SSIM settings; the defaults are the usual 11x11, sigma 1.5.
struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over valid windows of each frontal slice (axes 0 and 1), averaged
/// over the remaining axes.
double ssim(const DenseTensor& ref, const DenseTensor& est, const SsimOptions& opt = {});

/// Affine map sending min(ref) -> 0 and max(ref) -> 1, applied to both tensors.
/// A constant reference leaves both unchanged.
void normalize_by_reference(DenseTensor& ref, DenseTensor& est);

/// Symmetric Chamfer distance: average of the two directed mean NN distances.
double chamfer(const PointCloud& a, const PointCloud& b);

/// Harmonic mean of precision and recall at distance threshold `thr`.
double f_score(const PointCloud& pred, const PointCloud& gt, double thr);

double bounding_box_diagonal(const PointCloud& pts);

/// The default F-score threshold: 1% of the ground-truth bounding-box diagonal.
inline double default_fscore_threshold(const PointCloud& gt) {
    return 0.01 * bounding_box_diagonal(gt);
}

} // namespace cppruner
