#include "cppruner/linalg.hpp"

#include "cppruner/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace cppruner {

std::vector<double> symmetric_eigenvalues(Matrix a, double tol, int max_sweeps) {
    const std::size_t n = a.rows;
    if (a.cols != n) throw StructuralError("eigenvalues need a square matrix");
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off < tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

std::vector<double> singular_values(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) throw NumericError("singular values of a non-finite matrix");
    if (m.rows == 0 || m.cols == 0) return {};

    // Gram of the shorter side: same nonzero spectrum, smaller eigenproblem.
    const bool wide = m.rows <= m.cols;
    const std::size_t n = wide ? m.rows : m.cols;
    const std::size_t k = wide ? m.cols : m.rows;
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                s += wide ? m(i, t) * m(j, t) : m(t, i) * m(t, j);
            g(i, j) = s;
            g(j, i) = s;
        }
    const double fro = m.frobenius_norm();
    auto ev = symmetric_eigenvalues(std::move(g), 1e-12 * fro, 100);

    const double floor = ev.empty() ? 0.0
                                    : static_cast<double>(std::max(n, k)) *
                                          std::numeric_limits<double>::epsilon() *
                                          std::max(0.0, ev.front());
    std::vector<double> sv(ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i)
        sv[i] = ev[i] > floor ? std::sqrt(ev[i]) : 0.0;
    return sv;
}

double schatten_p(const Matrix& m, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw StructuralError("schatten_p needs p in (0, 1]");
    double s = 0.0;
    for (double sigma : singular_values(m))
        if (sigma > 0.0) s += std::pow(sigma, p);
    return s;
}

std::size_t numerical_rank(const Matrix& m, double rel_tol) {
    const auto sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    return static_cast<std::size_t>(std::count_if(
        sv.begin(), sv.end(), [&](double s) { return s > rel_tol * sv.front(); }));
}

} // namespace cppruner
