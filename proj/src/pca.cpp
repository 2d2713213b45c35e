#include "capsforge/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capsforge {

namespace {

double offdiag_frobenius(const std::vector<double>& a, std::size_t d) {
    double sum = 0.0;
    for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q)
            if (p != q) sum += a[p * d + q] * a[p * d + q];
    return std::sqrt(sum);
}

}  // namespace

void jacobi_eigen(std::vector<double> a, std::size_t d, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors) {
    if (a.size() != d * d) throw DimensionError("jacobi_eigen: matrix is not " + std::to_string(d) + "^2");
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;

    constexpr double kTol = 1e-10;
    constexpr int kMaxSweeps = 100;
    int sweep = 0;
    while (offdiag_frobenius(a, d) >= kTol) {
        if (++sweep > kMaxSweeps)
            throw NumericError("jacobi_eigen: no convergence after " + std::to_string(kMaxSweeps) +
                               " sweeps (off-diagonal " + std::to_string(offdiag_frobenius(a, d)) + ")");
        for (std::size_t p = 0; p + 1 < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (apq == 0.0) continue;
                const double app = a[p * d + p], aqq = a[q * d + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = v[k * d + p], vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x * d + x] > a[y * d + y]; });
    eigenvalues.resize(d);
    eigenvectors.assign(d * d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const std::size_t col = order[r];
        eigenvalues[r] = a[col * d + col];
        for (std::size_t k = 0; k < d; ++k) eigenvectors[r * d + k] = v[k * d + col];
    }
}

PcaResult pca_project(const std::vector<double>& data, std::size_t n, std::size_t in_dim,
                      std::size_t out_dim) {
    if (data.size() != n * in_dim)
        throw DimensionError("pca_project: " + std::to_string(data.size()) + " values do not fill " +
                             std::to_string(n) + "x" + std::to_string(in_dim));
    if (out_dim == 0 || out_dim > in_dim)
        throw ContractError("pca_project: out_dim " + std::to_string(out_dim) + " outside [1," +
                            std::to_string(in_dim) + "]");
    if (n < out_dim)
        throw ContractError("pca_project: need at least " + std::to_string(out_dim) + " rows, got " +
                            std::to_string(n));

    PcaResult res;
    res.in_dim = in_dim;
    res.out_dim = out_dim;
    res.mean.assign(in_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < in_dim; ++j) res.mean[j] += data[i * in_dim + j];
    for (double& m : res.mean) m /= static_cast<double>(n);

    std::vector<double> centred(n * in_dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < in_dim; ++j) centred[i * in_dim + j] = data[i * in_dim + j] - res.mean[j];

    std::vector<double> cov(in_dim * in_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < in_dim; ++p) {
            const double cp = centred[i * in_dim + p];
            for (std::size_t q = 0; q < in_dim; ++q) cov[p * in_dim + q] += cp * centred[i * in_dim + q];
        }
    for (double& cval : cov) cval /= static_cast<double>(n);
    double total = 0.0;
    for (std::size_t j = 0; j < in_dim; ++j) total += cov[j * in_dim + j];

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, in_dim, eigvals, eigvecs);

    res.components.resize(out_dim * in_dim);
    res.eigenvalues.assign(eigvals.begin(), eigvals.begin() + static_cast<long>(out_dim));
    for (std::size_t r = 0; r < out_dim; ++r) {
        // sign rule: largest-magnitude entry positive (first index on ties)
        std::size_t pivot = 0;
        for (std::size_t j = 1; j < in_dim; ++j)
            if (std::abs(eigvecs[r * in_dim + j]) > std::abs(eigvecs[r * in_dim + pivot])) pivot = j;
        const double flip = eigvecs[r * in_dim + pivot] < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < in_dim; ++j) res.components[r * in_dim + j] = flip * eigvecs[r * in_dim + j];
    }
    res.explained.resize(out_dim);
    for (std::size_t r = 0; r < out_dim; ++r)
        res.explained[r] = total > 0.0 ? res.eigenvalues[r] / total : 0.0;

    res.projected.assign(n * out_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < out_dim; ++r) {
            double acc = 0.0;
            for (std::size_t j = 0; j < in_dim; ++j)
                acc += centred[i * in_dim + j] * res.components[r * in_dim + j];
            res.projected[i * out_dim + r] = acc;
        }
    res.sphereized = res.projected;
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t r = 0; r < out_dim; ++r) {
            const double x = res.sphereized[i * out_dim + r];
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t r = 0; r < out_dim; ++r) res.sphereized[i * out_dim + r] /= norm;
    }
    return res;
}

}  // namespace capsforge
