#pragma once

#include <vector>

#include "capsforge/common.hpp"

namespace capsforge {

struct PcaResult {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<double> mean;        // [in_dim]
    std::vector<double> components;  // [out_dim][in_dim] row-major, unit length
    std::vector<double> eigenvalues; // descending, out_dim entries
    std::vector<double> explained;   // eigenvalue / total variance, per component
    std::vector<double> projected;   // [n][out_dim]
    std::vector<double> sphereized;  // projected rows scaled to unit norm (zero rows stay)
};

// Mean-centres, diagonalizes the covariance (population denominator n) by
// cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
// 1e-10, and projects onto the leading out_dim eigenvectors.  Each component's
// largest-magnitude entry is made positive so signs are reproducible.
PcaResult pca_project(const std::vector<double>& data, std::size_t n, std::size_t in_dim,
                      std::size_t out_dim = 3);

// Full eigen-decomposition of a symmetric matrix, eigenvalues descending;
// eigenvectors returned as rows.  Exposed for the analysis pipeline and tests.
void jacobi_eigen(std::vector<double> matrix, std::size_t d, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors);

}  // namespace capsforge
