#ifndef STOPCAL_FEATURES_HPP
#define STOPCAL_FEATURES_HPP

#include <filesystem>
#include <span>
#include <vector>

#include "stopcal/common.hpp"
#include "stopcal/trace.hpp"

namespace stopcal {

// Linear projection fitted by PCA. Immutable after fit; safe to share.
struct PcaModel {
    std::vector<double> mean;         // length input_dim
    Matrix components;                // output_dim x input_dim, rows orthonormal
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<double> explained_variance;  // non-increasing, non-negative
};

struct SmoothingSpec {
    std::size_t window = 10;
};

// Top-d principal axes of the sample covariance (1/(N-1) normalization),
// computed with a cyclic Jacobi eigendecomposition. Deterministic: each
// component's largest-magnitude coordinate is made positive.
PcaModel fit_pca(const Matrix& rows, std::size_t d);

std::vector<double> project(const PcaModel& model, std::span<const float> x);
std::vector<double> project(const PcaModel& model, std::span<const double> x);

// Trailing (causal) window mean: out[t] = mean(scores[max(0,t-w+1) .. t]).
std::vector<double> smooth_scores(std::span<const double> scores, const SmoothingSpec& spec);

// Collects every step embedding of the set into an N x D matrix.
Matrix gather_step_matrix(const TraceSet& set);

// Binary container (magic TPCA): version, D, d, mean, components row-major,
// explained variance. 32-bit floats like the trace sidecar.
void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

// Eigendecomposition of a symmetric matrix, exposed for reuse in tests and
// diagnostics. Returns eigenvalues (descending) and matching eigenvectors as
// rows of the second output.
void jacobi_eigen_sym(const Matrix& sym, std::vector<double>& eigenvalues, Matrix& eigenvectors);

}  // namespace stopcal

#endif
