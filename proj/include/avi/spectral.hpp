#pragma once

// Spectral partitioning of a dense similarity matrix: normalized Laplacian,
// eigengap ("elbow") choice of k, and a deterministic k-means on the
// row-normalized spectral embedding.

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace avi::spectral {

/// L = I - D^{-1/2} S D^{-1/2}, with D the row sums of S. Rows with zero
/// degree contribute an identity row.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> normalized_laplacian(
    const Eigen::MatrixBase<Derived>& similarity) {
    using Scalar = typename Derived::Scalar;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const auto n = similarity.rows();
    const Vector degree = similarity.rowwise().sum();
    const Vector inv_sqrt = degree.unaryExpr([](Scalar d) { return d > Scalar(0) ? Scalar(1) / std::sqrt(d) : Scalar(0); });
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> lap =
        -(inv_sqrt.asDiagonal() * similarity.derived() * inv_sqrt.asDiagonal());
    lap.diagonal().array() += Scalar(1);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (degree[i] <= Scalar(0)) {
            lap.row(i).setZero();
            lap.col(i).setZero();
            lap(i, i) = Scalar(1);
        }
    }
    return lap;
}

/// Number of clusters by the largest successive eigenvalue gap.
/// `eigenvalues` ascending; candidates k in [k_min, min(k_max, n)] score
/// eigenvalues[k] - eigenvalues[k-1] (the gap after the k-th smallest).
/// With n < k_min every node is its own cluster (k = n). Ties pick the smaller k.
template <typename Derived>
int elbow_k(const Eigen::MatrixBase<Derived>& eigenvalues, int k_min = 3, int k_max = 8) {
    const int n = static_cast<int>(eigenvalues.size());
    if (n <= k_min) return n;
    const int hi = std::min(k_max, n);
    int best = k_min;
    auto best_gap = -std::numeric_limits<typename Derived::Scalar>::infinity();
    for (int k = k_min; k <= hi; ++k) {
        // with k == n there is no eigenvalue after the k-th; treat the gap as 0
        const auto gap = k < n ? eigenvalues[k] - eigenvalues[k - 1] : typename Derived::Scalar(0);
        if (gap > best_gap) {
            best_gap = gap;
            best = k;
        }
    }
    return best;
}

/// Lloyd's k-means with farthest-first seeding. The first centre is row
/// `seed % n`; every next centre is the row farthest from all chosen ones
/// (lowest index on ties). Fully deterministic.
template <typename Derived>
std::vector<int> kmeans_farthest_first(const Eigen::MatrixBase<Derived>& points, int k, unsigned seed = 0,
                                       int max_iterations = 100) {
    using Scalar = typename Derived::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const auto n = points.rows();
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    if (n == 0 || k <= 1) return labels;
    k = std::min<int>(k, static_cast<int>(n));

    Matrix centres(k, points.cols());
    centres.row(0) = points.row(static_cast<Eigen::Index>(seed % static_cast<unsigned>(n)));
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nearest =
        (points.rowwise() - centres.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        Eigen::Index far = 0;
        nearest.maxCoeff(&far);
        centres.row(c) = points.row(far);
        nearest = nearest.cwiseMin((points.rowwise() - centres.row(c)).rowwise().squaredNorm());
    }

    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = iter == 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            (centres.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        if (!changed) break;
        for (int c = 0; c < k; ++c) {
            Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(points.cols());
            int count = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (labels[static_cast<std::size_t>(i)] == c) {
                    sum += points.row(i);
                    ++count;
                }
            }
            if (count > 0) centres.row(c) = sum / static_cast<Scalar>(count);  // empty clusters keep their centre
        }
    }
    return labels;
}

struct Partition {
    std::vector<int> labels;  // cluster index per row of S
    int k = 0;
    std::vector<double> eigenvalues;  // ascending
};

/// Full pipeline. Returns nullopt when the eigensolver does not converge.
template <typename Derived>
std::optional<Partition> partition(const Eigen::MatrixBase<Derived>& similarity, unsigned seed = 0, int k_min = 3,
                                   int k_max = 8) {
    using Scalar = typename Derived::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Partition out;
    const auto n = similarity.rows();
    if (n == 0) return out;
    const Matrix lap = normalized_laplacian(similarity);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(lap);
    if (solver.info() != Eigen::Success) return std::nullopt;
    const auto& values = solver.eigenvalues();
    out.eigenvalues.assign(values.data(), values.data() + values.size());
    out.k = elbow_k(values, k_min, k_max);
    Matrix embedding = solver.eigenvectors().leftCols(out.k);
    for (Eigen::Index i = 0; i < embedding.rows(); ++i) {
        const Scalar norm = embedding.row(i).norm();
        if (norm > Scalar(0)) embedding.row(i) /= norm;
    }
    out.labels = kmeans_farthest_first(embedding, out.k, seed);
    return out;
}

}  // namespace avi::spectral
