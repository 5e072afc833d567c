#include "wildsort/synth.hpp"
#include "wildsort/rng.hpp"

#include <cmath>
#include <cstdio>

namespace wildsort {

namespace {

// Regular simplex with unit edge in R^(n-1), vertices as rows.
RowMatrix unit_simplex(std::size_t n) {
    const auto ni = static_cast<Eigen::Index>(n);
    if (n == 1) return RowMatrix::Zero(1, 0);
    // Standard basis vectors of R^n have pairwise distance sqrt(2) and lie in
    // the hyperplane orthogonal to the all-ones vector.
    Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(ni, ni);
    basis.rowwise() -= basis.colwise().mean();
    // Orthonormal basis of that hyperplane: QR of the centered vertices.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(ni, ni - 1);
    RowMatrix coords = basis * q;
    return coords / std::sqrt(2.0);
}

} // namespace

Fixture generate_fixture(const FixtureSpec& spec) {
    if (spec.n_clusters < 1 || spec.per_cluster_n < 1 || spec.dim < 1) {
        throw std::invalid_argument("fixture: counts must be >= 1");
    }
    if (!(spec.separation > 0.0)) throw std::invalid_argument("fixture: separation must be positive");
    if (spec.dim + 1 < spec.n_clusters) {
        throw std::invalid_argument("fixture: dim=" + std::to_string(spec.dim) + " cannot hold a simplex of " +
                                    std::to_string(spec.n_clusters) + " centroids");
    }
    if (spec.anisotropy && !(spec.anisotropy->first > 0.0 && spec.anisotropy->first <= spec.anisotropy->second)) {
        throw std::invalid_argument("fixture: anisotropy range must satisfy 0 < lo <= hi");
    }

    Rng rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto dim = static_cast<Eigen::Index>(spec.dim);
    const auto k = static_cast<Eigen::Index>(spec.n_clusters);

    const RowMatrix simplex = unit_simplex(spec.n_clusters) * spec.separation;
    RowMatrix centroids = RowMatrix::Zero(k, dim);
    if (k > 1) {
        // Random rotation: orthonormal columns from QR of a Gaussian matrix.
        Eigen::MatrixXd g(dim, k - 1);
        for (Eigen::Index i = 0; i < dim; ++i)
            for (Eigen::Index j = 0; j < k - 1; ++j) g(i, j) = gauss(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        const Eigen::MatrixXd frame = qr.householderQ() * Eigen::MatrixXd::Identity(dim, k - 1);
        centroids = simplex * frame.transpose();
    }

    RowMatrix scales = RowMatrix::Ones(k, dim);
    if (spec.anisotropy) {
        std::uniform_real_distribution<double> u(spec.anisotropy->first, spec.anisotropy->second);
        for (Eigen::Index c = 0; c < k; ++c)
            for (Eigen::Index j = 0; j < dim; ++j) scales(c, j) = u(rng);
    }

    const auto n = static_cast<Eigen::Index>(spec.n_clusters * spec.per_cluster_n);
    RowMatrix x(n, dim);
    std::vector<ItemRecord> items;
    items.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < spec.per_cluster_n; ++p, ++row) {
            for (Eigen::Index j = 0; j < dim; ++j) x(row, j) = centroids(c, j) + scales(c, j) * gauss(rng);
            char id[32];
            std::snprintf(id, sizeof id, "item_%06ld", static_cast<long>(row));
            items.push_back({id, "c" + std::to_string(c), std::nullopt});
        }
    }
    return Fixture{EmbeddingMatrix(std::move(items), std::move(x)), std::move(centroids)};
}

} // namespace wildsort
