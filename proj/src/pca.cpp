#include "wildsort/pca.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace wildsort {

namespace {

// Fix the sign of each axis so its largest-magnitude entry is positive
// (first such entry on exact ties).
void normalize_signs(RowMatrix& components) {
    for (Eigen::Index r = 0; r < components.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < components.cols(); ++c) {
            if (std::abs(components(r, c)) > std::abs(components(r, best))) best = c;
        }
        if (components(r, best) < 0.0) components.row(r) *= -1.0;
    }
}

// Replace a degenerate axis with a unit vector orthogonal to the previous ones.
Vector orthogonal_complement(const RowMatrix& previous, Eigen::Index count) {
    const Eigen::Index d = previous.cols();
    for (Eigen::Index e = 0; e < d; ++e) {
        Vector v = Vector::Unit(d, e);
        for (Eigen::Index r = 0; r < count; ++r) {
            v -= previous.row(r).dot(v) * previous.row(r).transpose();
        }
        const double norm = v.norm();
        if (norm > 1e-6) return v / norm;
    }
    throw Error("pca: cannot complete orthonormal basis");
}

} // namespace

PcaModel pca_fit(const EmbeddingMatrix& m, std::size_t q) {
    const std::size_t n = m.n();
    const std::size_t d = m.d();
    if (n < 2) {
        throw std::invalid_argument("pca_fit needs N >= 2 (got " + std::to_string(n) + ")");
    }
    const std::size_t q_max = std::min(n - 1, d);
    if (q < 1 || q > q_max) {
        throw std::invalid_argument("pca_fit: q=" + std::to_string(q) + " outside [1, " +
                                    std::to_string(q_max) + "]");
    }

    PcaModel model;
    model.mean = m.vectors().colwise().mean().transpose();
    const RowMatrix centered = m.vectors().rowwise() - model.mean.transpose();
    const double denom = static_cast<double>(n - 1);
    const auto qi = static_cast<Eigen::Index>(q);

    model.components.resize(qi, static_cast<Eigen::Index>(d));
    model.explained_variance.resize(qi);

    if (d <= n) {
        const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        if (solver.info() != Eigen::Success) {
            throw Error("pca: covariance eigensolver did not converge");
        }
        const auto& values = solver.eigenvalues();
        const auto& vectors = solver.eigenvectors();
        const Eigen::Index last = values.size() - 1;
        for (Eigen::Index r = 0; r < qi; ++r) {
            model.explained_variance(r) = std::max(0.0, values(last - r));
            model.components.row(r) = vectors.col(last - r).transpose();
        }
        model.total_variance = std::max(0.0, values.sum());
    } else {
        // Fewer samples than dimensions: diagonalize the N x N Gram matrix
        // and lift its eigenvectors back to feature space.
        const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
        if (solver.info() != Eigen::Success) {
            throw Error("pca: gram eigensolver did not converge");
        }
        const auto& values = solver.eigenvalues();
        const auto& vectors = solver.eigenvectors();
        const Eigen::Index last = values.size() - 1;
        const double scale = std::max(values(last), 1e-300);
        for (Eigen::Index r = 0; r < qi; ++r) {
            const double lambda = std::max(0.0, values(last - r));
            model.explained_variance(r) = lambda;
            Vector axis = centered.transpose() * vectors.col(last - r);
            double norm = axis.norm();
            if (lambda <= 1e-12 * scale || norm == 0.0) {
                axis = orthogonal_complement(model.components, r);
                norm = 1.0;
            }
            model.components.row(r) = (axis / norm).transpose();
        }
        model.total_variance = std::max(0.0, values.sum());
    }
    normalize_signs(model.components);
    return model;
}

RowMatrix pca_transform(const PcaModel& model, const RowMatrix& x) {
    if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
        throw std::invalid_argument("pca_transform: dimension mismatch (model " +
                                    std::to_string(model.input_dim()) + ", data " +
                                    std::to_string(x.cols()) + ")");
    }
    return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& m) {
    return m.with_vectors(pca_transform(model, m.vectors()));
}

RowMatrix pca_inverse_transform(const PcaModel& model, const RowMatrix& projected) {
    if (static_cast<std::size_t>(projected.cols()) != model.output_dim()) {
        throw std::invalid_argument("pca_inverse_transform: dimension mismatch");
    }
    return (projected * model.components).rowwise() + model.mean.transpose();
}

void to_json(nlohmann::json& j, const PcaModel& model) {
    j = nlohmann::json::object();
    j["mean"] = std::vector<double>(model.mean.begin(), model.mean.end());
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
        rows.push_back(std::vector<double>(model.components.row(r).begin(), model.components.row(r).end()));
    }
    j["components"] = std::move(rows);
    j["explained_variance"] =
        std::vector<double>(model.explained_variance.begin(), model.explained_variance.end());
    j["total_variance"] = model.total_variance;
}

void from_json(const nlohmann::json& j, PcaModel& model) {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto ev = j.at("explained_variance").get<std::vector<double>>();
    const auto& rows = j.at("components");
    model.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    model.explained_variance = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    model.components.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(mean.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto row = rows[r].get<std::vector<double>>();
        if (row.size() != mean.size()) throw Error("pca model: component row has wrong length");
        for (std::size_t c = 0; c < row.size(); ++c) {
            model.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
        }
    }
    model.total_variance = j.at("total_variance").get<double>();
}

} // namespace wildsort
