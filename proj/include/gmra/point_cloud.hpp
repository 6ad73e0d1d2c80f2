#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gmra/errors.hpp"

namespace gmra {

// n x D row-major coordinate matrix, one point per row.
struct PointCloud {
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Matrix coords;

    PointCloud() = default;
    explicit PointCloud(Matrix m) : coords(std::move(m)) {}

    Eigen::Index size() const { return coords.rows(); }
    Eigen::Index dim() const { return coords.cols(); }

    auto row(Eigen::Index i) const { return coords.row(i); }

    std::span<const double> data_span() const {
        return {coords.data(), static_cast<std::size_t>(coords.size())};
    }

    bool all_finite() const { return coords.allFinite(); }

    void require_valid() const {
        if (coords.rows() < 1 || coords.cols() < 1) {
            throw InvalidInput("point cloud must have n >= 1 and D >= 1");
        }
        if (!all_finite()) throw InvalidInput("point cloud contains non-finite coordinates");
    }

    double squared_distance(Eigen::Index i, Eigen::Index j) const {
        return (coords.row(i) - coords.row(j)).squaredNorm();
    }
};

} // namespace gmra
