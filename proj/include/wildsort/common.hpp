#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wildsort {

/// Row-major dense matrix; row i is item i throughout the toolkit.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Base error for every failure the toolkit reports. Precondition violations
/// on arguments use std::invalid_argument instead.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Seed type shared by every stochastic stage.
using Seed = std::uint64_t;

inline constexpr const char* kToolName = "wildsort";
inline constexpr const char* kToolVersion = "0.1.0";

} // namespace wildsort
