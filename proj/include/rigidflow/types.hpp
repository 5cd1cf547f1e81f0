// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rigidflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct NotSkewError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BoxMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyMinimaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoMinimaFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Versioned-container mismatch; message carries both version strings.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rigidflow
