#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "fruitlet/geometry.hpp"

namespace fruitlet::testing {

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double scale = 0.01) {
  std::normal_distribution<double> g(0.0, scale);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(g(rng), g(rng), g(rng));
  return c;
}

// Uniform samples inside the axis-aligned box [lo, hi].
inline PointCloud box_volume(std::mt19937_64& rng, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                             std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d t(u(rng), u(rng), u(rng));
    c.points.push_back(lo + (hi - lo).cwiseProduct(t));
  }
  return c;
}

// Ellipsoid surface samples with semi-axes (a, b, c) around `center`.
inline PointCloud ellipsoid_surface(std::mt19937_64& rng, const Eigen::Vector3d& axes, const Eigen::Vector3d& center,
                                    std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d d(g(rng), g(rng), g(rng));
    d.normalize();
    c.points.push_back(center + axes.cwiseProduct(d));
  }
  return c;
}

inline Eigen::Matrix3d rotation_about(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline Eigen::Matrix3d random_rotation_matrix(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Two column vectors equal up to an overall sign.
inline bool same_up_to_sign(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double tol) {
  return (a - b).norm() < tol || (a + b).norm() < tol;
}

}  // namespace fruitlet::testing
