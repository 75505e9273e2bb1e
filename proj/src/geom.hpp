#pragma once

#include <Eigen/Dense>

#include "rng.hpp"

namespace mollae {

struct RigidTransform {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }
    RigidTransform inverse() const;
    RigidTransform compose(const RigidTransform& inner) const;  // this ∘ inner
};

// Uniform over SO(3) via normalized quaternions; translation is zero.
RigidTransform random_rotation(Rng& rng);

// Row-wise x -> R x + t for an N x 3 point matrix.
Eigen::MatrixXd apply(const RigidTransform& T, const Eigen::MatrixXd& pts);

// Least-squares rigid fit: argmin_T sum_i w_i |T(src_i) - dst_i|^2 with
// det(R) = +1 enforced (reflections rejected by sign correction).
RigidTransform weighted_kabsch(const Eigen::MatrixXd& src, const Eigen::MatrixXd& dst,
                               const Eigen::VectorXd& weights);

double rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace mollae
