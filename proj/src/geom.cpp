#include "geom.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace mollae {

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.R = R.transpose();
    inv.t = -(R.transpose() * t);
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
    RigidTransform out;
    out.R = R * inner.R;
    out.t = R * inner.t + t;
    return out;
}

RigidTransform random_rotation(Rng& rng) {
    // draw a uniform unit quaternion from 4 iid normals
    double q[4];
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& qi : q) {
            qi = rng.normal();
            n2 += qi * qi;
        }
    } while (n2 < 1e-12);
    double inv = 1.0 / std::sqrt(n2);
    double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    RigidTransform T;
    T.R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
           2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return T;
}

Eigen::MatrixXd apply(const RigidTransform& T, const Eigen::MatrixXd& pts) {
    if (pts.cols() != 3) throw std::runtime_error("apply: points must be Nx3");
    Eigen::MatrixXd out = pts * T.R.transpose();
    out.rowwise() += T.t.transpose();
    return out;
}

RigidTransform weighted_kabsch(const Eigen::MatrixXd& src, const Eigen::MatrixXd& dst,
                               const Eigen::VectorXd& weights) {
    if (src.rows() != dst.rows() || src.cols() != 3 || dst.cols() != 3 || weights.size() != src.rows())
        throw std::runtime_error("weighted_kabsch: shape mismatch");
    double wsum = weights.sum();
    if (!(wsum > 0.0)) throw std::runtime_error("weighted_kabsch: weights must not all be zero");
    Eigen::RowVector3d cs = (weights.transpose() * src) / wsum;
    Eigen::RowVector3d cd = (weights.transpose() * dst) / wsum;
    Eigen::MatrixXd X = src.rowwise() - cs;
    Eigen::MatrixXd Y = dst.rowwise() - cd;
    Eigen::Matrix3d C = X.transpose() * (Y.array().colwise() * weights.array()).matrix();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    if (s(1) <= 1e-12 * std::max(1.0, s(0)))
        throw std::runtime_error("weighted_kabsch: degenerate point set (covariance rank < 2)");
    Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    double d = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Eigen::Matrix3d D = Eigen::Vector3d(1.0, 1.0, d).asDiagonal();
    RigidTransform T;
    T.R = V * D * U.transpose();
    T.t = cd.transpose() - T.R * cs.transpose();
    return T;
}

double rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::runtime_error("rmsd: size mismatch");
    return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

}  // namespace mollae
