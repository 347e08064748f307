#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace ocloc {

using Point3 = Eigen::Vector3d;
using Pixel = Eigen::Vector2d;

constexpr double kDegPerRad = 180.0 / M_PI;

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// World-to-camera rigid transform: x_cam = R(q) * X_world + t.
// Quaternion stored (w, x, y, z), kept unit-norm.
struct Pose {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d t{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Eigen::Quaterniond& q_in, const Eigen::Vector3d& t_in)
      : q(q_in.normalized()), t(t_in) {}

  static Pose identity() { return Pose(); }

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }

  Point3 apply(const Point3& X) const { return q * X + t; }

  // Camera optical center in world coordinates: C = -R^T t.
  Point3 center() const { return q.conjugate() * (-t); }

  Pose inverse() const {
    const Eigen::Quaterniond qi = q.conjugate();
    return Pose(qi, qi * (-t));
  }

  // this ∘ other: first apply other, then this.
  Pose compose(const Pose& other) const {
    return Pose(q * other.q, q * other.t + t);
  }

  void normalize() { q.normalize(); }
};

struct PinholeCamera {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  PinholeCamera() = default;
  PinholeCamera(double fx_, double fy_, double cx_, double cy_, int w, int h)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
    if (fx <= 0.0 || fy <= 0.0 || width < 1 || height < 1) {
      throw std::invalid_argument("PinholeCamera: invalid intrinsics");
    }
  }

  bool contains(const Pixel& px) const {
    return px.x() >= 0.0 && px.x() <= width - 1 && px.y() >= 0.0 &&
           px.y() <= height - 1;
  }
};

// Depth below this counts as at/behind the camera.
constexpr double kMinDepth = 1e-9;

inline std::optional<Pixel> project(const PinholeCamera& cam, const Pose& pose,
                                    const Point3& X) {
  const Point3 xc = pose.apply(X);
  if (xc.z() <= kMinDepth) {
    return std::nullopt;
  }
  return Pixel(cam.fx * xc.x() / xc.z() + cam.cx,
               cam.fy * xc.y() / xc.z() + cam.cy);
}

// Thrown when a point is behind the camera where a numeric error is required.
struct NotVisibleError : std::runtime_error {
  NotVisibleError() : std::runtime_error("point not visible (behind camera)") {}
};

inline double reprojection_error(const PinholeCamera& cam, const Pose& pose,
                                 const Point3& X, const Pixel& obs) {
  const auto px = project(cam, pose, X);
  if (!px) {
    throw NotVisibleError();
  }
  return (*px - obs).norm();
}

struct View {
  PinholeCamera camera;
  Pose pose;
  Pixel observation;
};

namespace detail {

// Structure-only Gauss-Newton on the point, cameras fixed.
inline Point3 refine_point(const std::vector<View>& views, Point3 X,
                           int max_iters = 10, double min_decrease = 1e-12) {
  auto total_cost = [&](const Point3& p) {
    double c = 0.0;
    for (const auto& v : views) {
      const auto px = project(v.camera, v.pose, p);
      if (!px) return std::numeric_limits<double>::infinity();
      c += (*px - v.observation).squaredNorm();
    }
    return c;
  };

  double cost = total_cost(X);
  for (int it = 0; it < max_iters; ++it) {
    Eigen::Matrix3d JtJ = Eigen::Matrix3d::Zero();
    Eigen::Vector3d Jtr = Eigen::Vector3d::Zero();
    for (const auto& v : views) {
      const Point3 xc = v.pose.apply(X);
      if (xc.z() <= kMinDepth) return X;
      const double iz = 1.0 / xc.z();
      Eigen::Matrix<double, 2, 3> J_proj;
      J_proj << v.camera.fx * iz, 0.0, -v.camera.fx * xc.x() * iz * iz,
          0.0, v.camera.fy * iz, -v.camera.fy * xc.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> J = J_proj * v.pose.rotation();
      const Pixel res(v.camera.fx * xc.x() * iz + v.camera.cx - v.observation.x(),
                      v.camera.fy * xc.y() * iz + v.camera.cy - v.observation.y());
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * res;
    }
    const Eigen::Vector3d delta = JtJ.ldlt().solve(-Jtr);
    if (!delta.allFinite()) break;
    const Point3 X_new = X + delta;
    const double cost_new = total_cost(X_new);
    if (!(cost_new < cost)) break;
    const double decrease = cost - cost_new;
    X = X_new;
    cost = cost_new;
    if (decrease < min_decrease) break;
  }
  return X;
}

}  // namespace detail

struct TriangulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Linear multiview triangulation followed by structure-only refinement.
// Throws if <2 views, all centers coincident, or the point ends up behind
// any camera.
inline Point3 triangulate(const std::vector<View>& views) {
  if (views.size() < 2) {
    throw TriangulationError("triangulate: need at least 2 views");
  }
  bool has_baseline = false;
  const Point3 c0 = views.front().pose.center();
  for (size_t i = 1; i < views.size(); ++i) {
    if ((views[i].pose.center() - c0).norm() >= 1e-9) {
      has_baseline = true;
      break;
    }
  }
  if (!has_baseline) {
    throw TriangulationError("triangulate: degenerate baseline");
  }

  Eigen::MatrixXd A(2 * views.size(), 4);
  for (size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = v.pose.rotation();
    P.col(3) = v.pose.t;
    Eigen::Matrix3d K;
    K << v.camera.fx, 0.0, v.camera.cx, 0.0, v.camera.fy, v.camera.cy, 0.0,
        0.0, 1.0;
    P = K * P;
    A.row(2 * i) = v.observation.x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = v.observation.y() * P.row(2) - P.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-15) {
    throw TriangulationError("triangulate: point at infinity");
  }
  Point3 X = h.head<3>() / h(3);

  X = detail::refine_point(views, X);

  for (const auto& v : views) {
    if (v.pose.apply(X).z() <= kMinDepth) {
      throw TriangulationError("triangulate: cheirality failure");
    }
  }
  return X;
}

struct PoseError {
  double trans_m = 0.0;
  double rot_deg = 0.0;
};

// Translation error between camera centers; rotation error as the angle of
// the relative rotation, degrees in [0, 180].
inline PoseError pose_error(const Pose& a, const Pose& b) {
  PoseError e;
  e.trans_m = (a.center() - b.center()).norm();
  const Eigen::Quaterniond dq = a.q * b.q.conjugate();
  const double cos_half = clamp_unit(std::abs(dq.w()));
  e.rot_deg = 2.0 * std::acos(cos_half) * kDegPerRad;
  return e;
}

}  // namespace ocloc
