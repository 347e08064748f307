#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "ocloc/geometry.hpp"
#include "ocloc/map.hpp"

namespace ocloc {

struct Match2D3D {
  uint32_t query_kp_index = 0;
  uint64_t landmark_id = 0;
  double distance = 0.0;
};

struct Uncertainty {
  double sigma_t = 0.0;  // meters
  double sigma_r = 0.0;  // degrees
};

struct PoseEstimate {
  Pose pose;
  std::vector<Match2D3D> inliers;
  int num_iterations = 0;
  std::optional<Uncertainty> uncertainty;
};

struct MatchConfig {
  double ratio = 0.8;
};

inline bool labels_compatible(int a, int b) {
  return a == 0 || b == 0 || a == b;
}

namespace detail {

// Row-major keypoint descriptor matrix for batched distance computation.
inline Eigen::MatrixXf descriptor_matrix(const std::vector<Keypoint>& kps) {
  if (kps.empty()) return {};
  Eigen::MatrixXf m(kps.size(), kps.front().descriptor.size());
  for (size_t i = 0; i < kps.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = kps[i].descriptor.transpose();
  }
  return m;
}

struct TwoNn {
  int best = -1;
  int second = -1;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline TwoNn two_nearest(const Eigen::VectorXf& dists) {
  TwoNn r;
  for (int j = 0; j < dists.size(); ++j) {
    const double d = dists(j);
    if (r.best < 0 || d < r.d1) {
      r.second = r.best;
      r.d2 = r.d1;
      r.best = j;
      r.d1 = d;
    } else if (r.second < 0 || d < r.d2) {
      r.second = j;
      r.d2 = d;
    }
  }
  return r;
}

}  // namespace detail

// 2-NN descriptor matching a->b with Lowe ratio test, semantic label
// compatibility and mutual-best check.
inline std::vector<std::pair<uint32_t, uint32_t>> match_2d2d(
    const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
    const MatchConfig& cfg = {}) {
  if (a.empty() || b.empty()) return {};
  if (a.front().descriptor.size() != b.front().descriptor.size()) {
    throw std::invalid_argument("match_2d2d: descriptor dimension mismatch");
  }
  const Eigen::MatrixXf A = detail::descriptor_matrix(a);
  const Eigen::MatrixXf B = detail::descriptor_matrix(b);
  const Eigen::VectorXf a2 = A.rowwise().squaredNorm();
  const Eigen::VectorXf b2 = B.rowwise().squaredNorm();
  // squared distances, |a|^2 + |b|^2 - 2 a.b
  Eigen::MatrixXf d2 = (-2.0f * A * B.transpose());
  d2.colwise() += a2;
  d2.rowwise() += b2.transpose();
  d2 = d2.cwiseMax(0.0f);

  // best b index for each a row (reverse direction computed from the same
  // matrix for the mutual check)
  std::vector<int> best_for_b(b.size(), -1);
  for (size_t j = 0; j < b.size(); ++j) {
    float bd = std::numeric_limits<float>::max();
    for (size_t i = 0; i < a.size(); ++i) {
      if (d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) < bd) {
        bd = d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        best_for_b[j] = static_cast<int>(i);
      }
    }
  }

  std::vector<std::pair<uint32_t, uint32_t>> matches;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto nn = detail::two_nearest(d2.row(static_cast<Eigen::Index>(i)));
    if (nn.best < 0) continue;
    const double d1 = std::sqrt(std::max(0.0, nn.d1));
    if (nn.second >= 0) {
      const double d2nd = std::sqrt(std::max(0.0, nn.d2));
      if (d1 > cfg.ratio * d2nd) continue;
    }
    if (!labels_compatible(a[i].semantic_label,
                           b[static_cast<size_t>(nn.best)].semantic_label)) {
      continue;
    }
    if (best_for_b[static_cast<size_t>(nn.best)] != static_cast<int>(i)) {
      continue;
    }
    matches.emplace_back(static_cast<uint32_t>(i),
                         static_cast<uint32_t>(nn.best));
  }
  return matches;
}

// Keep a 2D-3D match iff the keypoint label and the landmark's voted label
// agree, or either is unknown.
inline std::vector<Match2D3D> semantic_filter(
    const std::vector<Match2D3D>& matches,
    const std::vector<Keypoint>& query_kps, const LandmarkMap& map) {
  std::vector<Match2D3D> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    if (m.query_kp_index >= query_kps.size()) {
      throw std::invalid_argument("semantic_filter: keypoint index out of range");
    }
    const Landmark* lm = map.find_landmark(m.landmark_id);
    if (lm == nullptr) {
      throw std::invalid_argument("semantic_filter: unknown landmark id");
    }
    if (labels_compatible(query_kps[m.query_kp_index].semantic_label,
                          lm->semantic_label)) {
      out.push_back(m);
    }
  }
  return out;
}

namespace detail {

using Poly = std::vector<double>;  // ascending coefficients

inline Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

inline Poly poly_add(Poly a, const Poly& b, double scale = 1.0) {
  if (b.size() > a.size()) a.resize(b.size(), 0.0);
  for (size_t i = 0; i < b.size(); ++i) a[i] += scale * b[i];
  return a;
}

inline std::vector<double> real_roots(const Poly& coeffs) {
  // strip negligible leading coefficients
  Poly p = coeffs;
  double max_c = 0.0;
  for (double c : p) max_c = std::max(max_c, std::abs(c));
  if (max_c == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) < 1e-12 * max_c) p.pop_back();
  const int deg = static_cast<int>(p.size()) - 1;
  if (deg < 1) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -p[i] / p[deg];
  companion.block(1, 0, deg - 1, deg - 1).setIdentity();
  const Eigen::EigenSolver<Eigen::MatrixXd> es(companion);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto ev = es.eigenvalues()(i);
    if (std::abs(ev.imag()) < 1e-8 * std::max(1.0, std::abs(ev.real()))) {
      roots.push_back(ev.real());
    }
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace detail

// P3P (law-of-cosines distance system reduced to a quartic). Returns up to
// four world-to-camera poses consistent with the three correspondences.
inline std::vector<Pose> solve_p3p(const std::array<Point3, 3>& world,
                                   const std::array<Eigen::Vector3d, 3>& bearings) {
  const Eigen::Vector3d f1 = bearings[0].normalized();
  const Eigen::Vector3d f2 = bearings[1].normalized();
  const Eigen::Vector3d f3 = bearings[2].normalized();

  const double a = (world[1] - world[2]).norm();  // opposite P1
  const double b = (world[0] - world[2]).norm();  // opposite P2
  const double c = (world[0] - world[1]).norm();  // opposite P3
  if (a < 1e-12 || b < 1e-12 || c < 1e-12) return {};

  const double cos_alpha = clamp_unit(f2.dot(f3));
  const double cos_beta = clamp_unit(f1.dot(f3));
  const double cos_gamma = clamp_unit(f1.dot(f2));

  const double b2 = b * b;
  // With u = s2/s1, v = s3/s1 the distance equations reduce to two
  // quadratics in u sharing a root:
  //   u^2 - 2 cos_gamma u + K(v) = 0,  K = 1 - (c^2/b^2)(v^2 - 2 v cos_beta + 1)
  //   u^2 - 2 v cos_alpha u + M(v) = 0, M = v^2 - (a^2/b^2)(v^2 - 2 v cos_beta + 1)
  // Eliminating u gives a quartic in v.
  const double cb = (c * c) / b2;
  const double ab = (a * a) / b2;
  const detail::Poly K = {1.0 - cb, 2.0 * cb * cos_beta, -cb};
  const detail::Poly M = {-ab, 2.0 * ab * cos_beta, 1.0 - ab};
  const detail::Poly D = {-2.0 * cos_gamma, 2.0 * cos_alpha};
  const detail::Poly MK = detail::poly_add(M, K, -1.0);  // M - K
  // (M-K)^2 - 2 cos_gamma (M-K) D + K D^2 = 0
  detail::Poly quartic = detail::poly_mul(MK, MK);
  quartic = detail::poly_add(quartic, detail::poly_mul(MK, D), -2.0 * cos_gamma);
  quartic = detail::poly_add(quartic, detail::poly_mul(K, detail::poly_mul(D, D)));

  std::vector<Pose> solutions;
  for (double v : detail::real_roots(quartic)) {
    if (v <= 0.0) continue;
    const double denom_d = 2.0 * (cos_alpha * v - cos_gamma);
    if (std::abs(denom_d) < 1e-12) continue;
    const double Kv = K[0] + K[1] * v + K[2] * v * v;
    const double Mv = M[0] + M[1] * v + M[2] * v * v;
    const double u = (Mv - Kv) / denom_d;
    if (u <= 0.0) continue;
    const double s1_denom = 1.0 + v * v - 2.0 * v * cos_beta;
    if (s1_denom <= 1e-15) continue;
    const double s1 = b / std::sqrt(s1_denom);
    const double s2 = u * s1;
    const double s3 = v * s1;

    Eigen::Matrix3d cam_pts;
    cam_pts.col(0) = s1 * f1;
    cam_pts.col(1) = s2 * f2;
    cam_pts.col(2) = s3 * f3;
    Eigen::Matrix3d world_pts;
    world_pts.col(0) = world[0];
    world_pts.col(1) = world[1];
    world_pts.col(2) = world[2];

    const Eigen::Matrix4d T = Eigen::umeyama(world_pts, cam_pts, false);
    const Eigen::Matrix3d R = T.topLeftCorner<3, 3>();
    solutions.emplace_back(Eigen::Quaterniond(R), T.topRightCorner<3, 1>());
  }
  return solutions;
}

struct RefineResult {
  Pose pose;
  bool converged = true;
  double final_cost = 0.0;
};

// 6-DoF Gauss-Newton on total squared reprojection error; left-perturbation
// parametrization (rotation delta applied in world-to-camera frame).
inline RefineResult refine_pose_nonlinear(
    const Pose& initial, const std::vector<Match2D3D>& inliers,
    const std::vector<Keypoint>& query_kps, const PinholeCamera& cam,
    const LandmarkMap& map, int max_iters = 20, double min_decrease = 1e-10) {
  if (inliers.size() < 4) {
    throw std::invalid_argument("refine_pose_nonlinear: need >= 4 inliers");
  }
  struct Obs {
    Point3 X;
    Pixel px;
  };
  std::vector<Obs> obs;
  obs.reserve(inliers.size());
  for (const auto& m : inliers) {
    const Landmark* lm = map.find_landmark(m.landmark_id);
    if (lm == nullptr || m.query_kp_index >= query_kps.size()) {
      throw std::invalid_argument("refine_pose_nonlinear: bad match reference");
    }
    obs.push_back({lm->X, query_kps[m.query_kp_index].px});
  }

  auto cost_of = [&](const Pose& p) {
    double c = 0.0;
    for (const auto& o : obs) {
      const auto px = project(cam, p, o.X);
      if (!px) return std::numeric_limits<double>::infinity();
      c += (*px - o.px).squaredNorm();
    }
    return c;
  };

  RefineResult result{initial, true, 0.0};
  double cost = cost_of(initial);
  for (int it = 0; it < max_iters; ++it) {
    Eigen::Matrix<double, 6, 6> JtJ = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> Jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& o : obs) {
      const Point3 xc = result.pose.apply(o.X);
      if (xc.z() <= kMinDepth) continue;
      const double iz = 1.0 / xc.z();
      Eigen::Matrix<double, 2, 3> J_proj;
      J_proj << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz,
          0.0, cam.fy * iz, -cam.fy * xc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> J_xc;
      J_xc.leftCols<3>() = -skew(xc);
      J_xc.rightCols<3>() = Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 2, 6> J = J_proj * J_xc;
      const Pixel res(cam.fx * xc.x() * iz + cam.cx - o.px.x(),
                      cam.fy * xc.y() * iz + cam.cy - o.px.y());
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * res;
    }
    const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(JtJ);
    Eigen::Matrix<double, 6, 1> delta = ldlt.solve(-Jtr);
    if (!delta.allFinite()) {
      result.converged = false;
      break;
    }
    // backtracking step acceptance
    bool accepted = false;
    for (int half = 0; half < 6; ++half) {
      const Eigen::Vector3d omega = delta.head<3>();
      const double angle = omega.norm();
      Eigen::Quaterniond dq(1.0, 0.0, 0.0, 0.0);
      if (angle > 0.0) {
        dq = Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
      }
      Pose trial(dq * result.pose.q, dq * result.pose.t + delta.tail<3>());
      const double trial_cost = cost_of(trial);
      if (trial_cost < cost) {
        const double decrease = cost - trial_cost;
        result.pose = trial;
        cost = trial_cost;
        accepted = true;
        if (decrease < min_decrease) it = max_iters;
        break;
      }
      delta *= 0.5;
    }
    if (!accepted) break;
  }
  result.final_cost = cost;
  return result;
}

struct PnpConfig {
  double inlier_px = 8.0;
  int max_iters = 5000;
  int min_inliers = 12;
  double confidence = 0.999;
  uint64_t seed = 0;
};

// RANSAC with a 3-point minimal solver; the 4th sampled point disambiguates
// the up-to-four P3P solutions. Final pose is Gauss-Newton refined on all
// inliers; the returned inlier set is re-verified under the refined pose.
inline std::optional<PoseEstimate> pnp_ransac(
    const std::vector<Match2D3D>& matches,
    const std::vector<Keypoint>& query_kps, const PinholeCamera& cam,
    const LandmarkMap& map, const PnpConfig& cfg = {}) {
  if (matches.size() < 4) {
    throw std::invalid_argument("pnp_ransac: need >= 4 matches");
  }
  struct Corr {
    Point3 X;
    Pixel px;
    Eigen::Vector3d bearing;
  };
  std::vector<Corr> corrs;
  corrs.reserve(matches.size());
  for (const auto& m : matches) {
    const Landmark* lm = map.find_landmark(m.landmark_id);
    if (lm == nullptr || m.query_kp_index >= query_kps.size()) {
      throw std::invalid_argument("pnp_ransac: bad match reference");
    }
    const Pixel& px = query_kps[m.query_kp_index].px;
    corrs.push_back({lm->X, px,
                     Eigen::Vector3d((px.x() - cam.cx) / cam.fx,
                                     (px.y() - cam.cy) / cam.fy, 1.0)
                         .normalized()});
  }

  std::mt19937_64 rng(cfg.seed);
  const size_t n = corrs.size();

  auto count_inliers = [&](const Pose& pose, std::vector<char>* mask) {
    size_t count = 0;
    for (size_t i = 0; i < n; ++i) {
      const auto px = project(cam, pose, corrs[i].X);
      const bool in = px && (*px - corrs[i].px).norm() <= cfg.inlier_px;
      if (mask) (*mask)[i] = in ? 1 : 0;
      if (in) ++count;
    }
    return count;
  };

  Pose best_pose;
  size_t best_inliers = 0;
  int iterations_run = 0;
  double max_needed = cfg.max_iters;

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});

  for (int it = 0; it < cfg.max_iters && it < max_needed; ++it) {
    ++iterations_run;
    // sample 4 distinct matches without replacement
    std::array<size_t, 4> sample;
    for (int k = 0; k < 4; ++k) {
      std::uniform_int_distribution<size_t> dist(static_cast<size_t>(k), n - 1);
      const size_t j = dist(rng);
      std::swap(idx[static_cast<size_t>(k)], idx[j]);
      sample[static_cast<size_t>(k)] = idx[static_cast<size_t>(k)];
    }

    const std::array<Point3, 3> world = {corrs[sample[0]].X, corrs[sample[1]].X,
                                         corrs[sample[2]].X};
    const std::array<Eigen::Vector3d, 3> bearings = {corrs[sample[0]].bearing,
                                                     corrs[sample[1]].bearing,
                                                     corrs[sample[2]].bearing};
    const auto hypotheses = solve_p3p(world, bearings);

    // disambiguate on the 4th point; require cheirality for all 4 samples
    const Corr& check = corrs[sample[3]];
    const Pose* best_hyp = nullptr;
    double best_check_err = std::numeric_limits<double>::max();
    for (const auto& hyp : hypotheses) {
      bool cheirality_ok = true;
      for (size_t s : sample) {
        if (hyp.apply(corrs[s].X).z() <= kMinDepth) {
          cheirality_ok = false;
          break;
        }
      }
      if (!cheirality_ok) continue;
      const auto px = project(cam, hyp, check.X);
      if (!px) continue;
      const double err = (*px - check.px).norm();
      if (err < best_check_err) {
        best_check_err = err;
        best_hyp = &hyp;
      }
    }
    if (best_hyp == nullptr || best_check_err > cfg.inlier_px) continue;

    const size_t inliers = count_inliers(*best_hyp, nullptr);
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_pose = *best_hyp;
      const double w = static_cast<double>(inliers) / static_cast<double>(n);
      const double denom = std::log(std::max(1e-12, 1.0 - std::pow(w, 4)));
      if (denom < 0.0) {
        max_needed = std::min<double>(
            cfg.max_iters, std::ceil(std::log(1.0 - cfg.confidence) / denom));
      }
    }
  }

  if (best_inliers < static_cast<size_t>(cfg.min_inliers)) {
    return std::nullopt;
  }

  std::vector<char> mask(n, 0);
  count_inliers(best_pose, &mask);
  std::vector<Match2D3D> inlier_matches;
  for (size_t i = 0; i < n; ++i) {
    if (mask[i]) inlier_matches.push_back(matches[i]);
  }

  const RefineResult refined = refine_pose_nonlinear(
      best_pose, inlier_matches, query_kps, cam, map);

  // re-verify inliers under the refined pose
  std::vector<char> final_mask(n, 0);
  const size_t final_count = count_inliers(refined.pose, &final_mask);
  PoseEstimate est;
  est.pose = refined.pose;
  est.num_iterations = iterations_run;
  if (final_count >= static_cast<size_t>(cfg.min_inliers)) {
    for (size_t i = 0; i < n; ++i) {
      if (final_mask[i]) est.inliers.push_back(matches[i]);
    }
  } else {
    est.pose = best_pose;
    for (size_t i = 0; i < n; ++i) {
      if (mask[i]) est.inliers.push_back(matches[i]);
    }
  }
  return est;
}

}  // namespace ocloc
