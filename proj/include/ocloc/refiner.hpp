#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ocloc/geometry.hpp"
#include "ocloc/map.hpp"
#include "ocloc/pnp.hpp"

namespace ocloc {

struct RefinerConfig {
  double reproj_threshold_px = 10.0;  // d
  double distance_slack = 1.1;
  double angle_slack = 0.1;  // radians
  std::vector<int> mc_fractions = {30, 50, 70};
  int mc_trials = 10;
  int max_rounds = 10;
  uint64_t seed = 0;
  bool use_semantic = true;
  double match_ratio = 0.8;
  size_t min_matches = 8;
  PnpConfig pnp;
};

using VisibleSet = std::vector<uint64_t>;  // landmark ids, ascending

// Cone test per landmark: distance within L * slack, view angle within
// theta/2 + slack (degenerate landmarks always pass), and the point projects
// inside the image bounds in front of the camera.
inline VisibleSet visible_landmarks(const LandmarkMap& map, const Pose& pose,
                                    const PinholeCamera& cam,
                                    const RefinerConfig& cfg = {}) {
  const Point3 cq = pose.center();
  VisibleSet out;
  for (const auto& lm : map.landmarks) {
    const Eigen::Vector3d to_cam = cq - lm.X;
    const double dist = to_cam.norm();
    if (dist > lm.oc.max_distance * cfg.distance_slack) continue;
    if (!lm.oc.degenerate) {
      const double dev =
          std::acos(clamp_unit(lm.oc.mean_dir.dot(to_cam / dist)));
      if (dev > lm.oc.max_angle / 2.0 + cfg.angle_slack) continue;
    }
    const auto px = project(cam, pose, lm.X);
    if (!px || !cam.contains(*px)) continue;
    out.push_back(lm.id);
  }
  return out;
}

struct EmptyVisibleSetError : std::runtime_error {
  EmptyVisibleSetError() : std::runtime_error("empty visible landmark set") {}
};

// Per query keypoint, 2-NN over the visible landmarks' descriptors with
// ratio test and semantic compatibility.
inline std::vector<Match2D3D> match_2d3d_knn(
    const std::vector<Keypoint>& query_kps, const VisibleSet& visible,
    const LandmarkMap& map, const RefinerConfig& cfg = {}) {
  if (visible.empty()) {
    throw EmptyVisibleSetError();
  }
  if (query_kps.empty()) return {};

  const Eigen::Index dim = query_kps.front().descriptor.size();
  const Eigen::Index n_kp = static_cast<Eigen::Index>(query_kps.size());
  Eigen::MatrixXf Q(n_kp, dim);
  for (Eigen::Index i = 0; i < n_kp; ++i) {
    Q.row(i) = query_kps[static_cast<size_t>(i)].descriptor.transpose();
  }
  const Eigen::VectorXf q2 = Q.rowwise().squaredNorm();

  std::vector<const Landmark*> lms(visible.size());
  for (size_t j = 0; j < visible.size(); ++j) {
    lms[j] = map.find_landmark(visible[j]);
    if (lms[j] == nullptr) {
      throw std::invalid_argument("match_2d3d_knn: unknown landmark id");
    }
  }

  // blocked distance computation: running 2-NN per keypoint so the landmark
  // set can be arbitrarily large without materializing the full matrix
  struct TwoNn {
    int best = -1;
    int second = -1;
    float bd = 0.0f;
    float sd = 0.0f;
  };
  std::vector<TwoNn> nn(static_cast<size_t>(n_kp));
  constexpr Eigen::Index kBlock = 4096;
  Eigen::MatrixXf L(dim, kBlock);
  Eigen::MatrixXf D;
  for (size_t base = 0; base < visible.size();
       base += static_cast<size_t>(kBlock)) {
    const Eigen::Index bs = static_cast<Eigen::Index>(
        std::min(visible.size() - base, static_cast<size_t>(kBlock)));
    for (Eigen::Index j = 0; j < bs; ++j) {
      L.col(j) = lms[base + static_cast<size_t>(j)]->descriptor;
    }
    const Eigen::VectorXf l2 = L.leftCols(bs).colwise().squaredNorm();
    D.noalias() = Q * L.leftCols(bs);  // n_kp x bs dot products
    for (Eigen::Index i = 0; i < n_kp; ++i) {
      TwoNn& r = nn[static_cast<size_t>(i)];
      for (Eigen::Index j = 0; j < bs; ++j) {
        const float d2 = q2(i) + l2(j) - 2.0f * D(i, j);
        const int idx = static_cast<int>(base) + static_cast<int>(j);
        if (r.best < 0 || d2 < r.bd) {
          r.second = r.best;
          r.sd = r.bd;
          r.best = idx;
          r.bd = d2;
        } else if (r.second < 0 || d2 < r.sd) {
          r.second = idx;
          r.sd = d2;
        }
      }
    }
  }

  std::vector<Match2D3D> matches;
  for (Eigen::Index i = 0; i < n_kp; ++i) {
    const TwoNn& r = nn[static_cast<size_t>(i)];
    if (r.best < 0) continue;
    const double d1 = std::sqrt(std::max(0.0f, r.bd));
    if (r.second >= 0) {
      const double d2nd = std::sqrt(std::max(0.0f, r.sd));
      if (d1 > cfg.match_ratio * d2nd) continue;
    }
    const Landmark* lm = lms[static_cast<size_t>(r.best)];
    if (cfg.use_semantic &&
        !labels_compatible(query_kps[static_cast<size_t>(i)].semantic_label,
                           lm->semantic_label)) {
      continue;
    }
    matches.push_back({static_cast<uint32_t>(i), lm->id, d1});
  }
  return matches;
}

// Keep matches whose reprojection error under the current pose is within d;
// behind-camera landmarks are rejected.
inline std::vector<Match2D3D> filter_reprojection(
    const std::vector<Match2D3D>& matches,
    const std::vector<Keypoint>& query_kps, const Pose& pose,
    const PinholeCamera& cam, const LandmarkMap& map, double d) {
  std::vector<Match2D3D> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    const Landmark* lm = map.find_landmark(m.landmark_id);
    if (lm == nullptr || m.query_kp_index >= query_kps.size()) continue;
    const auto px = project(cam, pose, lm->X);
    if (!px) continue;
    if ((*px - query_kps[m.query_kp_index].px).norm() <= d) {
      out.push_back(m);
    }
  }
  return out;
}

struct UnstableUncertaintyError : std::runtime_error {
  UnstableUncertaintyError()
      : std::runtime_error("majority of Monte-Carlo subsamples unsolvable") {}
};

// Monte-Carlo sampling uncertainty: solve PnP on random sub-match fractions
// and report the RMS deviation of the sub-poses from the current pose.
inline Uncertainty estimate_uncertainty_mc(const std::vector<Match2D3D>& matches,
                                           const Pose& pose,
                                           const std::vector<Keypoint>& query_kps,
                                           const PinholeCamera& cam,
                                           const LandmarkMap& map,
                                           const RefinerConfig& cfg = {}) {
  if (matches.size() < 8) {
    throw std::invalid_argument("estimate_uncertainty_mc: need >= 8 matches");
  }
  std::mt19937_64 rng(cfg.seed);
  PnpConfig sub_cfg = cfg.pnp;
  sub_cfg.min_inliers = 4;  // subsamples may be small

  size_t attempted = 0;
  size_t failed = 0;
  double sum_t2 = 0.0;
  double sum_r2 = 0.0;
  size_t solved = 0;

  std::vector<size_t> idx(matches.size());
  for (int frac : cfg.mc_fractions) {
    const size_t count = static_cast<size_t>(
        std::ceil(static_cast<double>(frac) / 100.0 *
                  static_cast<double>(matches.size())));
    for (int trial = 0; trial < cfg.mc_trials; ++trial) {
      ++attempted;
      std::iota(idx.begin(), idx.end(), size_t{0});
      std::vector<Match2D3D> sub;
      sub.reserve(count);
      for (size_t k = 0; k < count && k < idx.size(); ++k) {
        std::uniform_int_distribution<size_t> dist(k, idx.size() - 1);
        std::swap(idx[k], idx[dist(rng)]);
        sub.push_back(matches[idx[k]]);
      }
      if (sub.size() < 4) {
        ++failed;
        continue;
      }
      sub_cfg.seed = rng();
      std::optional<PoseEstimate> est;
      try {
        est = pnp_ransac(sub, query_kps, cam, map, sub_cfg);
      } catch (const std::exception&) {
        est = std::nullopt;
      }
      if (!est) {
        ++failed;
        continue;
      }
      const PoseError err = pose_error(est->pose, pose);
      sum_t2 += err.trans_m * err.trans_m;
      sum_r2 += err.rot_deg * err.rot_deg;
      ++solved;
    }
  }
  if (failed * 2 > attempted) {
    throw UnstableUncertaintyError();
  }
  Uncertainty u;
  u.sigma_t = std::sqrt(sum_t2 / static_cast<double>(solved));
  u.sigma_r = std::sqrt(sum_r2 / static_cast<double>(solved));
  return u;
}

struct RefineRound {
  int round = 0;
  Uncertainty uncertainty;
  size_t visible = 0;
  size_t matches = 0;
  size_t filtered = 0;
  size_t inliers = 0;
  bool accepted = false;
};

struct RefineOutcome {
  PoseEstimate estimate;
  int rounds_accepted = 0;
  bool empty_visible = false;
  std::vector<RefineRound> trace;
};

// Iterative pose optimization against the whole map: visible-field culling,
// global 2D-3D KNN matching, reprojection filtering, PnP, and Monte-Carlo
// uncertainty as the convergence test. Accepts a round only when both
// uncertainty components are non-increasing.
inline RefineOutcome refine_iteratively(const PoseEstimate& initial,
                                        const QueryImage& query,
                                        const LandmarkMap& map,
                                        const RefinerConfig& cfg = {}) {
  RefineOutcome out;
  out.estimate = initial;
  out.estimate.num_iterations = 0;

  Pose current = initial.pose;
  std::optional<Uncertainty> prev;
  std::mt19937_64 seed_stream(cfg.seed);

  for (int round = 1; round <= cfg.max_rounds; ++round) {
    RefineRound rr;
    rr.round = round;

    const VisibleSet visible = visible_landmarks(map, current, query.camera, cfg);
    rr.visible = visible.size();
    if (visible.empty()) {
      if (round == 1) out.empty_visible = true;
      out.trace.push_back(rr);
      break;
    }

    std::vector<Match2D3D> matches;
    try {
      matches = match_2d3d_knn(query.keypoints, visible, map, cfg);
    } catch (const EmptyVisibleSetError&) {
      out.trace.push_back(rr);
      break;
    }
    rr.matches = matches.size();

    const auto filtered = filter_reprojection(matches, query.keypoints, current,
                                              query.camera, map,
                                              cfg.reproj_threshold_px);
    rr.filtered = filtered.size();
    if (filtered.size() < std::max<size_t>(cfg.min_matches, 4)) {
      out.trace.push_back(rr);
      break;
    }

    PnpConfig pnp_cfg = cfg.pnp;
    pnp_cfg.seed = seed_stream();
    std::optional<PoseEstimate> solved;
    try {
      solved = pnp_ransac(filtered, query.keypoints, query.camera, map, pnp_cfg);
    } catch (const std::exception&) {
      solved = std::nullopt;
    }
    if (!solved) {
      out.trace.push_back(rr);
      break;
    }
    rr.inliers = solved->inliers.size();

    RefinerConfig mc_cfg = cfg;
    mc_cfg.seed = seed_stream();
    Uncertainty u;
    try {
      u = estimate_uncertainty_mc(filtered, solved->pose, query.keypoints,
                                  query.camera, map, mc_cfg);
    } catch (const std::exception&) {
      out.trace.push_back(rr);
      break;
    }
    rr.uncertainty = u;

    const bool accept =
        !prev || (u.sigma_t <= prev->sigma_t && u.sigma_r <= prev->sigma_r);
    rr.accepted = accept;
    out.trace.push_back(rr);
    if (!accept) break;

    prev = u;
    current = solved->pose;
    out.estimate = *solved;
    out.estimate.uncertainty = u;
    out.rounds_accepted = round;
    out.estimate.num_iterations = round;
  }
  return out;
}

}  // namespace ocloc
