#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocloc/descriptor_ops.hpp"
#include "ocloc/geometry.hpp"
#include "ocloc/map.hpp"
#include "ocloc/refiner.hpp"

namespace ocloc {

struct SceneConfig {
  size_t n_landmarks = 200;
  size_t n_db_images = 20;
  size_t n_queries = 50;
  double extent_m = 10.0;
  PinholeCamera camera{500.0, 500.0, 320.0, 240.0, 640, 480};
  int local_dim = 32;
  int global_dim = 16;
  int n_semantic_classes = 8;
  size_t min_covisible = 30;
  size_t max_kp_per_image = 0;  // 0 = keep every visible landmark
  uint64_t seed = 0;
};

struct NoiseConfig {
  double pixel_sigma = 0.0;
  double descriptor_sigma = 0.0;
  double label_flip_rate = 0.0;
  double outlier_match_rate = 0.0;
  uint64_t seed = 0;
};

struct SyntheticScene {
  SceneConfig cfg;
  LandmarkMap gt_map;          // images + ground-truth landmarks
  std::vector<Track> tracks;   // one per ground-truth landmark
  std::vector<QueryImage> queries;
  std::vector<Pose> query_gt;
  // ground-truth correspondence: per query, per keypoint, landmark id
  std::vector<std::vector<uint64_t>> query_kp_landmark;
};

namespace detail {

// World-to-camera pose looking from `center` toward `target`, y-down.
inline Pose look_at(const Point3& center, const Point3& target) {
  const Eigen::Vector3d forward = (target - center).normalized();
  Eigen::Vector3d up_hint(0.0, 0.0, 1.0);
  if (std::abs(forward.dot(up_hint)) > 0.99) up_hint = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d right = forward.cross(up_hint).normalized();
  const Eigen::Vector3d down = forward.cross(right).normalized();
  Eigen::Matrix3d R;
  R.row(0) = right;
  R.row(1) = down;
  R.row(2) = forward;
  return Pose(Eigen::Quaterniond(R), -(R * center));
}

// Fixed random projection of (position, viewing direction) into a unit
// global descriptor; stands in for a learned embedding.
inline DescriptorF encode_viewpoint(const Pose& pose, const SceneConfig& cfg,
                                    std::mt19937_64& noise_rng,
                                    double noise_sigma = 0.01) {
  std::mt19937_64 proj_rng(0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd M(cfg.global_dim, 6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = gauss(proj_rng);

  Eigen::Matrix<double, 6, 1> feat;
  feat.head<3>() = pose.center() / cfg.extent_m;
  feat.tail<3>() = pose.rotation().row(2).transpose();  // viewing direction
  Eigen::VectorXd g = M * feat;
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += noise(noise_rng);
  return g.normalized().cast<float>();
}

inline DescriptorF random_unit_descriptor(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
  return v.normalized().cast<float>();
}

// Landmark indices visible from a pose, optionally subsampled to a fixed
// keypoint budget (Fisher-Yates prefix, then restored to ascending order).
inline std::vector<std::pair<size_t, Pixel>> visible_points(
    const std::vector<Point3>& points, const Pose& pose,
    const PinholeCamera& cam, size_t cap, std::mt19937_64& rng) {
  std::vector<std::pair<size_t, Pixel>> vis;
  for (size_t p = 0; p < points.size(); ++p) {
    const auto px = project(cam, pose, points[p]);
    if (px && cam.contains(*px)) vis.emplace_back(p, *px);
  }
  if (cap > 0 && vis.size() > cap) {
    for (size_t k = 0; k < cap; ++k) {
      std::uniform_int_distribution<size_t> dist(k, vis.size() - 1);
      std::swap(vis[k], vis[dist(rng)]);
    }
    vis.resize(cap);
    std::sort(vis.begin(), vis.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return vis;
}

}  // namespace detail

// Deterministic synthetic scene: landmarks uniform in a box, database
// cameras on a jittered orbit facing the scene, queries rejection-sampled
// near the database trajectory with a covisibility floor.
inline SyntheticScene generate_scene(const SceneConfig& cfg) {
  if (cfg.n_landmarks < 1 || cfg.n_db_images < 1 || cfg.extent_m <= 0.0) {
    throw std::invalid_argument("generate_scene: invalid config");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticScene scene;
  scene.cfg = cfg;
  const double half = cfg.extent_m / 2.0;

  // landmarks
  std::vector<Point3> points(cfg.n_landmarks);
  std::vector<DescriptorF> descriptors(cfg.n_landmarks);
  std::vector<uint16_t> labels(cfg.n_landmarks);
  std::vector<std::array<uint8_t, 3>> colors(cfg.n_landmarks);
  for (size_t i = 0; i < cfg.n_landmarks; ++i) {
    points[i] = Point3(half * (2.0 * unit(rng) - 1.0),
                       half * (2.0 * unit(rng) - 1.0),
                       half * (2.0 * unit(rng) - 1.0));
    descriptors[i] = detail::random_unit_descriptor(cfg.local_dim, rng);
    labels[i] = static_cast<uint16_t>(
        1 + static_cast<int>(unit(rng) * cfg.n_semantic_classes) %
                cfg.n_semantic_classes);
    colors[i] = {static_cast<uint8_t>(unit(rng) * 255),
                 static_cast<uint8_t>(unit(rng) * 255),
                 static_cast<uint8_t>(unit(rng) * 255)};
  }

  // database cameras on an orbit
  const double orbit_radius = 1.6 * cfg.extent_m;
  std::vector<Pose> db_poses(cfg.n_db_images);
  for (size_t i = 0; i < cfg.n_db_images; ++i) {
    const double angle = 2.0 * M_PI * static_cast<double>(i) /
                             static_cast<double>(cfg.n_db_images) +
                         0.05 * gauss(rng);
    const double radius = orbit_radius * (1.0 + 0.05 * gauss(rng));
    const Point3 center(radius * std::cos(angle), radius * std::sin(angle),
                        0.3 * cfg.extent_m * gauss(rng) * 0.2);
    const Point3 target(0.05 * cfg.extent_m * gauss(rng),
                        0.05 * cfg.extent_m * gauss(rng), 0.0);
    db_poses[i] = detail::look_at(center, target);
  }

  // database images: observations of every landmark in view
  std::vector<Track> tracks(cfg.n_landmarks);
  scene.gt_map.local_dim = static_cast<uint32_t>(cfg.local_dim);
  scene.gt_map.global_dim = static_cast<uint32_t>(cfg.global_dim);
  for (int c = 0; c < cfg.n_semantic_classes; ++c) {
    scene.gt_map.label_palette[static_cast<uint32_t>(c + 1)] =
        "class_" + std::to_string(c + 1);
  }
  for (size_t i = 0; i < cfg.n_db_images; ++i) {
    ImageRecord img;
    img.id = static_cast<uint32_t>(i);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "db_%04zu.jpg", i);
    img.name = buf;
    img.camera = cfg.camera;
    img.pose = db_poses[i];
    for (const auto& [p, px] : detail::visible_points(
             points, img.pose, cfg.camera, cfg.max_kp_per_image, rng)) {
      Keypoint kp;
      kp.px = px;
      kp.descriptor = descriptors[p];
      kp.semantic_label = labels[p];
      kp.score = 1.0f;
      tracks[p].elements.push_back(
          {img.id, static_cast<uint32_t>(img.keypoints.size())});
      img.keypoints.push_back(std::move(kp));
    }
    img.global_descriptor = detail::encode_viewpoint(img.pose, cfg, rng);
    scene.gt_map.images.push_back(std::move(img));
  }

  // ground-truth landmarks with observation constraints from their tracks
  for (size_t p = 0; p < cfg.n_landmarks; ++p) {
    Landmark lm;
    lm.id = static_cast<uint64_t>(p);
    lm.X = points[p];
    lm.color = colors[p];
    lm.semantic_label = labels[p];
    lm.descriptor = descriptors[p];
    lm.track = tracks[p];
    lm.mean_reproj_err = 0.0;
    std::vector<Point3> centers;
    for (const auto& el : lm.track.elements) {
      centers.push_back(db_poses[el.image_id].center());
    }
    if (centers.empty()) {
      // unobserved landmark: constraints from its nearest camera direction
      centers.push_back(db_poses[0].center());
    }
    lm.oc = compute_observation_constraints(lm.X, centers);
    scene.gt_map.landmarks.push_back(std::move(lm));
  }
  scene.gt_map.rebuild_index();
  scene.tracks = std::move(tracks);

  // queries near the database trajectory, rejection-sampled for covisibility
  for (size_t qi = 0; qi < cfg.n_queries; ++qi) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const size_t anchor =
          static_cast<size_t>(unit(rng) * static_cast<double>(cfg.n_db_images)) %
          cfg.n_db_images;
      const Point3 jitter(0.08 * cfg.extent_m * gauss(rng),
                          0.08 * cfg.extent_m * gauss(rng),
                          0.04 * cfg.extent_m * gauss(rng));
      const Point3 center = db_poses[anchor].center() + jitter;
      const Point3 target(0.03 * cfg.extent_m * gauss(rng),
                          0.03 * cfg.extent_m * gauss(rng),
                          0.03 * cfg.extent_m * gauss(rng));
      const Pose pose = detail::look_at(center, target);

      QueryImage q;
      q.camera = cfg.camera;
      std::vector<uint64_t> kp_landmarks;
      for (const auto& [p, px] : detail::visible_points(
               points, pose, cfg.camera, cfg.max_kp_per_image, rng)) {
        Keypoint kp;
        kp.px = px;
        kp.descriptor = descriptors[p];
        kp.semantic_label = labels[p];
        kp.score = 1.0f;
        q.keypoints.push_back(std::move(kp));
        kp_landmarks.push_back(static_cast<uint64_t>(p));
      }
      if (q.keypoints.size() < cfg.min_covisible) continue;

      char buf[32];
      std::snprintf(buf, sizeof(buf), "query_%04zu.jpg", qi);
      q.name = buf;
      q.global_descriptor = detail::encode_viewpoint(pose, cfg, rng);
      scene.queries.push_back(std::move(q));
      scene.query_gt.push_back(pose);
      scene.query_kp_landmark.push_back(std::move(kp_landmarks));
      placed = true;
      break;
    }
    if (!placed) {
      throw std::runtime_error(
          "generate_scene: covisibility floor unsatisfiable");
    }
  }
  return scene;
}

// Gaussian pixel jitter, descriptor jitter with re-normalization, and label
// flips on all database and query keypoints. Zero-noise config is the
// identity.
inline SyntheticScene add_noise(const SyntheticScene& input,
                                const NoiseConfig& noise) {
  SyntheticScene scene = input;
  if (noise.pixel_sigma == 0.0 && noise.descriptor_sigma == 0.0 &&
      noise.label_flip_rate == 0.0) {
    return scene;
  }
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_classes = scene.cfg.n_semantic_classes;

  auto perturb = [&](Keypoint& kp) {
    if (noise.pixel_sigma > 0.0) {
      kp.px.x() += noise.pixel_sigma * gauss(rng);
      kp.px.y() += noise.pixel_sigma * gauss(rng);
    }
    if (noise.descriptor_sigma > 0.0) {
      Eigen::VectorXd d = kp.descriptor.cast<double>();
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        d(i) += noise.descriptor_sigma * gauss(rng);
      }
      const double n = d.norm();
      if (n > 1e-12) d /= n;
      kp.descriptor = d.cast<float>();
    }
    if (noise.label_flip_rate > 0.0 && unit(rng) < noise.label_flip_rate &&
        n_classes > 1) {
      const int shift = 1 + static_cast<int>(unit(rng) * (n_classes - 1)) %
                                (n_classes - 1);
      kp.semantic_label = static_cast<uint16_t>(
          1 + ((kp.semantic_label - 1 + shift) % n_classes));
    }
  };

  for (auto& img : scene.gt_map.images) {
    for (auto& kp : img.keypoints) perturb(kp);
  }
  for (auto& q : scene.queries) {
    for (auto& kp : q.keypoints) perturb(kp);
  }
  return scene;
}

struct EvalThreshold {
  double trans_m;
  double rot_deg;
};

struct EvalReport {
  std::vector<std::string> names;
  std::vector<std::optional<PoseError>> errors;  // nullopt = missing result
  std::array<double, 3> accuracy_pct{0.0, 0.0, 0.0};
  double median_trans_m = 0.0;
  double median_rot_deg = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Per-query pose error and accuracy percentages at three thresholds.
// Queries missing from results count as failures at every threshold.
inline EvalReport evaluate(
    const std::vector<std::pair<std::string, Pose>>& results,
    const std::map<std::string, Pose>& ground_truth,
    const std::array<EvalThreshold, 3>& thresholds) {
  std::map<std::string, Pose> result_map;
  for (const auto& [name, pose] : results) {
    if (ground_truth.find(name) == ground_truth.end()) {
      throw std::invalid_argument("evaluate: unknown query name " + name);
    }
    result_map[name] = pose;
  }
  EvalReport report;
  std::vector<double> trans, rots;
  std::array<size_t, 3> hits{0, 0, 0};
  for (const auto& [name, gt_pose] : ground_truth) {
    report.names.push_back(name);
    const auto it = result_map.find(name);
    if (it == result_map.end()) {
      report.errors.push_back(std::nullopt);
      continue;
    }
    const PoseError err = pose_error(it->second, gt_pose);
    report.errors.push_back(err);
    trans.push_back(err.trans_m);
    rots.push_back(err.rot_deg);
    for (size_t t = 0; t < 3; ++t) {
      if (err.trans_m <= thresholds[t].trans_m &&
          err.rot_deg <= thresholds[t].rot_deg) {
        ++hits[t];
      }
    }
  }
  const double n = static_cast<double>(ground_truth.size());
  for (size_t t = 0; t < 3; ++t) {
    report.accuracy_pct[t] = n > 0.0 ? 100.0 * static_cast<double>(hits[t]) / n
                                     : 0.0;
  }
  report.median_trans_m = median_of(trans);
  report.median_rot_deg = median_of(rots);
  return report;
}

inline std::string format_accuracy_triple(const std::array<double, 3>& acc) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f/%.1f/%.1f", acc[0], acc[1], acc[2]);
  return buf;
}

// Brute-force reference for visible_landmarks, written independently of the
// production path; test use only.
inline VisibleSet oracle_visible(const LandmarkMap& map, const Pose& pose,
                                 const PinholeCamera& cam,
                                 const RefinerConfig& cfg = {}) {
  const Point3 cq = pose.center();
  VisibleSet out;
  for (const auto& lm : map.landmarks) {
    const double dist = (cq - lm.X).norm();
    const bool distance_ok = dist <= lm.oc.max_distance * cfg.distance_slack;
    bool angle_ok = lm.oc.degenerate;
    if (!angle_ok && dist > 0.0) {
      const double cosv = clamp_unit(lm.oc.mean_dir.dot((cq - lm.X) / dist));
      angle_ok = std::acos(cosv) <= lm.oc.max_angle / 2.0 + cfg.angle_slack;
    }
    const auto px = project(cam, pose, lm.X);
    const bool in_image = px.has_value() && cam.contains(*px);
    if (distance_ok && angle_ok && in_image) out.push_back(lm.id);
  }
  return out;
}

// Exhaustive-sort k-NN reference; test use only.
inline std::vector<KnnResult> oracle_knn(const Descriptor& query,
                                         const std::vector<Descriptor>& database,
                                         size_t k) {
  std::vector<KnnResult> all;
  for (size_t i = 0; i < database.size(); ++i) {
    all.push_back({i, (database[i] - query).norm()});
  }
  std::sort(all.begin(), all.end(), [](const KnnResult& a, const KnnResult& b) {
    return a.distance != b.distance ? a.distance < b.distance
                                    : a.index < b.index;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace ocloc
