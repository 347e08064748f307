#include "ocloc/map_io.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "ocloc/formats.hpp"
#include "ocloc/synthetic.hpp"

namespace ocloc {
namespace {

namespace fs = std::filesystem;

LandmarkMap make_test_map() {
  SceneConfig cfg;
  cfg.n_landmarks = 200;
  cfg.n_db_images = 15;
  cfg.n_queries = 1;
  cfg.seed = 99;
  const auto scene = generate_scene(cfg);
  return build_map(scene.gt_map.images, scene.tracks);
}

void expect_maps_bitwise_equal(const LandmarkMap& a, const LandmarkMap& b) {
  ASSERT_EQ(a.images.size(), b.images.size());
  ASSERT_EQ(a.landmarks.size(), b.landmarks.size());
  EXPECT_EQ(a.local_dim, b.local_dim);
  EXPECT_EQ(a.global_dim, b.global_dim);
  EXPECT_EQ(a.label_palette, b.label_palette);
  for (size_t i = 0; i < a.images.size(); ++i) {
    const auto& x = a.images[i];
    const auto& y = b.images[i];
    EXPECT_EQ(x.id, y.id);
    EXPECT_EQ(x.name, y.name);
    EXPECT_EQ(x.camera.fx, y.camera.fx);
    EXPECT_EQ(x.camera.width, y.camera.width);
    EXPECT_EQ(x.pose.q.w(), y.pose.q.w());
    EXPECT_EQ(x.pose.t.x(), y.pose.t.x());
    ASSERT_EQ(x.keypoints.size(), y.keypoints.size());
    for (size_t k = 0; k < x.keypoints.size(); ++k) {
      EXPECT_EQ(x.keypoints[k].px.x(), y.keypoints[k].px.x());
      EXPECT_EQ(x.keypoints[k].px.y(), y.keypoints[k].px.y());
      EXPECT_EQ(x.keypoints[k].semantic_label, y.keypoints[k].semantic_label);
      EXPECT_EQ(x.keypoints[k].score, y.keypoints[k].score);
      EXPECT_TRUE(x.keypoints[k].descriptor == y.keypoints[k].descriptor);
    }
    EXPECT_TRUE(x.global_descriptor == y.global_descriptor);
  }
  for (size_t i = 0; i < a.landmarks.size(); ++i) {
    const auto& x = a.landmarks[i];
    const auto& y = b.landmarks[i];
    EXPECT_EQ(x.id, y.id);
    EXPECT_EQ(x.X.x(), y.X.x());
    EXPECT_EQ(x.X.y(), y.X.y());
    EXPECT_EQ(x.X.z(), y.X.z());
    EXPECT_EQ(x.color, y.color);
    EXPECT_EQ(x.semantic_label, y.semantic_label);
    EXPECT_TRUE(x.descriptor == y.descriptor);
    ASSERT_EQ(x.track.elements.size(), y.track.elements.size());
    for (size_t t = 0; t < x.track.elements.size(); ++t) {
      EXPECT_EQ(x.track.elements[t].image_id, y.track.elements[t].image_id);
      EXPECT_EQ(x.track.elements[t].keypoint_index,
                y.track.elements[t].keypoint_index);
    }
    EXPECT_EQ(x.oc.max_distance, y.oc.max_distance);
    EXPECT_EQ(x.oc.mean_dir.x(), y.oc.mean_dir.x());
    EXPECT_EQ(x.oc.max_angle, y.oc.max_angle);
    EXPECT_EQ(x.oc.degenerate, y.oc.degenerate);
    EXPECT_EQ(x.mean_reproj_err, y.mean_reproj_err);
  }
}

TEST(MapIo, RoundTripBitExact) {
  const auto map = make_test_map();
  const auto path = fs::temp_directory_path() / "ocloc_roundtrip.ocmap";
  save_map(map, path);
  const auto loaded = load_map(path);
  expect_maps_bitwise_equal(map, loaded);
  fs::remove(path);
}

TEST(MapIo, WrongMagicRejected) {
  const auto path = fs::temp_directory_path() / "ocloc_badmagic.ocmap";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAPXXXXXXXXXXXXXXXXXXXXXXXXXXXXXXX";
  }
  EXPECT_THROW(load_map(path), FormatError);
  fs::remove(path);
}

TEST(MapIo, TruncatedFileRejected) {
  const auto map = make_test_map();
  const auto path = fs::temp_directory_path() / "ocloc_trunc.ocmap";
  save_map(map, path);
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  EXPECT_THROW(load_map(path), FormatError);
  fs::remove(path);
}

TEST(MapIo, CorruptedPayloadFailsChecksum) {
  const auto map = make_test_map();
  const auto path = fs::temp_directory_path() / "ocloc_corrupt.ocmap";
  save_map(map, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    const char c = 0x5a;
    f.write(&c, 1);
  }
  EXPECT_THROW(load_map(path), FormatError);
  fs::remove(path);
}

TEST(SidecarIo, RoundTrip) {
  SceneConfig cfg;
  cfg.n_landmarks = 50;
  cfg.n_db_images = 6;
  cfg.n_queries = 1;
  cfg.seed = 7;
  const auto scene = generate_scene(cfg);
  const auto& img = scene.gt_map.images.front();

  SidecarFeatures feat{img.keypoints, img.global_descriptor};
  const auto path = fs::temp_directory_path() / "ocloc_feat.feat";
  save_sidecar(feat, path);
  const auto loaded = load_sidecar(path);
  ASSERT_EQ(loaded.keypoints.size(), feat.keypoints.size());
  for (size_t i = 0; i < feat.keypoints.size(); ++i) {
    // sidecar pixel coordinates are float32: the loaded value must equal
    // the original after one float rounding, and carry no extra precision
    const volatile float qx = static_cast<float>(feat.keypoints[i].px.x());
    const volatile float qy = static_cast<float>(feat.keypoints[i].px.y());
    EXPECT_EQ(loaded.keypoints[i].px.x(), static_cast<double>(qx));
    EXPECT_EQ(loaded.keypoints[i].px.y(), static_cast<double>(qy));
    EXPECT_EQ(loaded.keypoints[i].semantic_label,
              feat.keypoints[i].semantic_label);
    EXPECT_TRUE(loaded.keypoints[i].descriptor == feat.keypoints[i].descriptor);
  }
  EXPECT_TRUE(loaded.global_descriptor == feat.global_descriptor);
  fs::remove(path);
}

TEST(PoseFile, RoundTripAndFailureLines) {
  std::vector<PoseLine> lines;
  lines.push_back(
      {"q1.jpg", Pose(Eigen::Quaterniond(1, 0, 0, 0), Eigen::Vector3d(1, 2, 3)),
       ""});
  lines.push_back({"q2.jpg", std::nullopt, "no retrieval hypothesis"});
  const auto path = fs::temp_directory_path() / "ocloc_poses.txt";
  write_pose_file(lines, path);
  const auto loaded = read_pose_file(path);
  ASSERT_EQ(loaded.size(), 2u);
  ASSERT_TRUE(loaded[0].pose.has_value());
  EXPECT_EQ(loaded[0].pose->t.x(), 1.0);
  EXPECT_FALSE(loaded[1].pose.has_value());
  EXPECT_EQ(loaded[1].failure_reason, "no retrieval hypothesis");
  fs::remove(path);
}

TEST(PoseFile, MalformedQuaternionReportsLine) {
  const auto path = fs::temp_directory_path() / "ocloc_badposes.txt";
  {
    std::ofstream out(path);
    out << "q1.jpg 1 0 0 0 1 2 3\n";
    out << "q2.jpg garbage 0 0 0 1 2 3\n";
  }
  try {
    read_pose_file(path);
    FAIL() << "expected PoseFileError";
  } catch (const PoseFileError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  fs::remove(path);
}

}  // namespace
}  // namespace ocloc
