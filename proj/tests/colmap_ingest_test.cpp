#include "ocloc/colmap_ingest.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

namespace ocloc {
namespace {

namespace fs = std::filesystem;

class IngestFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    // one directory per test case: ctest may run cases in parallel
    dir_ = fs::temp_directory_path() /
           (std::string("ocloc_ingest_") +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name);
    out << content;
  }

  // 2 cameras, 3 images, 5 points
  void write_standard_fixture() {
    write("cameras.txt",
          "# comment\n"
          "1 SIMPLE_PINHOLE 640 480 500 320 240\n"
          "2 PINHOLE 800 600 420 410 400 300\n");
    write("images.txt",
          "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n"
          "1 1 0 0 0 0.5 0 1 1 a.jpg\n"
          "10 20 -1 100 30 2\n"
          "2 0.7071067811865476 0 0.7071067811865476 0 0 0 2 2 b.jpg\n"
          "11 21 0 101 31 3 102 32 4\n"
          "3 1 0 0 0 1 2 3 1 c.jpg\n"
          "12 22 0 103 33 1\n");
    write("points3D.txt",
          "# POINT3D_ID X Y Z R G B ERROR TRACK[]\n"
          "0 1 2 3 255 0 0 0.5 2 1 3 0\n"
          "1 4 5 6 0 255 0 0.2 2 2\n"
          "2 0 0 1 0 0 255 0.1 1 0\n"
          "3 1 1 1 10 20 30 0.0 2 0\n"
          "4 2 2 2 1 2 3 0.9 3 1\n");
  }

  fs::path dir_;
};

TEST_F(IngestFixture, ParsesStandardModel) {
  write_standard_fixture();
  const auto model = ingest_colmap_text(dir_);
  ASSERT_EQ(model.images.size(), 3u);
  ASSERT_EQ(model.tracks.size(), 5u);

  const auto& a = model.images[0];
  EXPECT_EQ(a.id, 1u);
  EXPECT_EQ(a.name, "a.jpg");
  EXPECT_DOUBLE_EQ(a.camera.fx, 500.0);
  EXPECT_DOUBLE_EQ(a.camera.fy, 500.0);
  EXPECT_EQ(a.camera.width, 640);
  EXPECT_EQ(a.keypoints.size(), 2u);
  EXPECT_DOUBLE_EQ(a.keypoints[1].px.x(), 100.0);
  EXPECT_DOUBLE_EQ(a.pose.t.x(), 0.5);

  const auto& b = model.images[1];
  EXPECT_DOUBLE_EQ(b.camera.fx, 420.0);
  EXPECT_DOUBLE_EQ(b.camera.fy, 410.0);
  EXPECT_EQ(b.keypoints.size(), 3u);

  // descriptors and labels zero-filled
  EXPECT_EQ(a.keypoints[0].descriptor.size(), 0);
  EXPECT_EQ(a.keypoints[0].semantic_label, 0);

  EXPECT_EQ(model.tracks[0].elements.size(), 2u);
  EXPECT_EQ(model.tracks[0].elements[0].image_id, 2u);
  EXPECT_EQ(model.tracks[0].elements[0].keypoint_index, 1u);
}

TEST_F(IngestFixture, EmptyPointsFileGivesZeroTracks) {
  write_standard_fixture();
  write("points3D.txt", "# empty\n");
  const auto model = ingest_colmap_text(dir_);
  EXPECT_EQ(model.images.size(), 3u);
  EXPECT_EQ(model.tracks.size(), 0u);
}

TEST_F(IngestFixture, UnsupportedCameraModelNamed) {
  write_standard_fixture();
  write("cameras.txt", "1 RADIAL 640 480 500 320 240 0.1\n");
  try {
    ingest_colmap_text(dir_);
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("RADIAL"), std::string::npos);
  }
}

TEST_F(IngestFixture, MissingFile) {
  write_standard_fixture();
  fs::remove(dir_ / "points3D.txt");
  EXPECT_THROW(ingest_colmap_text(dir_), IngestError);
}

TEST_F(IngestFixture, MalformedLineReportsLineNumber) {
  write_standard_fixture();
  write("points3D.txt", "0 1 2 not_a_number 255 0 0 0.5 2 1\n");
  try {
    ingest_colmap_text(dir_);
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST_F(IngestFixture, TrackReferencingUnknownImageRejected) {
  write_standard_fixture();
  write("points3D.txt", "0 1 2 3 255 0 0 0.5 99 0\n");
  EXPECT_THROW(ingest_colmap_text(dir_), IngestError);
}

}  // namespace
}  // namespace ocloc
