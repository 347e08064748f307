#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ocloc/map.hpp"

namespace ocloc {

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IngestedModel {
  std::vector<ImageRecord> images;
  std::vector<Track> tracks;
};

namespace detail {

inline std::ifstream open_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("missing file: " + path.string());
  }
  return in;
}

[[noreturn]] inline void malformed(const std::filesystem::path& path, int line,
                                   const std::string& what) {
  throw IngestError("malformed line " + std::to_string(line) + " in " +
                    path.filename().string() + ": " + what);
}

}  // namespace detail

// Parse the standard three-file SFM text model export (cameras, images,
// points3D). Only SIMPLE_PINHOLE and PINHOLE camera models are accepted.
// Descriptors and semantic labels are zero-filled; supply them via sidecar
// feature files.
inline IngestedModel ingest_colmap_text(const std::filesystem::path& dir) {
  // cameras.txt: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]
  std::unordered_map<uint32_t, PinholeCamera> cameras;
  {
    const auto path = dir / "cameras.txt";
    auto in = detail::open_model_file(path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      uint32_t id;
      std::string model;
      int width, height;
      if (!(ss >> id >> model >> width >> height)) {
        detail::malformed(path, lineno, "expected CAMERA_ID MODEL W H PARAMS");
      }
      double fx, fy, cx, cy;
      if (model == "SIMPLE_PINHOLE") {
        double f;
        if (!(ss >> f >> cx >> cy)) {
          detail::malformed(path, lineno, "SIMPLE_PINHOLE needs 3 params");
        }
        fx = fy = f;
      } else if (model == "PINHOLE") {
        if (!(ss >> fx >> fy >> cx >> cy)) {
          detail::malformed(path, lineno, "PINHOLE needs 4 params");
        }
      } else {
        throw IngestError("unsupported camera model " + model + " at line " +
                          std::to_string(lineno) + " in cameras.txt");
      }
      cameras.emplace(id, PinholeCamera(fx, fy, cx, cy, width, height));
    }
  }

  // images.txt: pairs of lines,
  //   IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME
  //   POINTS2D[] as (X, Y, POINT3D_ID)
  IngestedModel model;
  std::unordered_map<uint32_t, size_t> image_pos;
  {
    const auto path = dir / "images.txt";
    auto in = detail::open_model_file(path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      ImageRecord img;
      double qw, qx, qy, qz;
      uint32_t camera_id;
      if (!(ss >> img.id >> qw >> qx >> qy >> qz >> img.pose.t.x() >>
            img.pose.t.y() >> img.pose.t.z() >> camera_id >> img.name)) {
        detail::malformed(path, lineno, "expected image header line");
      }
      img.pose.q = Eigen::Quaterniond(qw, qx, qy, qz);
      img.pose.normalize();
      const auto cam_it = cameras.find(camera_id);
      if (cam_it == cameras.end()) {
        detail::malformed(path, lineno,
                          "unknown camera id " + std::to_string(camera_id));
      }
      img.camera = cam_it->second;

      if (!std::getline(in, line)) {
        detail::malformed(path, lineno, "missing points2D line");
      }
      ++lineno;
      std::istringstream ps(line);
      double x, y;
      long long point3d_id;
      while (ps >> x >> y >> point3d_id) {
        Keypoint kp;
        kp.px = Pixel(x, y);
        img.keypoints.push_back(std::move(kp));
      }
      if (!ps.eof()) {
        detail::malformed(path, lineno, "bad points2D triple");
      }
      image_pos[img.id] = model.images.size();
      model.images.push_back(std::move(img));
    }
  }

  // points3D.txt: POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID, IDX)
  {
    const auto path = dir / "points3D.txt";
    auto in = detail::open_model_file(path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      uint64_t point_id;
      double x, y, z, err;
      int r, g, b;
      if (!(ss >> point_id >> x >> y >> z >> r >> g >> b >> err)) {
        detail::malformed(path, lineno, "expected point3D header fields");
      }
      Track track;
      uint32_t image_id, kp_index;
      while (ss >> image_id >> kp_index) {
        const auto it = image_pos.find(image_id);
        if (it == image_pos.end()) {
          detail::malformed(path, lineno,
                            "track references unknown image " +
                                std::to_string(image_id));
        }
        if (kp_index >= model.images[it->second].keypoints.size()) {
          detail::malformed(path, lineno, "track keypoint index out of range");
        }
        track.elements.push_back({image_id, kp_index});
      }
      if (!ss.eof()) {
        detail::malformed(path, lineno, "bad track pair");
      }
      model.tracks.push_back(std::move(track));
    }
  }

  return model;
}

}  // namespace ocloc
