#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "ocloc/map.hpp"

namespace ocloc {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io {

constexpr char kMapMagic[6] = {'O', 'C', 'M', 'A', 'P', '1'};
constexpr char kFeatMagic[6] = {'O', 'C', 'F', 'E', 'A', 'T'};
constexpr uint32_t kMapVersion = 1;

// Little-endian binary writer into a memory buffer.
class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t off = buf_.size();
    buf_.resize(off + sizeof(T));
    std::memcpy(buf_.data() + off, &v, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<uint32_t>(static_cast<uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_f32_vector(const DescriptorF& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put<float>(v(i));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > size_) {
      throw FormatError("truncated file");
    }
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const uint32_t len = get<uint32_t>();
    if (pos_ + len > size_) {
      throw FormatError("truncated file");
    }
    std::string s(data_ + pos_, len);
    pos_ += len;
    return s;
  }
  DescriptorF get_f32_vector(uint32_t dim) {
    DescriptorF v(dim);
    for (uint32_t i = 0; i < dim; ++i) v(i) = get<float>();
    return v;
  }
  bool exhausted() const { return pos_ == size_; }

 private:
  const char* data_;
  size_t size_;
  size_t pos_ = 0;
};

inline uint32_t crc32_of(const std::vector<char>& data) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size())));
}

inline void write_keypoint(Writer& w, const Keypoint& kp) {
  w.put<double>(kp.px.x());
  w.put<double>(kp.px.y());
  w.put<uint16_t>(kp.semantic_label);
  w.put<double>(static_cast<double>(kp.score));
  w.put_f32_vector(kp.descriptor);
}

inline Keypoint read_keypoint(Reader& r, uint32_t local_dim) {
  Keypoint kp;
  kp.px.x() = r.get<double>();
  kp.px.y() = r.get<double>();
  kp.semantic_label = r.get<uint16_t>();
  kp.score = static_cast<float>(r.get<double>());
  kp.descriptor = r.get_f32_vector(local_dim);
  return kp;
}

inline void write_pose(Writer& w, const Pose& p) {
  w.put<double>(p.q.w());
  w.put<double>(p.q.x());
  w.put<double>(p.q.y());
  w.put<double>(p.q.z());
  for (int i = 0; i < 3; ++i) w.put<double>(p.t(i));
}

inline Pose read_pose(Reader& r) {
  Pose p;
  const double qw = r.get<double>();
  const double qx = r.get<double>();
  const double qy = r.get<double>();
  const double qz = r.get<double>();
  p.q = Eigen::Quaterniond(qw, qx, qy, qz);
  for (int i = 0; i < 3; ++i) p.t(i) = r.get<double>();
  return p;
}

}  // namespace io

inline void save_map(const LandmarkMap& map, const std::filesystem::path& path) {
  io::Writer payload;
  payload.put<uint32_t>(static_cast<uint32_t>(map.label_palette.size()));
  for (const auto& [id, name] : map.label_palette) {
    payload.put<uint32_t>(id);
    payload.put_string(name);
  }
  for (const auto& img : map.images) {
    payload.put<uint32_t>(img.id);
    payload.put_string(img.name);
    payload.put<double>(img.camera.fx);
    payload.put<double>(img.camera.fy);
    payload.put<double>(img.camera.cx);
    payload.put<double>(img.camera.cy);
    payload.put<uint32_t>(static_cast<uint32_t>(img.camera.width));
    payload.put<uint32_t>(static_cast<uint32_t>(img.camera.height));
    io::write_pose(payload, img.pose);
    payload.put<uint32_t>(static_cast<uint32_t>(img.keypoints.size()));
    for (const auto& kp : img.keypoints) io::write_keypoint(payload, kp);
    payload.put_f32_vector(img.global_descriptor);
  }
  for (const auto& lm : map.landmarks) {
    payload.put<uint64_t>(lm.id);
    for (int i = 0; i < 3; ++i) payload.put<double>(lm.X(i));
    for (int i = 0; i < 3; ++i) payload.put<uint8_t>(lm.color[static_cast<size_t>(i)]);
    payload.put<int32_t>(lm.semantic_label);
    payload.put_f32_vector(lm.descriptor);
    payload.put<uint32_t>(static_cast<uint32_t>(lm.track.elements.size()));
    for (const auto& el : lm.track.elements) {
      payload.put<uint32_t>(el.image_id);
      payload.put<uint32_t>(el.keypoint_index);
    }
    payload.put<double>(lm.oc.max_distance);
    for (int i = 0; i < 3; ++i) payload.put<double>(lm.oc.mean_dir(i));
    payload.put<double>(lm.oc.max_angle);
    payload.put<uint8_t>(lm.oc.degenerate ? 1 : 0);
    payload.put<double>(lm.mean_reproj_err);
  }

  io::Writer header;
  for (char c : io::kMapMagic) header.put<char>(c);
  header.put<uint32_t>(io::kMapVersion);
  header.put<uint32_t>(map.local_dim);
  header.put<uint32_t>(map.global_dim);
  header.put<uint64_t>(static_cast<uint64_t>(map.images.size()));
  header.put<uint64_t>(static_cast<uint64_t>(map.landmarks.size()));
  header.put<uint32_t>(io::crc32_of(payload.bytes()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_map: cannot open " + path.string());
  out.write(header.bytes().data(),
            static_cast<std::streamsize>(header.bytes().size()));
  out.write(payload.bytes().data(),
            static_cast<std::streamsize>(payload.bytes().size()));
  if (!out) throw std::runtime_error("save_map: write failed");
}

inline LandmarkMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_map: cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  io::Reader r(data.data(), data.size());

  char magic[6];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, io::kMapMagic, 6) != 0) {
    throw FormatError("load_map: bad magic");
  }
  const uint32_t version = r.get<uint32_t>();
  if (version != io::kMapVersion) {
    throw FormatError("load_map: unsupported version " + std::to_string(version));
  }
  LandmarkMap map;
  map.local_dim = r.get<uint32_t>();
  map.global_dim = r.get<uint32_t>();
  const uint64_t n_images = r.get<uint64_t>();
  const uint64_t n_landmarks = r.get<uint64_t>();
  const uint32_t stored_crc = r.get<uint32_t>();

  constexpr size_t kHeaderSize = 6 + 4 + 4 + 4 + 8 + 8 + 4;
  if (data.size() < kHeaderSize) throw FormatError("truncated file");
  std::vector<char> payload(data.begin() + kHeaderSize, data.end());
  if (io::crc32_of(payload) != stored_crc) {
    throw FormatError("load_map: checksum failure");
  }

  const uint32_t n_palette = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_palette; ++i) {
    const uint32_t id = r.get<uint32_t>();
    map.label_palette[id] = r.get_string();
  }
  map.images.resize(n_images);
  for (auto& img : map.images) {
    img.id = r.get<uint32_t>();
    img.name = r.get_string();
    img.camera.fx = r.get<double>();
    img.camera.fy = r.get<double>();
    img.camera.cx = r.get<double>();
    img.camera.cy = r.get<double>();
    img.camera.width = static_cast<int>(r.get<uint32_t>());
    img.camera.height = static_cast<int>(r.get<uint32_t>());
    img.pose = io::read_pose(r);
    const uint32_t n_kps = r.get<uint32_t>();
    img.keypoints.resize(n_kps);
    for (auto& kp : img.keypoints) kp = io::read_keypoint(r, map.local_dim);
    img.global_descriptor = r.get_f32_vector(map.global_dim);
  }
  map.landmarks.resize(n_landmarks);
  for (auto& lm : map.landmarks) {
    lm.id = r.get<uint64_t>();
    for (int i = 0; i < 3; ++i) lm.X(i) = r.get<double>();
    for (auto& c : lm.color) c = r.get<uint8_t>();
    lm.semantic_label = r.get<int32_t>();
    lm.descriptor = r.get_f32_vector(map.local_dim);
    const uint32_t n_el = r.get<uint32_t>();
    lm.track.elements.resize(n_el);
    for (auto& el : lm.track.elements) {
      el.image_id = r.get<uint32_t>();
      el.keypoint_index = r.get<uint32_t>();
    }
    lm.oc.max_distance = r.get<double>();
    for (int i = 0; i < 3; ++i) lm.oc.mean_dir(i) = r.get<double>();
    lm.oc.max_angle = r.get<double>();
    lm.oc.degenerate = r.get<uint8_t>() != 0;
    lm.mean_reproj_err = r.get<double>();
  }
  if (!r.exhausted()) {
    throw FormatError("load_map: trailing bytes");
  }
  map.rebuild_index();
  return map;
}

// Per-image feature sidecar: pixel positions, labels, scores, local
// descriptors and one global descriptor, all float32.
struct SidecarFeatures {
  std::vector<Keypoint> keypoints;
  DescriptorF global_descriptor;
};

inline void save_sidecar(const SidecarFeatures& feat,
                         const std::filesystem::path& path) {
  io::Writer w;
  for (char c : io::kFeatMagic) w.put<char>(c);
  const uint32_t local_dim =
      feat.keypoints.empty()
          ? 0
          : static_cast<uint32_t>(feat.keypoints.front().descriptor.size());
  w.put<uint32_t>(local_dim);
  w.put<uint32_t>(static_cast<uint32_t>(feat.global_descriptor.size()));
  w.put<uint32_t>(static_cast<uint32_t>(feat.keypoints.size()));
  for (const auto& kp : feat.keypoints) {
    w.put<float>(static_cast<float>(kp.px.x()));
    w.put<float>(static_cast<float>(kp.px.y()));
    w.put<uint16_t>(kp.semantic_label);
    w.put<float>(kp.score);
    w.put_f32_vector(kp.descriptor);
  }
  w.put_f32_vector(feat.global_descriptor);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_sidecar: cannot open " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw std::runtime_error("save_sidecar: write failed");
}

inline SidecarFeatures load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_sidecar: cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  io::Reader r(data.data(), data.size());
  char magic[6];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, io::kFeatMagic, 6) != 0) {
    throw FormatError("load_sidecar: bad magic");
  }
  const uint32_t local_dim = r.get<uint32_t>();
  const uint32_t global_dim = r.get<uint32_t>();
  const uint32_t n_kps = r.get<uint32_t>();
  SidecarFeatures feat;
  feat.keypoints.resize(n_kps);
  for (auto& kp : feat.keypoints) {
    kp.px.x() = static_cast<double>(r.get<float>());
    kp.px.y() = static_cast<double>(r.get<float>());
    kp.semantic_label = r.get<uint16_t>();
    kp.score = r.get<float>();
    kp.descriptor = r.get_f32_vector(local_dim);
  }
  feat.global_descriptor = r.get_f32_vector(global_dim);
  if (!r.exhausted()) {
    throw FormatError("load_sidecar: trailing bytes");
  }
  return feat;
}

}  // namespace ocloc
