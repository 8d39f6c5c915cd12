#pragma once

#include <filesystem>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <string>

#include "drivefix/synthworld/render.hpp"

namespace drivefix {

namespace fs = std::filesystem;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- PNG helpers (8-bit RGB, 16-bit depth with 0 = sky, 8-bit ids) ----

inline void write_rgb_png(const fs::path& path, const Image& img) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);
      // OpenCV stores BGR
      for (int ch = 0; ch < 3; ++ch)
        px[2 - ch] = static_cast<uint8_t>(
            std::clamp(std::lround(img.at(y, x, ch) * 255.0), 0l, 255l));
    }
  if (!cv::imwrite(path.string(), m)) throw IoError("failed to write " + path.string());
}

inline Image read_rgb_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("failed to read " + path.string());
  Image img(m.rows, m.cols, 3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      auto px = m.at<cv::Vec3b>(y, x);
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = px[2 - ch] / 255.0;
    }
  return img;
}

inline void write_depth_png(const fs::path& path, const Image& depth, double scale) {
  cv::Mat m(depth.h, depth.w, CV_16UC1);
  for (int y = 0; y < depth.h; ++y)
    for (int x = 0; x < depth.w; ++x) {
      double d = depth.at(y, x, 0);
      uint16_t enc = 0;  // 0 is the sky sentinel
      if (std::isfinite(d))
        enc = static_cast<uint16_t>(std::clamp(std::lround(d * scale), 1l, 65535l));
      m.at<uint16_t>(y, x) = enc;
    }
  if (!cv::imwrite(path.string(), m)) throw IoError("failed to write " + path.string());
}

inline Image read_depth_png(const fs::path& path, double scale) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_16UC1) throw IoError("failed to read depth " + path.string());
  Image depth(m.rows, m.cols, 1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      uint16_t enc = m.at<uint16_t>(y, x);
      depth.at(y, x, 0) = enc == 0 ? kSkyDepth : enc / scale;
    }
  return depth;
}

inline void write_sem_png(const fs::path& path, const SemMap& sem, int h, int w) {
  cv::Mat m(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at<uint8_t>(y, x) = sem[static_cast<size_t>(y) * w + x];
  if (!cv::imwrite(path.string(), m)) throw IoError("failed to write " + path.string());
}

inline SemMap read_sem_png(const fs::path& path, int& h, int& w) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_8UC1) throw IoError("failed to read sem " + path.string());
  h = m.rows;
  w = m.cols;
  SemMap sem(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) sem[static_cast<size_t>(y) * w + x] = m.at<uint8_t>(y, x);
  return sem;
}

// ---- scene directory layout ----

inline std::string frame_name(int t, int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t%03d_c%d.png", t, k);
  return buf;
}

inline double depth_scale_for(double far_plane) { return 65535.0 / far_plane; }

// Writes scene_<id>/: meta.json + rgb/ + depth/ + sem/. When `scene` is
// supplied the generator inputs (config, seed, object trajectories) are
// stored so GT motion can be replayed by the metrics.
inline void write_scene_dir(const fs::path& dir, const MultiViewSequence& seq,
                            const Scene* scene = nullptr, json extra_meta = json::object()) {
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "sem");
  double far = scene ? scene->config.far_plane : 100.0;
  if (extra_meta.contains("far_plane")) far = extra_meta["far_plane"];
  double dscale = depth_scale_for(far);

  json meta;
  meta["T"] = seq.T;
  meta["K"] = seq.K;
  meta["H"] = seq.H;
  meta["W"] = seq.W;
  meta["far_plane"] = far;
  meta["depth_scale"] = dscale;
  meta["depth_sky_sentinel"] = 0;
  meta["rig"] = to_json(seq.rig);
  if (scene) meta["scene"] = to_json(*scene);
  for (auto& [k, v] : extra_meta.items()) meta[k] = v;

  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(2) << "\n";

  for (int t = 0; t < seq.T; ++t)
    for (int k = 0; k < seq.K; ++k) {
      write_rgb_png(dir / "rgb" / frame_name(t, k), seq.frames[t][k]);
      write_depth_png(dir / "depth" / frame_name(t, k), seq.depth[t][k], dscale);
      write_sem_png(dir / "sem" / frame_name(t, k), seq.sem[t][k], seq.H, seq.W);
    }
}

struct LoadedScene {
  MultiViewSequence seq;
  json meta;
  std::optional<Scene> scene;
};

inline LoadedScene read_scene_dir(const fs::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw IoError("missing meta.json in " + dir.string());
  json meta = json::parse(mf);
  LoadedScene out;
  out.meta = meta;
  int T = meta["T"], K = meta["K"], H = meta["H"], W = meta["W"];
  double dscale = meta["depth_scale"];
  out.seq = MultiViewSequence::empty(T, K, H, W);
  out.seq.rig = rig_from_json(meta["rig"]);
  if (meta.contains("scene")) out.scene = scene_from_json(meta["scene"]);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      out.seq.frames[t][k] = read_rgb_png(dir / "rgb" / frame_name(t, k));
      out.seq.depth[t][k] = read_depth_png(dir / "depth" / frame_name(t, k), dscale);
      int h, w;
      out.seq.sem[t][k] = read_sem_png(dir / "sem" / frame_name(t, k), h, w);
    }
  return out;
}

// Structural check used by tests and by pseudo-GT emission.
inline bool validate_scene_dir(const fs::path& dir, std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (!fs::exists(dir / "meta.json")) return fail("missing meta.json");
  json meta;
  try {
    std::ifstream mf(dir / "meta.json");
    meta = json::parse(mf);
  } catch (const std::exception& e) {
    return fail(std::string("bad meta.json: ") + e.what());
  }
  for (const char* key : {"T", "K", "H", "W", "depth_scale", "rig"})
    if (!meta.contains(key)) return fail(std::string("meta.json missing key ") + key);
  int T = meta["T"], K = meta["K"];
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k)
      for (const char* sub : {"rgb", "depth", "sem"})
        if (!fs::exists(dir / sub / frame_name(t, k)))
          return fail(std::string(sub) + "/" + frame_name(t, k) + " missing");
  return true;
}

// FNV-1a digest over all regular files (sorted relative paths + contents).
inline std::string digest_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& f : files) {
    h = fnv1a64(fs::relative(f, dir).string(), h);
    std::ifstream in(f, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a64(bytes, h);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string digest_file(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  if (!in) throw IoError("digest_file: cannot open " + f.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace drivefix
