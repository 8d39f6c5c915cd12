#pragma once

#include <optional>

#include "drivefix/core/image.hpp"
#include "drivefix/synthworld/scene.hpp"

namespace drivefix {

struct MultiViewSequence {
  int T = 0, K = 0, H = 0, W = 0;
  // Indexed [t][k].
  std::vector<std::vector<Image>> frames;
  std::vector<std::vector<Image>> depth;  // 1-channel, meters, inf = sky
  std::vector<std::vector<SemMap>> sem;
  CameraRig rig;

  static MultiViewSequence empty(int T, int K, int H, int W) {
    MultiViewSequence s;
    s.T = T;
    s.K = K;
    s.H = H;
    s.W = W;
    s.frames.assign(T, std::vector<Image>(K, Image(H, W, 3)));
    s.depth.assign(T, std::vector<Image>(K, Image(H, W, 1, kSkyDepth)));
    s.sem.assign(T, std::vector<SemMap>(K, SemMap(static_cast<size_t>(H) * W, kSemSky)));
    return s;
  }
};

namespace detail {

struct Hit {
  double z;        // z-depth along camera forward axis
  Vec3 color;
  uint8_t sem;
};

inline Vec3 checker(double u, double v, double scale, const Vec3& a, const Vec3& b) {
  int iu = static_cast<int>(std::floor(u / scale));
  int iv = static_cast<int>(std::floor(v / scale));
  return ((iu + iv) & 1) ? a : b;
}

inline Vec3 stripes(double u, double scale, const Vec3& a, const Vec3& b) {
  int iu = static_cast<int>(std::floor(u / scale));
  return (iu & 1) ? a : b;
}

// Ray r(s) = o + s*d against the ground plane z = 0, |x|,|y| <= extent.
inline std::optional<Hit> hit_ground(const Vec3& o, const Vec3& d, const SceneConfig& cfg) {
  if (std::abs(d.z()) < 1e-12) return std::nullopt;
  double s = -o.z() / d.z();
  if (s <= 1e-9) return std::nullopt;
  Vec3 p = o + s * d;
  if (std::abs(p.x()) > cfg.ground_extent || std::abs(p.y()) > cfg.ground_extent)
    return std::nullopt;
  Hit h;
  h.z = s;  // caller passes d with unit camera-z component
  h.color = checker(p.x(), p.y(), cfg.ground_checker, cfg.ground_color_a, cfg.ground_color_b);
  h.sem = kSemGround;
  return h;
}

// Slab test in the object frame; textures keyed on face-local coordinates.
inline std::optional<Hit> hit_box(const Vec3& o_w, const Vec3& d_w, const BoxObject& box,
                                  const Pose& pose, uint8_t sem_id) {
  Pose inv = pose.inverse();
  Vec3 o = inv.apply(o_w);
  Vec3 d = inv.R * d_w;
  double s_near = -1e30, s_far = 1e30;
  int near_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (std::abs(o[a]) > box.half[a]) return std::nullopt;
      continue;
    }
    double s0 = (-box.half[a] - o[a]) / d[a];
    double s1 = (box.half[a] - o[a]) / d[a];
    if (s0 > s1) std::swap(s0, s1);
    if (s0 > s_near) {
      s_near = s0;
      near_axis = a;
    }
    s_far = std::min(s_far, s1);
    if (s_near > s_far) return std::nullopt;
  }
  if (s_near <= 1e-9 || near_axis < 0) return std::nullopt;
  Vec3 p = o + s_near * d;
  // face-local texture coords: the two axes orthogonal to the hit face
  int ua = (near_axis + 1) % 3, va = (near_axis + 2) % 3;
  Hit h;
  h.z = s_near;
  h.color = box.stripes ? stripes(p[ua] + p[va], box.texture_scale, box.color_a, box.color_b)
                        : checker(p[ua], p[va], box.texture_scale, box.color_a, box.color_b);
  h.sem = sem_id;
  return h;
}

// Closest hit along the world-space ray. d_w must be scaled so its camera-z
// component is 1, making the ray parameter equal to z-depth.
inline Hit trace(const Vec3& o_w, const Vec3& d_w, const Scene& scene, int t) {
  Hit best;
  best.z = kSkyDepth;
  best.color = scene.config.sky_color;
  best.sem = kSemSky;
  if (auto g = hit_ground(o_w, d_w, scene.config); g && g->z < best.z) best = *g;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    auto h = hit_box(o_w, d_w, scene.objects[i], scene.objects[i].traj[t],
                     static_cast<uint8_t>(kSemObjectBase + i));
    if (h && h->z < best.z) best = *h;
  }
  if (best.z > scene.config.far_plane) {
    best.z = kSkyDepth;
    best.color = scene.config.sky_color;
    best.sem = kSemSky;
  }
  return best;
}

}  // namespace detail

// Point-sampled pinhole render with exact per-pixel depth and semantics.
inline MultiViewSequence render_views(const Scene& scene, const CameraRig& rig, int H, int W) {
  if (rig.T() != scene.config.T)
    throw ConfigError("render_views: scene and rig cover different T");
  MultiViewSequence seq = MultiViewSequence::empty(scene.config.T, rig.K, H, W);
  seq.rig = rig;
  for (int t = 0; t < seq.T; ++t) {
    for (int k = 0; k < rig.K; ++k) {
      Pose c2w = rig.cam_to_world(k, t);
      Image& img = seq.frames[t][k];
      Image& dep = seq.depth[t][k];
      SemMap& sm = seq.sem[t][k];
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          // sample on the integer pixel grid so project() and ray() are exact inverses
          Vec3 d_cam = rig.intrinsics[k].ray(x, y);  // camera-z component 1
          Vec3 d_w = c2w.R * d_cam;
          detail::Hit h = detail::trace(c2w.t, d_w, scene, t);
          img.at(y, x, 0) = h.color.x();
          img.at(y, x, 1) = h.color.y();
          img.at(y, x, 2) = h.color.z();
          dep.at(y, x, 0) = h.z;
          sm[static_cast<size_t>(y) * W + x] = h.sem;
        }
      }
    }
  }
  return seq;
}

}  // namespace drivefix
