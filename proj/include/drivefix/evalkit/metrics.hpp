#pragma once

#include <optional>

#include "drivefix/synthworld/render.hpp"

namespace drivefix {

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
  double m = mse(a, b);
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

inline double psnr_from_mse(double m, double max_val = 1.0) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

// Structural similarity with the conventional constants: 11x11 Gaussian
// window (sigma 1.5), K1 = 0.01, K2 = 0.03, luminance range 1. Channels are
// scored independently and averaged; only pixels whose full window fits
// contribute (valid region), images smaller than the window score over the
// clipped window.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  constexpr int R = 5;  // window radius
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double g[2 * R + 1];
  double gsum = 0;
  for (int i = -R; i <= R; ++i) {
    g[i + R] = std::exp(-0.5 * i * i / (1.5 * 1.5));
    gsum += g[i + R];
  }
  for (double& w : g) w /= gsum;

  int y0 = a.h > 2 * R ? R : 0, y1 = a.h > 2 * R ? a.h - R : a.h;
  int x0 = a.w > 2 * R ? R : 0, x1 = a.w > 2 * R ? a.w - R : a.w;
  double acc = 0;
  long count = 0;
  for (int ch = 0; ch < a.c; ++ch)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        // moments of the mean m=(a+b)/2 and half-difference t=(a-b)/2; this
        // makes identical inputs score exactly 1 and the metric bitwise
        // symmetric: 2 mu_a mu_b = 2(mu_m^2 - mu_t^2), var_a + var_b =
        // 2(var_m + var_t), 2 cov = 2(var_m - var_t)
        double mu_m = 0, mu_t = 0, smm = 0, stt = 0, wtot = 0;
        for (int dy = -R; dy <= R; ++dy)
          for (int dx = -R; dx <= R; ++dx) {
            int yy = std::clamp(y + dy, 0, a.h - 1), xx = std::clamp(x + dx, 0, a.w - 1);
            double w = g[dy + R] * g[dx + R];
            double va = a.at(yy, xx, ch), vb = b.at(yy, xx, ch);
            double m = 0.5 * (va + vb), t = 0.5 * (va - vb);
            mu_m += w * m;
            mu_t += w * t;
            smm += w * m * m;
            stt += w * t * t;
            wtot += w;
          }
        mu_m /= wtot;
        mu_t /= wtot;
        double var_m = smm / wtot - mu_m * mu_m;
        double var_t = stt / wtot - mu_t * mu_t;
        acc += ((2 * mu_m * mu_m - 2 * mu_t * mu_t + C1) /
                (2 * mu_m * mu_m + 2 * mu_t * mu_t + C1)) *
               ((2 * var_m - 2 * var_t + C2) / (2 * var_m + 2 * var_t + C2));
        ++count;
      }
  return count ? acc / count : 1.0;
}

namespace detail {

// Is the world point visible (not occluded) in camera k at time t, judged
// against the ground-truth depth map?
inline bool visible_in(const MultiViewSequence& geom, int t, int k, const Vec3& world, double* u_out,
                       double* v_out) {
  Pose w2c = geom.rig.cam_to_world(k, t).inverse();
  Vec3 pc = w2c.apply(world);
  if (pc.z() <= 1e-6) return false;
  Vec2 px = geom.rig.intrinsics[k].project(pc);
  if (px.x() < 0 || px.x() > geom.W - 1 || px.y() < 0 || px.y() > geom.H - 1) return false;
  int xi = static_cast<int>(std::lround(px.x())), yi = static_cast<int>(std::lround(px.y()));
  double d = geom.depth[t][k].at(yi, xi, 0);
  if (!std::isfinite(d)) return false;
  // local depth variation plus a relative band absorbs surface slope
  double slack = 0.01 * pc.z() + 0.05;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      int yy = std::clamp(yi + dy, 0, geom.H - 1), xx = std::clamp(xi + dx, 0, geom.W - 1);
      double dn = geom.depth[t][k].at(yy, xx, 0);
      if (std::isfinite(dn)) slack = std::max(slack, std::abs(dn - d) + 0.01 * pc.z());
    }
  if (pc.z() > d + slack) return false;
  double u = px.x(), v = px.y();
  // identity warps land a hair off pixel centers; snap so they stay exact
  if (std::abs(u - std::round(u)) < 1e-9) u = std::round(u);
  if (std::abs(v - std::round(v)) < 1e-9) v = std::round(v);
  *u_out = u;
  *v_out = v;
  return true;
}

inline double sample_abs_diff(const Image& img, double u, double v, const double* ref) {
  double acc = 0;
  for (int ch = 0; ch < img.c; ++ch) acc += std::abs(img.sample(u, v, ch) - ref[ch]);
  return acc / img.c;
}

}  // namespace detail

// Photometric agreement between cameras on surfaces both can see, using the
// ground-truth geometry for correspondence and occlusion. Returns nothing
// when no overlap exists.
inline std::optional<double> cross_view_consistency(const MultiViewSequence& seq,
                                                    const MultiViewSequence& geom,
                                                    int samples_per_pair = 300,
                                                    uint64_t seed = 0) {
  if (seq.T != geom.T || seq.K != geom.K || seq.H != geom.H || seq.W != geom.W)
    throw std::invalid_argument("cross_view_consistency: sequence/geometry shape mismatch");
  RngStream rng(seed, "eval/xview");
  double acc = 0;
  long n = 0;
  for (int t = 0; t < seq.T; ++t)
    for (int i = 0; i < seq.K; ++i)
      for (int j = 0; j < seq.K; ++j) {
        if (i == j) continue;
        for (int s = 0; s < samples_per_pair; ++s) {
          int x = static_cast<int>(rng.uniform_int(0, seq.W - 1));
          int y = static_cast<int>(rng.uniform_int(0, seq.H - 1));
          double d = geom.depth[t][i].at(y, x, 0);
          if (!std::isfinite(d)) continue;
          Vec3 world = geom.rig.cam_to_world(i, t).apply(geom.rig.intrinsics[i].ray(x, y) * d);
          double u, v;
          if (!detail::visible_in(geom, t, j, world, &u, &v)) continue;
          double ref[4];
          for (int ch = 0; ch < seq.frames[t][i].c; ++ch) ref[ch] = seq.frames[t][i].at(y, x, ch);
          acc += detail::sample_abs_diff(seq.frames[t][j], u, v, ref);
          ++n;
        }
      }
  if (n == 0) return std::nullopt;
  return acc / n;
}

// Frame-to-frame photometric stability under the known scene motion: each
// pixel at time t is traced to its location at t-1 (objects move with their
// trajectories, ground and sky are static), disoccluded or sky pixels are
// excluded, and the mean absolute difference is averaged over time.
inline double temporal_flicker(const MultiViewSequence& seq, const Scene& scene,
                               const MultiViewSequence& geom, int stride = 1) {
  if (seq.T != geom.T || seq.K != geom.K || seq.H != geom.H || seq.W != geom.W)
    throw std::invalid_argument("temporal_flicker: sequence/geometry shape mismatch");
  double acc = 0;
  long n = 0;
  for (int t = 1; t < seq.T; ++t)
    for (int k = 0; k < seq.K; ++k)
      for (int y = 0; y < seq.H; y += stride)
        for (int x = 0; x < seq.W; x += stride) {
          double d = geom.depth[t][k].at(y, x, 0);
          if (!std::isfinite(d)) continue;  // sky
          uint8_t id = geom.sem[t][k][static_cast<size_t>(y) * seq.W + x];
          Vec3 world = geom.rig.cam_to_world(k, t).apply(geom.rig.intrinsics[k].ray(x, y) * d);
          if (id >= kSemObjectBase) {
            int obj = id - kSemObjectBase;
            if (obj >= static_cast<int>(scene.objects.size()))
              throw std::invalid_argument("temporal_flicker: semantic id outside scene objects");
            const Pose& now = scene.object_pose(obj, t);
            const Pose& prev = scene.object_pose(obj, t - 1);
            world = prev.apply(now.inverse().apply(world));
          }
          double u, v;
          if (!detail::visible_in(geom, t - 1, k, world, &u, &v)) continue;
          double ref[4];
          for (int ch = 0; ch < seq.frames[t][k].c; ++ch) ref[ch] = seq.frames[t][k].at(y, x, ch);
          acc += detail::sample_abs_diff(seq.frames[t - 1][k], u, v, ref);
          ++n;
        }
  return n ? acc / n : 0.0;
}

// Per-scene scores. PSNR is split by the corruption keep set: frames the
// degradation kept (reconstruction) versus frames it ghosted (interpolation).
struct MetricReport {
  std::string scene_id;
  double psnr_all = 0;
  double psnr_reconstruction = 0;
  double psnr_interpolation = 0;
  double ssim_all = 0;
  std::optional<double> cross_view;
  double flicker = 0;
};

inline json to_json(const MetricReport& r) {
  json j{{"scene_id", r.scene_id},
         {"psnr_all", r.psnr_all},
         {"psnr_reconstruction", r.psnr_reconstruction},
         {"psnr_interpolation", r.psnr_interpolation},
         {"ssim_all", r.ssim_all},
         {"flicker", r.flicker}};
  if (r.cross_view)
    j["cross_view"] = *r.cross_view;
  else
    j["cross_view"] = nullptr;
  return j;
}

// Scores a sequence against ground truth. `keep_set` lists the timesteps the
// corruption kept; an empty set scores everything as reconstruction.
inline MetricReport score_sequence(const std::string& scene_id, const MultiViewSequence& test,
                                   const MultiViewSequence& gt, const Scene& scene,
                                   const std::vector<int>& keep_set) {
  if (test.T != gt.T || test.K != gt.K || test.H != gt.H || test.W != gt.W)
    throw std::invalid_argument("score_sequence: shape mismatch");
  MetricReport r;
  r.scene_id = scene_id;
  std::vector<bool> kept(gt.T, keep_set.empty());
  for (int t : keep_set)
    if (t >= 0 && t < gt.T) kept[t] = true;
  double mse_all = 0, mse_rec = 0, mse_int = 0;
  long n_all = 0, n_rec = 0, n_int = 0;
  double ssim_acc = 0;
  for (int t = 0; t < gt.T; ++t)
    for (int k = 0; k < gt.K; ++k) {
      double m = mse(test.frames[t][k], gt.frames[t][k]);
      mse_all += m;
      ++n_all;
      ssim_acc += ssim(test.frames[t][k], gt.frames[t][k]);
      if (kept[t]) {
        mse_rec += m;
        ++n_rec;
      } else {
        mse_int += m;
        ++n_int;
      }
    }
  r.psnr_all = psnr_from_mse(mse_all / n_all);
  r.psnr_reconstruction = n_rec ? psnr_from_mse(mse_rec / n_rec) : kPsnrCap;
  r.psnr_interpolation = n_int ? psnr_from_mse(mse_int / n_int) : kPsnrCap;
  r.ssim_all = ssim_acc / n_all;
  r.cross_view = cross_view_consistency(test, gt);
  r.flicker = temporal_flicker(test, scene, gt);
  return r;
}

}  // namespace drivefix
