#pragma once

#include "drivefix/core/rng.hpp"
#include "drivefix/synthworld/render.hpp"

namespace drivefix {

struct SparsityBand {
  int t_start = 0, t_end = 0;  // half-open [t_start, t_end)
  int n = 1;                   // keep every n-th frame (multiples of n)
};

struct CorruptionSpec {
  // geometric / perspective jitter on camera extrinsics
  double sigma_rot = 0.0;    // rad
  double sigma_trans = 0.0;  // m
  // temporal consistency degradation
  std::vector<SparsityBand> bands;  // empty = n(t)=1 everywhere
  double ghost_w_min = 0.5, ghost_w_max = 0.5;
  double kept_blur = 0.0;  // blend weight toward 3x3 blur on kept frames in n>1 bands
  // multi-view radiometric inconsistency (per-camera, per-scene constants)
  double gain_min = 1.0, gain_max = 1.0;
  double offset_min = 0.0, offset_max = 0.0;
  double wb_min = 1.0, wb_max = 1.0;

  void validate() const {
    if (sigma_rot < 0 || sigma_trans < 0) throw ConfigError("corruption: sigma must be >= 0");
    if (gain_max < gain_min || offset_max < offset_min || wb_max < wb_min ||
        ghost_w_max < ghost_w_min)
      throw ConfigError("corruption: range not well-ordered");
    for (const auto& b : bands)
      if (b.n < 1 || b.t_end < b.t_start) throw ConfigError("corruption: bad sparsity band");
  }

  int n_at(int t) const {
    for (const auto& b : bands)
      if (t >= b.t_start && t < b.t_end) return b.n;
    return 1;
  }

  static CorruptionSpec defaults(int T) {
    CorruptionSpec s;
    s.sigma_rot = 0.012;
    s.sigma_trans = 0.10;
    s.bands = {{0, T / 2, 2}, {T / 2, T, 3}};
    s.ghost_w_min = 0.35;
    s.ghost_w_max = 0.65;
    s.kept_blur = 0.5;
    s.gain_min = 0.75;
    s.gain_max = 1.35;
    s.offset_min = -0.08;
    s.offset_max = 0.08;
    s.wb_min = 0.85;
    s.wb_max = 1.15;
    return s;
  }
};

inline json to_json(const CorruptionSpec& s) {
  json bands = json::array();
  for (const auto& b : s.bands)
    bands.push_back({{"t_start", b.t_start}, {"t_end", b.t_end}, {"n", b.n}});
  return json{{"sigma_rot", s.sigma_rot},   {"sigma_trans", s.sigma_trans},
              {"bands", bands},             {"ghost_w_min", s.ghost_w_min},
              {"ghost_w_max", s.ghost_w_max}, {"kept_blur", s.kept_blur},
              {"gain_min", s.gain_min},     {"gain_max", s.gain_max},
              {"offset_min", s.offset_min}, {"offset_max", s.offset_max},
              {"wb_min", s.wb_min},         {"wb_max", s.wb_max}};
}

inline CorruptionSpec corruption_spec_from_json(const json& j) {
  CorruptionSpec s;
  s.sigma_rot = j.value("sigma_rot", 0.0);
  s.sigma_trans = j.value("sigma_trans", 0.0);
  if (j.contains("bands"))
    for (const auto& jb : j["bands"])
      s.bands.push_back({jb["t_start"], jb["t_end"], jb["n"]});
  s.ghost_w_min = j.value("ghost_w_min", 0.5);
  s.ghost_w_max = j.value("ghost_w_max", 0.5);
  s.kept_blur = j.value("kept_blur", 0.0);
  s.gain_min = j.value("gain_min", 1.0);
  s.gain_max = j.value("gain_max", 1.0);
  s.offset_min = j.value("offset_min", 0.0);
  s.offset_max = j.value("offset_max", 0.0);
  s.wb_min = j.value("wb_min", 1.0);
  s.wb_max = j.value("wb_max", 1.0);
  return s;
}

// Random axis-angle (|angle| ~ N(0, sigma_rot), clamped at 3 sigma) composed
// onto each camera rotation, plus a clamped Gaussian translation offset.
// Identity when both sigmas are zero. Draw parameters are appended to `log`.
inline CameraRig jitter_extrinsics(const CameraRig& rig, const CorruptionSpec& spec,
                                   RngStream& rng, json* log = nullptr) {
  CameraRig out = rig;
  for (int k = 0; k < rig.K; ++k) {
    double angle = 0.0;
    Vec3 axis{0, 0, 1}, dt{0, 0, 0};
    if (spec.sigma_rot > 0) {
      // uniform direction on the sphere
      double z = rng.uniform(-1, 1), phi = rng.uniform(0, 2 * M_PI);
      double r = std::sqrt(std::max(0.0, 1 - z * z));
      axis = {r * std::cos(phi), r * std::sin(phi), z};
      angle = std::clamp(rng.normal(0, spec.sigma_rot), -3 * spec.sigma_rot, 3 * spec.sigma_rot);
      out.cam_to_ego[k].R = axis_angle(axis, angle) * out.cam_to_ego[k].R;
    }
    if (spec.sigma_trans > 0) {
      for (int a = 0; a < 3; ++a)
        dt[a] = std::clamp(rng.normal(0, spec.sigma_trans), -3 * spec.sigma_trans,
                           3 * spec.sigma_trans);
      out.cam_to_ego[k].t += dt;
    }
    if (log)
      log->push_back({{"cam", k},
                      {"axis", to_json(axis)},
                      {"angle", angle},
                      {"dt", to_json(dt)}});
  }
  return out;
}

namespace detail {

inline Image blur3(const Image& img) {
  // separable binomial [1 2 1]/4
  Image tmp(img.h, img.w, img.c), out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.w - 1);
        tmp.at(y, x, ch) =
            0.25 * img.at(y, xm, ch) + 0.5 * img.at(y, x, ch) + 0.25 * img.at(y, xp, ch);
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.h - 1);
        out.at(y, x, ch) =
            0.25 * tmp.at(ym, x, ch) + 0.5 * tmp.at(y, x, ch) + 0.25 * tmp.at(yp, x, ch);
      }
  return out;
}

}  // namespace detail

// Sparse-reconstruction emulation: frames outside the keep set become a convex
// ghost blend of the two nearest kept frames; kept frames in n>1 bands get a
// mild blur. RGB only; depth/semantics pass through. Identity when every band
// has n=1 (or no bands).
inline MultiViewSequence degrade_temporal(const MultiViewSequence& seq, const CorruptionSpec& spec,
                                          RngStream& rng, json* log = nullptr) {
  MultiViewSequence out = seq;
  if (seq.T < 2) {
    if (log) (*log)["warning"] = "T < 2, temporal degradation skipped";
    return out;
  }
  std::vector<int> kept;
  for (int t = 0; t < seq.T; ++t)
    if (t % spec.n_at(t) == 0) kept.push_back(t);
  if (log) (*log)["keep_set"] = kept;

  json frames = json::array();
  for (int t = 0; t < seq.T; ++t) {
    bool is_kept = t % spec.n_at(t) == 0;
    if (is_kept) {
      if (spec.n_at(t) > 1 && spec.kept_blur > 0) {
        for (int k = 0; k < seq.K; ++k) {
          Image b = detail::blur3(seq.frames[t][k]);
          for (size_t i = 0; i < b.v.size(); ++i)
            out.frames[t][k].v[i] =
                (1 - spec.kept_blur) * seq.frames[t][k].v[i] + spec.kept_blur * b.v[i];
        }
      }
      frames.push_back({{"t", t}, {"kept", true}});
      continue;
    }
    auto it = std::lower_bound(kept.begin(), kept.end(), t);
    int next = it == kept.end() ? -1 : *it;
    int prev = it == kept.begin() ? -1 : *(it - 1);
    if (prev < 0) prev = next;
    if (next < 0) next = prev;
    double w = rng.uniform(spec.ghost_w_min, spec.ghost_w_max);
    for (int k = 0; k < seq.K; ++k)
      for (size_t i = 0; i < out.frames[t][k].v.size(); ++i)
        out.frames[t][k].v[i] =
            w * seq.frames[prev][k].v[i] + (1 - w) * seq.frames[next][k].v[i];
    frames.push_back({{"t", t}, {"kept", false}, {"prev", prev}, {"next", next}, {"w", w}});
  }
  if (log) (*log)["frames"] = std::move(frames);
  return out;
}

// Per-camera, per-scene gain / offset / white balance, constant over time
// (calibration mismatch, not flicker). Identity for degenerate ranges
// gain=1, offset=0, wb=1.
inline MultiViewSequence degrade_radiometric(const MultiViewSequence& seq,
                                             const CorruptionSpec& spec, RngStream& rng,
                                             json* log = nullptr) {
  MultiViewSequence out = seq;
  for (int k = 0; k < seq.K; ++k) {
    double g = rng.uniform(spec.gain_min, spec.gain_max);
    double b = rng.uniform(spec.offset_min, spec.offset_max);
    Vec3 wb{rng.uniform(spec.wb_min, spec.wb_max), rng.uniform(spec.wb_min, spec.wb_max),
            rng.uniform(spec.wb_min, spec.wb_max)};
    if (log) log->push_back({{"cam", k}, {"gain", g}, {"offset", b}, {"wb", to_json(wb)}});
    bool identity = g == 1.0 && b == 0.0 && wb == Vec3(1, 1, 1);
    if (identity) continue;
    for (int t = 0; t < seq.T; ++t) {
      Image& img = out.frames[t][k];
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
          for (int ch = 0; ch < 3; ++ch)
            img.at(y, x, ch) = std::clamp(g * wb[ch] * img.at(y, x, ch) + b, 0.0, 1.0);
    }
  }
  return out;
}

struct CorruptionResult {
  MultiViewSequence seq;
  json manifest;
};

// Full taxonomy in fixed order: extrinsic jitter (re-render with the perturbed
// rig), then temporal ghosting, then radiometric mismatch.
inline CorruptionResult corrupt_sequence(const Scene& scene, const CameraRig& rig, int H, int W,
                                         const CorruptionSpec& spec, uint64_t seed) {
  spec.validate();
  SeedBank bank(seed);
  json manifest;
  manifest["spec"] = to_json(spec);
  manifest["seed"] = seed;

  RngStream jrng = bank.stream("corrupt/jitter");
  manifest["jitter"] = json::array();
  CameraRig jittered = jitter_extrinsics(rig, spec, jrng, &manifest["jitter"]);
  MultiViewSequence seq = (spec.sigma_rot > 0 || spec.sigma_trans > 0)
                              ? render_views(scene, jittered, H, W)
                              : render_views(scene, rig, H, W);

  RngStream trng = bank.stream("corrupt/temporal");
  manifest["temporal"] = json::object();
  seq = degrade_temporal(seq, spec, trng, &manifest["temporal"]);

  RngStream rrng = bank.stream("corrupt/radiometric");
  manifest["radiometric"] = json::array();
  seq = degrade_radiometric(seq, spec, rrng, &manifest["radiometric"]);

  return {std::move(seq), std::move(manifest)};
}

}  // namespace drivefix
