#pragma once

#include "drivefix/stdt/model.hpp"

namespace drivefix {

struct AlignmentWeights {
  double alpha = 0.5;  // angular term
  double beta = 0.05;  // scale term

  void validate() const {
    if (alpha < 0 || beta < 0) throw ConfigError("alignment weights must be >= 0");
  }
};

inline json to_json(const AlignmentWeights& w) {
  return json{{"alpha", w.alpha}, {"beta", w.beta}};
}

inline AlignmentWeights alignment_weights_from_json(const json& j) {
  AlignmentWeights w;
  w.alpha = j.value("alpha", w.alpha);
  w.beta = j.value("beta", w.beta);
  return w;
}

// ---------------------------------------------------------------------------
// Geometry teacher. Per patch center: the ground-truth depth unprojected to an
// ego-frame 3D point, a surface normal from neighboring patch points, and the
// view ray direction. Nine numbers per token, pushed through a fixed seeded
// random projection so the teacher width matches the alignment head.

struct GeometryTeacher {
  ad::Mat feats;           // tokens x c_geo
  std::vector<bool> mask;  // false = sky token, excluded from alignment
};

// Raw 9-dim descriptors for one camera at one timestep, row per patch token.
inline ad::Mat geometry_descriptors(const Image& depth, const Pose& cam_to_ego,
                                    const Intrinsics& intr, int p, double far_plane,
                                    std::vector<bool>* mask = nullptr) {
  if (depth.c != 1) throw ModelError("geometry teacher: expected 1-channel depth");
  if (depth.h % p != 0 || depth.w % p != 0)
    throw ModelError("geometry teacher: patch size must divide depth dimensions");
  int hp = depth.h / p, wp = depth.w / p;
  auto center_point = [&](int py, int px, bool* sky) -> Vec3 {
    double u = px * p + p / 2.0, v = py * p + p / 2.0;
    double d = depth.at(static_cast<int>(v), static_cast<int>(u), 0);
    if (!std::isfinite(d)) {
      if (sky) *sky = true;
      return Vec3::Zero();
    }
    if (sky) *sky = false;
    return intr.ray(u, v) * d;  // camera frame, ray has unit forward component
  };
  ad::Mat out(static_cast<Eigen::Index>(hp) * wp, 9);
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px) {
      bool sky = false;
      Vec3 pc = center_point(py, px, &sky);
      Vec3 ray = intr.ray(px * p + p / 2.0, py * p + p / 2.0).normalized();
      Vec3 normal = Vec3::Zero();
      if (!sky) {
        bool s1 = false, s2 = false, s3 = false, s4 = false;
        Vec3 dx = center_point(py, std::min(px + 1, wp - 1), &s1) -
                  center_point(py, std::max(px - 1, 0), &s2);
        Vec3 dy = center_point(std::min(py + 1, hp - 1), px, &s3) -
                  center_point(std::max(py - 1, 0), px, &s4);
        if (!s1 && !s2 && !s3 && !s4) {
          Vec3 n = dx.cross(dy);
          if (n.norm() > 1e-12) normal = n.normalized();
        }
      }
      Vec3 pe = sky ? Vec3::Zero() : cam_to_ego.apply(pc);
      Vec3 ne = cam_to_ego.R * normal;
      Vec3 re = cam_to_ego.R * ray;
      Eigen::Index row = static_cast<Eigen::Index>(py) * wp + px;
      out.row(row) << pe.x() / far_plane, pe.y() / far_plane, pe.z() / far_plane, ne.x(), ne.y(),
          ne.z(), re.x(), re.y(), re.z();
      if (mask) mask->push_back(!sky);
    }
  return out;
}

inline ad::Mat geometry_projection(uint64_t seed, int c_geo) {
  RngStream rng(seed, "geo/proj");
  ad::Mat w(9, c_geo);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < c_geo; ++j) w(i, j) = rng.normal(0, 1.0 / 3.0);
  return w;
}

// Teacher features for a current window, rows in the token order (view, t,
// patch) used by the denoiser.
inline GeometryTeacher geometry_teacher(const std::vector<std::vector<Image>>& depth_by_time,
                                        const CameraRig& rig, const std::vector<int>& t_indices,
                                        int p, double far_plane, uint64_t seed, int c_geo) {
  ad::Mat proj = geometry_projection(seed, c_geo);
  GeometryTeacher out;
  std::vector<ad::Mat> rows;
  for (int k = 0; k < rig.K; ++k)
    for (int ti : t_indices) {
      const Image& d = depth_by_time.at(ti).at(k);
      rows.push_back(geometry_descriptors(d, rig.cam_to_ego[k], rig.intrinsics[k], p, far_plane,
                                          &out.mask));
    }
  Eigen::Index total = 0;
  for (const auto& r : rows) total += r.rows();
  ad::Mat desc(total, 9);
  Eigen::Index at = 0;
  for (const auto& r : rows) {
    desc.middleRows(at, r.rows()) = r;
    at += r.rows();
  }
  out.feats = desc * proj;
  return out;
}

// ---------------------------------------------------------------------------
// Training sample, already patchified. `cond` holds the conditioning columns
// [guide rgb | depth | semantics] that follow the primary slot in the encoder
// input; the noised latent is filled in per loss evaluation.

struct DiffusionSample {
  ad::Mat x0;        // (V*T*P) x 3p^2 clean rgb patches
  ad::Mat cond;      // (V*T*P) x 7p^2
  ad::Mat hist_raw;  // (V*h*P) x d_in, 0 rows for h=0
  ad::Mat cam;       // V x 16
  std::vector<double> time_cur, time_hist;
  int V = 0, T = 0, Hp = 0, Wp = 0;
  // alignment supervision, optional
  ad::Mat teacher;            // (V*T*P) x c_geo
  std::vector<bool> geo_mask;
  std::string provenance;  // for diagnostics on non-finite losses
};

struct LossBreakdown {
  ad::Var total = nullptr;
  double l_diff = 0, l_angular = 0, l_scale = 0;
};

namespace detail {

inline DenoiserInput to_denoiser_input(const ModelConfig& cfg, const DiffusionSample& s,
                                       const ad::Mat& x_tau, double tau) {
  DenoiserInput in;
  in.V = s.V;
  in.T = s.T;
  in.Hp = s.Hp;
  in.Wp = s.Wp;
  in.cam = s.cam;
  in.time_cur = s.time_cur;
  in.time_hist = s.time_hist;
  in.tau = tau;
  in.hist_raw = s.hist_raw;
  if (s.cond.rows() != s.x0.rows() || s.cond.cols() != cfg.d_in() - cfg.d_out())
    throw ModelError("sample: cond shape mismatch");
  in.cur_raw.resize(s.x0.rows(), cfg.d_in());
  in.cur_raw << x_tau, s.cond;
  // depth/semantic columns only; the corrupted rgb is the restoration input
  if (!cfg.use_guidance) in.cur_raw.rightCols(4 * cfg.p * cfg.p).setZero();
  return in;
}

}  // namespace detail

// Velocity-matching objective on a linear noise interpolation: x_tau =
// (1-tau) x0 + tau eps, target eps - x0, squared error on the prediction.
inline ad::Var diffusion_loss(ad::Tape& t, const ModelConfig& cfg, ParamStore& ps,
                              const DiffusionSample& s, RngStream& rng,
                              ForwardResult* fwd_out = nullptr) {
  if (!s.x0.allFinite() || !s.cond.allFinite() || !s.hist_raw.allFinite())
    throw ModelError("diffusion loss: non-finite sample inputs (sample " + s.provenance + ")");
  double tau = rng.uniform(0, 1);
  ad::Mat eps(s.x0.rows(), s.x0.cols());
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = rng.normal(0, 1);
  ad::Mat x_tau = (1 - tau) * s.x0 + tau * eps;
  DenoiserInput in = detail::to_denoiser_input(cfg, s, x_tau, tau);
  ForwardResult r = denoiser_forward(t, cfg, ps, in);
  if (fwd_out) *fwd_out = r;
  ad::Var loss = t.mse_to(r.pred, eps - s.x0);
  if (!std::isfinite(loss->val(0, 0)))
    throw ModelError("diffusion loss non-finite (sample " + s.provenance + ")");
  return loss;
}

// Base objective plus the geometry alignment terms, tapped mid-stack after
// the temporal and spatial steps and averaged across the two taps.
inline LossBreakdown total_finetune_loss(ad::Tape& t, const ModelConfig& cfg, ParamStore& ps,
                                         const DiffusionSample& s, const AlignmentWeights& w,
                                         RngStream& rng) {
  w.validate();
  LossBreakdown out;
  ForwardResult r;
  ad::Var l_diff = diffusion_loss(t, cfg, ps, s, rng, &r);
  out.l_diff = l_diff->val(0, 0);
  out.total = l_diff;
  if ((w.alpha > 0 || w.beta > 0) && s.teacher.rows() > 0) {
    if (s.teacher.rows() != r.tap_temporal->val.rows())
      throw ModelError("alignment: teacher/token row mismatch");
    ad::Var wp = ps.use(t, "align/w");
    ad::Var bp = ps.use(t, "align/b");
    ad::Var ang = nullptr, sc = nullptr;
    for (ad::Var tap : {r.tap_temporal, r.tap_spatial}) {
      ad::Var proj = t.add_rowvec(t.matmul(tap, wp), bp);
      ad::Var a = t.angular_alignment(proj, s.teacher, s.geo_mask);
      ad::Var c = t.scale_alignment(proj, s.teacher, s.geo_mask);
      ang = ang ? t.add(ang, a) : a;
      sc = sc ? t.add(sc, c) : c;
    }
    ang = t.scale(ang, 0.5);
    sc = t.scale(sc, 0.5);
    out.l_angular = ang->val(0, 0);
    out.l_scale = sc->val(0, 0);
    out.total = t.add(out.total, t.add(t.scale(ang, w.alpha), t.scale(sc, w.beta)));
  }
  if (!std::isfinite(out.total->val(0, 0)))
    throw ModelError("fine-tune loss non-finite (sample " + s.provenance + ")");
  return out;
}

}  // namespace drivefix
