#pragma once

#include "drivefix/objectives/losses.hpp"
#include "drivefix/synthworld/dataset.hpp"

namespace drivefix {

struct RestoreConfig {
  int h = 2;       // history length
  int steps = 8;   // sampler steps
  int chunk = 1;   // timesteps restored per forward pass
  enum class ColdStart { DegradedAsHistory, ReplicateFirst };
  ColdStart cold_start = ColdStart::DegradedAsHistory;
  uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw ConfigError("restore: steps must be >= 1");
    if (h < 0) throw ConfigError("restore: h must be >= 0");
    if (chunk < 1) throw ConfigError("restore: chunk must be >= 1");
  }
};

inline json to_json(const RestoreConfig& c) {
  return json{{"h", c.h},
              {"steps", c.steps},
              {"chunk", c.chunk},
              {"cold_start", c.cold_start == RestoreConfig::ColdStart::DegradedAsHistory
                                 ? "degraded_as_history"
                                 : "replicate_first"},
              {"seed", c.seed}};
}

inline RestoreConfig restore_config_from_json(const json& j) {
  RestoreConfig c;
  c.h = j.value("h", c.h);
  c.steps = j.value("steps", c.steps);
  c.chunk = j.value("chunk", c.chunk);
  std::string cs = j.value("cold_start", "degraded_as_history");
  c.cold_start = cs == "replicate_first" ? RestoreConfig::ColdStart::ReplicateFirst
                                         : RestoreConfig::ColdStart::DegradedAsHistory;
  c.seed = j.value("seed", c.seed);
  return c;
}

// Deterministic Euler integration of the learned velocity field from tau = 1
// (seeded noise) down to 0. Returns the clean-image estimate in patch space.
inline ad::Mat sample_restore(const ModelConfig& cfg, ParamStore& ps, const ad::Mat& cond,
                              const ad::Mat& hist_raw, const ad::Mat& cam,
                              const std::vector<double>& time_cur,
                              const std::vector<double>& time_hist, int V, int T, int Hp, int Wp,
                              const RestoreConfig& rcfg, RngStream& noise_rng) {
  rcfg.validate();
  ad::Mat x(static_cast<Eigen::Index>(V) * T * Hp * Wp, cfg.d_out());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = noise_rng.normal(0, 1);
  double dt = 1.0 / rcfg.steps;
  for (int i = rcfg.steps; i >= 1; --i) {
    double tau = static_cast<double>(i) / rcfg.steps;
    DenoiserInput in;
    in.V = V;
    in.T = T;
    in.Hp = Hp;
    in.Wp = Wp;
    in.cam = cam;
    in.time_cur = time_cur;
    in.time_hist = time_hist;
    in.tau = tau;
    in.hist_raw = hist_raw;
    in.cur_raw.resize(x.rows(), cfg.d_in());
    in.cur_raw << x, cond;
    if (!cfg.use_guidance) in.cur_raw.rightCols(4 * cfg.p * cfg.p).setZero();
    ad::Tape tape;
    ForwardResult r = denoiser_forward(tape, cfg, ps, in);
    x -= dt * r.pred->val;  // dx/dtau = v
  }
  return x;
}

// Autoregressive restoration: chunks restored in time order, history slots
// filled with previously restored frames once available; all K views of a
// chunk share one forward pass.
inline MultiViewSequence restore_sequence(const ModelConfig& cfg, ParamStore& ps,
                                          const MultiViewSequence& degraded, double far_plane,
                                          const RestoreConfig& rcfg) {
  cfg.validate();
  rcfg.validate();
  if (degraded.H % cfg.p != 0 || degraded.W % cfg.p != 0)
    throw ModelError("restore: patch size must divide frame dimensions");
  const int T = degraded.T, K = degraded.K, p = cfg.p;
  const int Hp = degraded.H / p, Wp = degraded.W / p, P = Hp * Wp;
  MultiViewSequence out = degraded;  // depth/sem/rig pass through

  ad::Mat cam(K, 16);
  for (int k = 0; k < K; ++k)
    cam.row(k) = camera_descriptor(degraded.rig.cam_to_ego[k], degraded.rig.intrinsics[k],
                                   degraded.W, degraded.H);
  SeedBank bank(rcfg.seed);

  for (int t0 = 0; t0 < T; t0 += rcfg.chunk) {
    int Tw = std::min(rcfg.chunk, T - t0);
    ad::Mat cond(static_cast<Eigen::Index>(K) * Tw * P, cfg.d_in() - cfg.d_out());
    ad::Mat hist(static_cast<Eigen::Index>(K) * rcfg.h * P, cfg.d_in());
    std::vector<double> time_cur, time_hist;
    for (int ti = 0; ti < Tw; ++ti) time_cur.push_back(t0 + ti);
    for (int j = 0; j < rcfg.h; ++j) time_hist.push_back(t0 - rcfg.h + j);
    for (int k = 0; k < K; ++k) {
      for (int ti = 0; ti < Tw; ++ti) {
        int t = t0 + ti;
        cond.middleRows((static_cast<Eigen::Index>(k) * Tw + ti) * P, P)
            << patchify_rgb(degraded.frames[t][k], p),
            patchify_depth(degraded.depth[t][k], p, far_plane),
            patchify_sem(degraded.sem[t][k], degraded.H, degraded.W, p);
      }
      for (int j = 0; j < rcfg.h; ++j) {
        int th = t0 - rcfg.h + j;
        const Image* frame;
        int src_t;
        if (th >= 0) {  // previously restored state, the autoregressive contract
          frame = &out.frames[th][k];
          src_t = th;
        } else if (rcfg.cold_start == RestoreConfig::ColdStart::ReplicateFirst) {
          frame = t0 > 0 ? &out.frames[0][k] : &degraded.frames[0][k];
          src_t = 0;
        } else {  // degraded-as-history
          frame = &degraded.frames[0][k];
          src_t = 0;
        }
        hist.middleRows((static_cast<Eigen::Index>(k) * rcfg.h + j) * P, P) =
            assemble_raw(patchify_rgb(*frame, p), *frame, degraded.depth[src_t][k],
                         degraded.sem[src_t][k], p, far_plane, cfg.use_guidance);
      }
    }
    if (rcfg.h == 0) hist = ad::Mat(0, cfg.d_in());
    RngStream noise = bank.stream("restore/chunk" + std::to_string(t0));
    ad::Mat x0 = sample_restore(cfg, ps, cond, hist, cam, time_cur, time_hist, K, Tw, Hp, Wp,
                                rcfg, noise);
    for (int k = 0; k < K; ++k)
      for (int ti = 0; ti < Tw; ++ti) {
        out.frames[t0 + ti][k] = clamp01(unpatchify_rgb(
            x0.middleRows((static_cast<Eigen::Index>(k) * Tw + ti) * P, P), Hp, Wp, p));
      }
  }
  return out;
}

// Writes the restored sequence in the standard dataset layout, recording the
// producing checkpoint and restore settings in the metadata.
inline void emit_pseudo_gt(const MultiViewSequence& restored, double far_plane,
                           const std::filesystem::path& out_dir,
                           const std::string& checkpoint_digest, const RestoreConfig& rcfg) {
  json extra{{"far_plane", far_plane},
             {"pseudo_gt", true},
             {"checkpoint_digest", checkpoint_digest},
             {"restore_config", to_json(rcfg)}};
  write_scene_dir(out_dir, restored, nullptr, extra);
}

}  // namespace drivefix
