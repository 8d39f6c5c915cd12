#pragma once

#include <fstream>

#include "drivefix/degrade/triplets.hpp"
#include "drivefix/objectives/losses.hpp"

namespace drivefix {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int stage1_steps = 4000;   // 40,000 at full scale
  int stage2_steps = 300;    // 3,000 at full scale
  int warmup_steps = 50;     // 500 at full scale, scaled with the step counts
  int batch_size = 2;
  int checkpoint_every = 1000;
  double lr_peak = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (lr_peak <= 0) throw ConfigError("train: lr_peak must be > 0");
    if (warmup_steps <= 0 || warmup_steps >= stage1_steps)
      throw ConfigError("train: need 0 < warmup_steps < stage1_steps");
    if (batch_size < 1 || checkpoint_every < 1) throw ConfigError("train: bad batch/cadence");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("train: betas must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"stage1_steps", c.stage1_steps},
              {"stage2_steps", c.stage2_steps},
              {"warmup_steps", c.warmup_steps},
              {"batch_size", c.batch_size},
              {"checkpoint_every", c.checkpoint_every},
              {"lr_peak", c.lr_peak},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"weight_decay", c.weight_decay},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.stage1_steps = j.value("stage1_steps", c.stage1_steps);
  c.stage2_steps = j.value("stage2_steps", c.stage2_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Linear warmup to the constant peak rate.
inline double lr_schedule(const TrainConfig& c, int step) {
  return c.lr_peak * std::min(1.0, static_cast<double>(step) / c.warmup_steps);
}

// Decoupled-weight-decay adaptive-moment update with bias correction. Moment
// accumulators are float64 and checkpointable, so an interrupted run resumes
// bit-identically.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const TrainConfig& c)
      : b1_(c.beta1), b2_(c.beta2), eps_(c.adam_eps), wd_(c.weight_decay) {}

  // t is the 1-based update count
  void step(ParamStore& ps, double lr, int t) {
    for (auto& [name, e] : ps.tensors) {
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = ad::Mat::Zero(e.val.rows(), e.val.cols());
        st.v = ad::Mat::Zero(e.val.rows(), e.val.cols());
      }
      st.m = b1_ * st.m + (1 - b1_) * e.grad;
      st.v = b2_ * st.v + (1 - b2_) * e.grad.cwiseProduct(e.grad);
      double c1 = 1 - std::pow(b1_, t), c2 = 1 - std::pow(b2_, t);
      ad::Mat mhat = st.m / c1;
      ad::Mat vhat = st.v / c2;
      e.val -= lr * (mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                        ad::Mat::Constant(vhat.rows(), vhat.cols(), eps_)) +
                     wd_ * e.val);
    }
  }

  ParamStore state_as_params() const {
    ParamStore ps;
    for (const auto& [name, st] : state_) {
      ps.create("m/" + name, st.m.rows(), st.m.cols()) = st.m;
      ps.create("v/" + name, st.v.rows(), st.v.cols()) = st.v;
    }
    return ps;
  }

  void load_state(const ParamStore& ps) {
    state_.clear();
    for (const auto& [name, e] : ps.tensors) {
      if (name.rfind("m/", 0) == 0) state_[name.substr(2)].m = e.val;
      if (name.rfind("v/", 0) == 0) state_[name.substr(2)].v = e.val;
    }
  }

 private:
  struct Moments {
    ad::Mat m, v;
  };
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8, wd_ = 1e-2;
  std::map<std::string, Moments> state_;
};

// ---------------------------------------------------------------------------
// Training data: the clean and degraded renders of one scene plus per-view
// camera descriptors. Patchification happens per sampled batch; frames stay
// as images to keep the resident set small.

struct SceneData {
  std::string id;
  double far_plane = 100.0;
  MultiViewSequence gt;
  MultiViewSequence dg;
  ad::Mat cam;  // K x 16

  static SceneData make(std::string id, MultiViewSequence gt, MultiViewSequence dg,
                        double far_plane) {
    if (gt.T != dg.T || gt.K != dg.K || gt.H != dg.H || gt.W != dg.W)
      throw ConfigError("scene data: clean/degraded sequence shape mismatch");
    SceneData sd;
    sd.id = std::move(id);
    sd.far_plane = far_plane;
    sd.gt = std::move(gt);
    sd.dg = std::move(dg);
    sd.cam.resize(sd.gt.K, 16);
    for (int k = 0; k < sd.gt.K; ++k)
      sd.cam.row(k) =
          camera_descriptor(sd.gt.rig.cam_to_ego[k], sd.gt.rig.intrinsics[k], sd.gt.W, sd.gt.H);
    return sd;
  }
};

// Builds the denoiser sample for one triplet: current window starting at the
// triplet's timestep, history slots drawn from the clean or degraded corpus
// per the provenance pattern.
inline DiffusionSample make_sample(const SceneData& sd, const TrainingTriplet& tr,
                                   const ModelConfig& cfg, bool with_teacher = false) {
  const int p = cfg.p, K = sd.gt.K;
  const int Tw = std::min(cfg.T_cur, sd.gt.T - tr.t);
  if (Tw < 1) throw ConfigError("make_sample: triplet timestep out of range");
  const int h = static_cast<int>(tr.history.size());
  if (tr.t - h < 0) throw ConfigError("make_sample: history exceeds sequence start");
  DiffusionSample s;
  s.V = K;
  s.T = Tw;
  s.Hp = sd.gt.H / p;
  s.Wp = sd.gt.W / p;
  const int P = s.Hp * s.Wp;
  s.x0.resize(static_cast<Eigen::Index>(K) * Tw * P, cfg.d_out());
  s.cond.resize(s.x0.rows(), cfg.d_in() - cfg.d_out());
  s.hist_raw.resize(static_cast<Eigen::Index>(K) * h * P, cfg.d_in());
  for (int k = 0; k < K; ++k) {
    for (int ti = 0; ti < Tw; ++ti) {
      int t = tr.t + ti;
      Eigen::Index at = (static_cast<Eigen::Index>(k) * Tw + ti) * P;
      s.x0.middleRows(at, P) = patchify_rgb(sd.gt.frames[t][k], p);
      s.cond.middleRows(at, P) << patchify_rgb(sd.dg.frames[t][k], p),
          patchify_depth(sd.dg.depth[t][k], p, sd.far_plane),
          patchify_sem(sd.dg.sem[t][k], sd.gt.H, sd.gt.W, p);
    }
    for (int j = 0; j < h; ++j) {
      int t = tr.t - h + j;
      const MultiViewSequence& src = tr.history[j] == Provenance::GT ? sd.gt : sd.dg;
      s.hist_raw.middleRows((static_cast<Eigen::Index>(k) * h + j) * P, P) =
          assemble_raw(patchify_rgb(src.frames[t][k], p), src.frames[t][k], src.depth[t][k],
                       src.sem[t][k], p, sd.far_plane, cfg.use_guidance);
    }
  }
  s.cam = sd.cam;
  for (int ti = 0; ti < Tw; ++ti) s.time_cur.push_back(tr.t + ti);
  for (int j = 0; j < h; ++j) s.time_hist.push_back(tr.t - h + j);
  if (with_teacher) {
    std::vector<int> window;
    for (int ti = 0; ti < Tw; ++ti) window.push_back(tr.t + ti);
    GeometryTeacher gt_feats =
        geometry_teacher(sd.gt.depth, sd.gt.rig, window, p, sd.far_plane, cfg.seed, cfg.c_geo);
    s.teacher = std::move(gt_feats.feats);
    s.geo_mask = std::move(gt_feats.mask);
  }
  s.provenance = sd.id + "/t" + std::to_string(tr.t) + "/combo" + std::to_string(tr.combo_id);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop shared by both stages. Stage 2 is the same loop with the
// alignment weights switched on; at alpha = beta = 0 it reduces to a stage-1
// continuation with an identical trajectory. Per-step randomness comes from
// streams labelled by the global step, so resuming from a checkpoint replays
// the exact same draws.

struct TrainSet {
  std::vector<SceneData> scenes;
  std::vector<std::pair<int, TrainingTriplet>> triplets;  // scene index, triplet

  static TrainSet build(std::vector<SceneData> scenes, int h) {
    TrainSet ts;
    ts.scenes = std::move(scenes);
    for (size_t i = 0; i < ts.scenes.size(); ++i)
      for (auto& tr : build_triplets(ts.scenes[i].id, ts.scenes[i].gt.T, h))
        ts.triplets.emplace_back(static_cast<int>(i), std::move(tr));
    if (ts.triplets.empty()) throw ConfigError("train set: no usable triplets");
    return ts;
  }
};

struct TrainResult {
  int final_step = 0;
  std::filesystem::path final_ckpt;
  double first_loss = 0, last_loss = 0;
};

inline void save_training_checkpoint(const std::filesystem::path& dir, const ParamStore& ps,
                                     const AdamW& opt, const ModelConfig& mcfg,
                                     const TrainConfig& tcfg, int step) {
  json meta{{"model", to_json(mcfg)}, {"train", to_json(tcfg)}, {"step", step}};
  save_checkpoint(dir, ps, meta);
  save_checkpoint(dir / "opt", opt.state_as_params(), json{{"step", step}});
}

struct TrainingCheckpoint {
  ModelConfig model;
  TrainConfig train;
  int step = 0;
  ParamStore params;
  AdamW opt;
};

inline TrainingCheckpoint load_training_checkpoint(const std::filesystem::path& dir) {
  LoadedCheckpoint lc = load_checkpoint(dir);
  TrainingCheckpoint tc;
  tc.model = model_config_from_json(lc.meta.at("model"));
  tc.train = train_config_from_json(lc.meta.at("train"));
  tc.step = lc.meta.value("step", 0);
  tc.params = std::move(lc.params);
  validate_params(tc.model, tc.params);
  tc.opt = AdamW(tc.train);
  if (std::filesystem::exists(dir / "opt" / "manifest.json"))
    tc.opt.load_state(load_checkpoint(dir / "opt").params);
  return tc;
}

// Runs global steps [start_step, end_step). `align` = nullptr gives the plain
// diffusion objective. `sweep_marks` are relative to start_step and emit extra
// checkpoints (mark_<k> directories).
inline TrainResult run_training(const TrainSet& data, const ModelConfig& mcfg,
                                const TrainConfig& tcfg, const AlignmentWeights* align,
                                int start_step, int end_step, ParamStore& ps, AdamW& opt,
                                const std::filesystem::path& out_dir,
                                const std::vector<int>& sweep_marks = {}) {
  mcfg.validate();
  tcfg.validate();
  if (align) align->validate();
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "log.jsonl", std::ios::app);
  if (align)
    log << json{{"event", "config"},
                {"alpha", align->alpha},
                {"beta", align->beta},
                {"lr_peak", tcfg.lr_peak}}
               .dump()
        << "\n";
  SeedBank bank(tcfg.seed);
  TrainResult res;
  std::filesystem::path last_good;
  bool with_teacher = align && (align->alpha > 0 || align->beta > 0);
  AlignmentWeights zero{0, 0};

  for (int step = start_step; step < end_step; ++step) {
    std::string lbl = "train/step" + std::to_string(step);
    RngStream pick = bank.stream(lbl + "/pick");
    RngStream noise = bank.stream(lbl + "/noise");
    ps.zero_grad();
    double l_diff = 0, l_ang = 0, l_sc = 0, total = 0;
    try {
      ad::Tape tape;
      ad::Var batch_total = nullptr;
      for (int b = 0; b < tcfg.batch_size; ++b) {
        auto& [si, tr] =
            data.triplets[static_cast<size_t>(pick.uniform_int(0, data.triplets.size() - 1))];
        DiffusionSample s = make_sample(data.scenes[si], tr, mcfg, with_teacher);
        LossBreakdown lb = total_finetune_loss(tape, mcfg, ps, s, align ? *align : zero, noise);
        l_diff += lb.l_diff;
        l_ang += lb.l_angular;
        l_sc += lb.l_scale;
        batch_total = batch_total ? tape.add(batch_total, lb.total) : lb.total;
      }
      batch_total = tape.scale(batch_total, 1.0 / tcfg.batch_size);
      total = batch_total->val(0, 0);
      if (!std::isfinite(total)) throw ModelError("non-finite batch loss");
      tape.backward(batch_total);
    } catch (const ModelError& e) {
      throw TrainError(std::string("training halted at step ") + std::to_string(step) + ": " +
                       e.what() + " (last good checkpoint: " +
                       (last_good.empty() ? "none" : last_good.string()) + ")");
    }
    double lr = lr_schedule(tcfg, step);
    opt.step(ps, lr, step + 1);
    l_diff /= tcfg.batch_size;
    l_ang /= tcfg.batch_size;
    l_sc /= tcfg.batch_size;
    log << json{{"step", step},       {"l_diff", l_diff}, {"l_angular", l_ang},
                {"l_scale", l_sc},    {"total", total},   {"lr", lr}}
               .dump()
        << "\n";
    if (step == start_step) res.first_loss = total;
    res.last_loss = total;
    int done = step + 1;
    if (done % tcfg.checkpoint_every == 0 || done == end_step) {
      last_good = out_dir / ("step_" + std::to_string(done));
      save_training_checkpoint(last_good, ps, opt, mcfg, tcfg, done);
    }
    for (int mark : sweep_marks)
      if (done - start_step == mark)
        save_training_checkpoint(out_dir / ("mark_" + std::to_string(mark)), ps, opt, mcfg, tcfg,
                                 done);
  }
  res.final_step = end_step;
  res.final_ckpt = out_dir / ("step_" + std::to_string(end_step));
  if (!std::filesystem::exists(res.final_ckpt / "manifest.json"))
    save_training_checkpoint(res.final_ckpt, ps, opt, mcfg, tcfg, end_step);
  return res;
}

inline TrainResult train_stage1(const TrainSet& data, const ModelConfig& mcfg,
                                const TrainConfig& tcfg, const std::filesystem::path& out_dir) {
  ParamStore ps;
  init_params(mcfg, ps);
  AdamW opt(tcfg);
  return run_training(data, mcfg, tcfg, nullptr, 0, tcfg.stage1_steps, ps, opt, out_dir);
}

inline TrainResult train_stage2_align(const std::filesystem::path& from_ckpt, const TrainSet& data,
                                      const AlignmentWeights& w,
                                      const std::filesystem::path& out_dir,
                                      const std::vector<int>& sweep_marks = {}) {
  TrainingCheckpoint tc = load_training_checkpoint(from_ckpt);
  return run_training(data, tc.model, tc.train, &w, tc.step, tc.step + tc.train.stage2_steps,
                      tc.params, tc.opt, out_dir, sweep_marks);
}

}  // namespace drivefix
