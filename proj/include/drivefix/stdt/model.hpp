#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "drivefix/stdt/params.hpp"
#include "drivefix/synthworld/render.hpp"

namespace drivefix {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Denoiser dimensions and ablation switches. The switches map one-to-one to
// the single-removal study: spatial/temporal bypass, h=0, zeroed guidance.
struct ModelConfig {
  int C = 128;      // token channels
  int L = 6;        // block count
  int heads = 4;
  int p = 8;        // patch size
  int h = 2;        // history length
  int T_cur = 2;    // current-window length during training
  int c_geo = 64;   // alignment head output width
  int align_tap = -1;  // block index for alignment feature taps, -1 = L/2
  double dropout = 0.0;
  bool use_temporal = true;
  bool use_spatial = true;
  bool use_guidance = true;
  uint64_t seed = 0;

  int d_in() const { return 10 * p * p; }    // rgb + guide rgb + depth + 3-way semantics
  int d_out() const { return 3 * p * p; }
  int tap_block() const { return align_tap < 0 ? L / 2 : align_tap; }

  void validate() const {
    if (C <= 0 || L <= 0 || heads <= 0 || p <= 0 || T_cur <= 0 || c_geo <= 0)
      throw ConfigError("model: dims must be positive");
    if (C % heads != 0) throw ConfigError("model: C must be divisible by heads");
    if (h < 0) throw ConfigError("model: h must be >= 0");
    if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must be in [0,1)");
    if (tap_block() < 0 || tap_block() >= L) throw ConfigError("model: align_tap out of range");
  }
};

inline json to_json(const ModelConfig& c) {
  return json{{"C", c.C},           {"L", c.L},
              {"heads", c.heads},   {"p", c.p},
              {"h", c.h},           {"T_cur", c.T_cur},
              {"c_geo", c.c_geo},   {"align_tap", c.align_tap},
              {"dropout", c.dropout},
              {"use_temporal", c.use_temporal},
              {"use_spatial", c.use_spatial},
              {"use_guidance", c.use_guidance},
              {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.C = j.value("C", c.C);
  c.L = j.value("L", c.L);
  c.heads = j.value("heads", c.heads);
  c.p = j.value("p", c.p);
  c.h = j.value("h", c.h);
  c.T_cur = j.value("T_cur", c.T_cur);
  c.c_geo = j.value("c_geo", c.c_geo);
  c.align_tap = j.value("align_tap", c.align_tap);
  c.dropout = j.value("dropout", c.dropout);
  c.use_temporal = j.value("use_temporal", c.use_temporal);
  c.use_spatial = j.value("use_spatial", c.use_spatial);
  c.use_guidance = j.value("use_guidance", c.use_guidance);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Token grid bookkeeping. Canonical row order is (b, v, t, patch); the
// time-major order (b, t, v, patch) groups all views of one timestep for the
// cross-view step. Both are pure row permutations, hence exactly invertible.

inline std::vector<Eigen::Index> time_major_perm(int B, int V, int T, int P) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<size_t>(B) * V * T * P);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int v = 0; v < V; ++v)
        for (int p = 0; p < P; ++p)
          idx.push_back(((static_cast<Eigen::Index>(b) * V + v) * T + t) * P + p);
  return idx;
}

inline std::vector<Eigen::Index> inverse_perm(const std::vector<Eigen::Index>& perm) {
  std::vector<Eigen::Index> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<Eigen::Index>(i);
  return inv;
}

struct LatentGrid {
  enum class Layout { ViewMajor, TimeMajor };
  int B = 1, V = 1, T = 1, P = 1, C = 1;
  Layout layout = Layout::ViewMajor;
  ad::Mat data;  // (B*V*T*P) x C

  void check() const {
    if (B <= 0 || V <= 0 || T <= 0 || P <= 0 || C <= 0)
      throw ModelError("latent grid: non-positive dimension");
    if (data.rows() != static_cast<Eigen::Index>(B) * V * T * P || data.cols() != C)
      throw ModelError("latent grid: data shape disagrees with dims");
    if (!data.allFinite()) throw ModelError("latent grid: non-finite values");
  }

  LatentGrid to_time_major() const {
    if (layout == Layout::TimeMajor) return *this;
    LatentGrid g = *this;
    auto perm = time_major_perm(B, V, T, P);
    for (size_t i = 0; i < perm.size(); ++i) g.data.row(static_cast<Eigen::Index>(i)) = data.row(perm[i]);
    g.layout = Layout::TimeMajor;
    return g;
  }

  LatentGrid to_view_major() const {
    if (layout == Layout::ViewMajor) return *this;
    LatentGrid g = *this;
    auto inv = inverse_perm(time_major_perm(B, V, T, P));
    for (size_t i = 0; i < inv.size(); ++i) g.data.row(static_cast<Eigen::Index>(i)) = data.row(inv[i]);
    g.layout = Layout::ViewMajor;
    return g;
  }
};

// ---------------------------------------------------------------------------
// Patchification. Frames are H x W x 3 in [0,1]; a patch row holds the p x p
// window scanned row by row, channel-minor.

inline ad::Mat patchify_rgb(const Image& img, int p) {
  if (img.c != 3) throw ModelError("patchify: expected 3-channel image");
  if (img.h % p != 0 || img.w % p != 0)
    throw ModelError("patchify: patch size must divide image dimensions");
  int hp = img.h / p, wp = img.w / p;
  ad::Mat m(static_cast<Eigen::Index>(hp) * wp, 3 * p * p);
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px) {
      Eigen::Index row = static_cast<Eigen::Index>(py) * wp + px;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            m(row, (dy * p + dx) * 3 + ch) = img.at(py * p + dy, px * p + dx, ch);
    }
  return m;
}

inline Image unpatchify_rgb(const ad::Mat& m, int hp, int wp, int p) {
  if (m.rows() != static_cast<Eigen::Index>(hp) * wp || m.cols() != 3 * p * p)
    throw ModelError("unpatchify: shape mismatch");
  Image img(hp * p, wp * p, 3);
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px) {
      Eigen::Index row = static_cast<Eigen::Index>(py) * wp + px;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            img.at(py * p + dy, px * p + dx, ch) = m(row, (dy * p + dx) * 3 + ch);
    }
  return img;
}

inline ad::Mat patchify_depth(const Image& depth, int p, double far_plane) {
  if (depth.c != 1) throw ModelError("patchify: expected 1-channel depth");
  if (depth.h % p != 0 || depth.w % p != 0)
    throw ModelError("patchify: patch size must divide image dimensions");
  int hp = depth.h / p, wp = depth.w / p;
  ad::Mat m(static_cast<Eigen::Index>(hp) * wp, p * p);
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
          double d = depth.at(py * p + dy, px * p + dx, 0);
          double norm = std::isfinite(d) ? std::clamp(d / far_plane, 0.0, 1.0) : 1.0;
          m(static_cast<Eigen::Index>(py) * wp + px, dy * p + dx) = norm;
        }
  return m;
}

inline ad::Mat patchify_sem(const SemMap& sem, int H, int W, int p) {
  if (H % p != 0 || W % p != 0)
    throw ModelError("patchify: patch size must divide image dimensions");
  int hp = H / p, wp = W / p;
  ad::Mat m = ad::Mat::Zero(static_cast<Eigen::Index>(hp) * wp, 3 * p * p);
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
          uint8_t id = sem[static_cast<size_t>(py * p + dy) * W + px * p + dx];
          int cls = id == kSemSky ? 0 : (id == kSemGround ? 1 : 2);
          m(static_cast<Eigen::Index>(py) * wp + px, (dy * p + dx) * 3 + cls) = 1.0;
        }
  return m;
}

// Raw encoder input for one frame: [primary rgb | guide rgb | depth | semantics].
// The primary slot carries the noised latent for current frames and the frame
// itself for history frames; the guide slot always carries the observed frame.
inline ad::Mat assemble_raw(const ad::Mat& primary_rgb, const Image& guide, const Image& depth,
                            const SemMap& sem, int p, double far_plane, bool use_guidance) {
  ad::Mat g = patchify_rgb(guide, p);
  ad::Mat d = patchify_depth(depth, p, far_plane);
  ad::Mat s = patchify_sem(sem, guide.h, guide.w, p);
  if (primary_rgb.rows() != g.rows()) throw ModelError("assemble: primary/guide token mismatch");
  ad::Mat out(g.rows(), primary_rgb.cols() + g.cols() + d.cols() + s.cols());
  out << primary_rgb, g, d, s;
  // the guidance switch drops depth/semantics only; the observed rgb stays
  if (!use_guidance) out.rightCols(d.cols() + s.cols()).setZero();
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic sinusoidal encodings.

inline Eigen::RowVectorXd sinusoid_row(double pos, int C) {
  Eigen::RowVectorXd r(C);
  for (int i = 0; i < C / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / C);
    r(2 * i) = std::sin(pos * freq);
    r(2 * i + 1) = std::cos(pos * freq);
  }
  if (C % 2) r(C - 1) = std::sin(pos);
  return r;
}

inline ad::Mat spatial_posenc(int hp, int wp, int C) {
  ad::Mat m(static_cast<Eigen::Index>(hp) * wp, C);
  int half = C / 2;
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px) {
      Eigen::Index row = static_cast<Eigen::Index>(py) * wp + px;
      m.row(row).head(half) = sinusoid_row(py, half);
      m.row(row).tail(C - half) = sinusoid_row(px, C - half);
    }
  return m;
}

// ---------------------------------------------------------------------------
// Parameters. Weight matrices draw from N(0, 1/fan_in) on a per-name stream;
// every residual-path output projection starts at zero so the untrained stack
// is the identity map and the untrained prediction is exactly zero.

namespace detail {

inline void init_weight(ParamStore& ps, SeedBank& bank, const std::string& name, int r, int c,
                        bool zero = false) {
  ad::Mat& m = ps.create(name, r, c);
  if (zero) {
    m.setZero();
    return;
  }
  RngStream rng = bank.stream("param/" + name);
  double std = 1.0 / std::sqrt(static_cast<double>(r));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0, std);
}

}  // namespace detail

inline void init_params(const ModelConfig& cfg, ParamStore& ps) {
  cfg.validate();
  SeedBank bank(cfg.seed);
  int C = cfg.C;
  detail::init_weight(ps, bank, "enc/w_in", cfg.d_in(), C);
  ps.create("enc/b_in", 1, C);
  detail::init_weight(ps, bank, "enc/w_cam", 16, C);
  detail::init_weight(ps, bank, "tau/w1", C, C);
  ps.create("tau/b1", 1, C);
  for (int l = 0; l < cfg.L; ++l) {
    std::string b = "blk" + std::to_string(l);
    for (const char* sub : {"/t", "/s"}) {
      std::string s = b + sub;
      ps.create(s + "_ln_g", 1, C).setOnes();
      ps.create(s + "_ln_b", 1, C);
      detail::init_weight(ps, bank, s + "_wq", C, C);
      detail::init_weight(ps, bank, s + "_wk", C, C);
      detail::init_weight(ps, bank, s + "_wv", C, C);
      ps.create(s + "_bq", 1, C);
      ps.create(s + "_bk", 1, C);
      ps.create(s + "_bv", 1, C);
      detail::init_weight(ps, bank, s + "_wo", C, C, /*zero=*/true);
      ps.create(s + "_bo", 1, C);
    }
    ps.create(b + "/m_ln_g", 1, C).setOnes();
    ps.create(b + "/m_ln_b", 1, C);
    detail::init_weight(ps, bank, b + "/m_w1", C, 4 * C);
    ps.create(b + "/m_b1", 1, 4 * C);
    detail::init_weight(ps, bank, b + "/m_w2", 4 * C, C, /*zero=*/true);
    ps.create(b + "/m_b2", 1, C);
    // zero-init noise-level gates: each residual branch is scaled by 1 + gamma(tau)
    for (const char* g : {"/t_gate", "/s_gate", "/m_gate"})
      detail::init_weight(ps, bank, b + g, C, C, /*zero=*/true);
  }
  detail::init_weight(ps, bank, "out/w", C, cfg.d_out(), /*zero=*/true);
  ps.create("out/b", 1, cfg.d_out());
  detail::init_weight(ps, bank, "align/w", C, cfg.c_geo);
  ps.create("align/b", 1, cfg.c_geo);
}

// Throws when a checkpoint's tensors do not cover this config exactly.
inline void validate_params(const ModelConfig& cfg, const ParamStore& ps) {
  ParamStore ref;
  init_params(cfg, ref);
  for (const auto& [name, e] : ref.tensors) {
    auto it = ps.tensors.find(name);
    if (it == ps.tensors.end()) throw CheckpointError("checkpoint missing tensor " + name);
    if (it->second.val.rows() != e.val.rows() || it->second.val.cols() != e.val.cols())
      throw CheckpointError("checkpoint tensor " + name + " has wrong shape");
  }
  for (const auto& [name, e] : ps.tensors)
    if (!ref.tensors.count(name)) throw CheckpointError("checkpoint has unexpected tensor " + name);
}

// ---------------------------------------------------------------------------
// Forward pass.

namespace detail {

inline ad::Var mha(ad::Tape& t, ParamStore& ps, const std::string& pre, ad::Var q_src,
                   ad::Var kv_src, int heads, int C) {
  ad::Var q = t.add_rowvec(t.matmul(q_src, ps.use(t, pre + "_wq")), ps.use(t, pre + "_bq"));
  ad::Var k = t.add_rowvec(t.matmul(kv_src, ps.use(t, pre + "_wk")), ps.use(t, pre + "_bk"));
  ad::Var v = t.add_rowvec(t.matmul(kv_src, ps.use(t, pre + "_wv")), ps.use(t, pre + "_bv"));
  ad::Var wo = ps.use(t, pre + "_wo");
  int dh = C / heads;
  ad::Var out = nullptr;
  for (int hd = 0; hd < heads; ++hd) {
    ad::Var qh = t.slice_cols(q, hd * dh, dh);
    ad::Var kh = t.slice_cols(k, hd * dh, dh);
    ad::Var vh = t.slice_cols(v, hd * dh, dh);
    ad::Var attn = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh))));
    ad::Var contrib = t.matmul(t.matmul(attn, vh), t.slice_rows(wo, hd * dh, dh));
    out = out ? t.add(out, contrib) : contrib;
  }
  return t.add_rowvec(out, ps.use(t, pre + "_bo"));
}

}  // namespace detail

// One training/inference sample for the denoiser: current-window raw patch
// inputs in canonical (v, t, patch) row order, optional history raw inputs in
// (v, slot, patch) order, per-view camera descriptors, and time indices.
struct DenoiserInput {
  ad::Mat cur_raw;                // (V*T*P) x d_in
  ad::Mat hist_raw;               // (V*h*P) x d_in, 0 rows when h = 0
  ad::Mat cam;                    // V x 16
  std::vector<double> time_cur;   // size T, absolute timestep indices
  std::vector<double> time_hist;  // size h
  double tau = 0.0;
  int V = 0, T = 0, Hp = 0, Wp = 0;

  int P() const { return Hp * Wp; }
};

// Flattened camera descriptor: row-major rotation, translation, intrinsics
// normalized by image size.
inline Eigen::RowVectorXd camera_descriptor(const Pose& cam_to_ego, const Intrinsics& intr, int W,
                                            int H) {
  Eigen::RowVectorXd d(16);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d(i * 3 + j) = cam_to_ego.R(i, j);
  for (int i = 0; i < 3; ++i) d(9 + i) = cam_to_ego.t(i);
  d(12) = intr.fx / W;
  d(13) = intr.fy / H;
  d(14) = intr.cx / W;
  d(15) = intr.cy / H;
  return d;
}

struct ForwardResult {
  ad::Var pred = nullptr;          // (V*T*P) x 3p^2 velocity prediction
  ad::Var tap_temporal = nullptr;  // tokens after the tapped block's temporal step
  ad::Var tap_spatial = nullptr;   // tokens after the tapped block's spatial step
  ad::Var tokens_in = nullptr;     // encoded tokens entering the stack
  ad::Var tokens_out = nullptr;    // tokens leaving the stack
};

inline ForwardResult denoiser_forward(ad::Tape& t, const ModelConfig& cfg, ParamStore& ps,
                                      const DenoiserInput& in, RngStream* dropout_rng = nullptr) {
  cfg.validate();
  const int V = in.V, T = in.T, P = in.P(), C = cfg.C;
  if (V <= 0 || T <= 0 || P <= 0) throw ModelError("forward: empty input grid");
  if (in.cur_raw.rows() != static_cast<Eigen::Index>(V) * T * P ||
      in.cur_raw.cols() != cfg.d_in())
    throw ModelError("forward: cur_raw shape mismatch");
  int h = 0;
  if (in.hist_raw.rows() > 0) {
    if (in.hist_raw.rows() % (static_cast<Eigen::Index>(V) * P) != 0 ||
        in.hist_raw.cols() != cfg.d_in())
      throw ModelError("forward: hist_raw shape mismatch against view count");
    h = static_cast<int>(in.hist_raw.rows() / (static_cast<Eigen::Index>(V) * P));
  }
  if (in.cam.rows() != V || in.cam.cols() != 16) throw ModelError("forward: cam shape mismatch");
  if (static_cast<int>(in.time_cur.size()) != T)
    throw ModelError("forward: time_cur length mismatch");
  if (static_cast<int>(in.time_hist.size()) != h)
    throw ModelError("forward: time_hist length mismatch");
  if (in.tau < 0 || in.tau > 1) throw ModelError("forward: tau out of [0,1]");

  // fixed additive encodings
  ad::Mat pos = spatial_posenc(in.Hp, in.Wp, C);
  Eigen::RowVectorXd tau_enc = sinusoid_row(in.tau * 1000.0, C);
  ad::Mat enc_cur(static_cast<Eigen::Index>(V) * T * P, C);
  for (int v = 0; v < V; ++v)
    for (int ti = 0; ti < T; ++ti) {
      Eigen::RowVectorXd time_enc = sinusoid_row(in.time_cur[ti], C);
      for (int pi = 0; pi < P; ++pi)
        enc_cur.row((static_cast<Eigen::Index>(v) * T + ti) * P + pi) =
            pos.row(pi) + time_enc + tau_enc;
    }
  ad::Mat enc_hist(static_cast<Eigen::Index>(V) * h * P, C);
  for (int v = 0; v < V; ++v)
    for (int j = 0; j < h; ++j) {
      Eigen::RowVectorXd time_enc = sinusoid_row(in.time_hist[j], C);
      for (int pi = 0; pi < P; ++pi)
        enc_hist.row((static_cast<Eigen::Index>(v) * h + j) * P + pi) = pos.row(pi) + time_enc;
    }

  ad::Var w_in = ps.use(t, "enc/w_in");
  ad::Var b_in = ps.use(t, "enc/b_in");
  ad::Var cam_emb = t.matmul(t.constant(in.cam), ps.use(t, "enc/w_cam"));  // V x C
  std::vector<Eigen::Index> cam_idx_cur(static_cast<size_t>(V) * T * P);
  for (int v = 0; v < V; ++v)
    std::fill(cam_idx_cur.begin() + static_cast<size_t>(v) * T * P,
              cam_idx_cur.begin() + static_cast<size_t>(v + 1) * T * P, v);
  ad::Var tok = t.add(t.add(t.add_rowvec(t.matmul(t.constant(in.cur_raw), w_in), b_in),
                            t.gather_rows(cam_emb, cam_idx_cur)),
                      t.constant(enc_cur));

  ad::Var hist = nullptr;
  if (h > 0) {
    std::vector<Eigen::Index> cam_idx_hist(static_cast<size_t>(V) * h * P);
    for (int v = 0; v < V; ++v)
      std::fill(cam_idx_hist.begin() + static_cast<size_t>(v) * h * P,
                cam_idx_hist.begin() + static_cast<size_t>(v + 1) * h * P, v);
    hist = t.add(t.add(t.add_rowvec(t.matmul(t.constant(in.hist_raw), w_in), b_in),
                       t.gather_rows(cam_emb, cam_idx_hist)),
                 t.constant(enc_hist));
  }

  auto tm_perm = time_major_perm(1, V, T, P);
  auto tm_inv = inverse_perm(tm_perm);
  ForwardResult res;
  res.tokens_in = tok;

  // noise-level conditioning head; velocity recovery needs a tau-dependent
  // gain on the noised input, which an additive encoding alone cannot express
  ad::Var tau_h = t.gelu(t.add_rowvec(t.matmul(t.constant(ad::Mat(tau_enc)), ps.use(t, "tau/w1")),
                                      ps.use(t, "tau/b1")));
  const std::vector<Eigen::Index> bcast(static_cast<size_t>(V) * T * P, 0);
  auto gated = [&](ad::Var branch, const std::string& gate_name) {
    ad::Var gamma = t.gather_rows(t.matmul(tau_h, ps.use(t, gate_name)), bcast);
    return t.add(branch, t.hadamard(branch, gamma));
  };

  for (int l = 0; l < cfg.L; ++l) {
    std::string b = "blk" + std::to_string(l);
    if (cfg.use_temporal) {
      ad::Var g = ps.use(t, b + "/t_ln_g"), bb = ps.use(t, b + "/t_ln_b");
      ad::Var ln = t.layernorm(tok, g, bb);
      ad::Var ln_hist = hist ? t.layernorm(hist, g, bb) : nullptr;
      std::vector<ad::Var> parts;
      for (int v = 0; v < V; ++v) {
        ad::Var q_src = t.slice_rows(ln, static_cast<Eigen::Index>(v) * T * P, T * P);
        ad::Var kv = q_src;
        if (ln_hist)
          kv = t.concat_rows(
              {q_src, t.slice_rows(ln_hist, static_cast<Eigen::Index>(v) * h * P, h * P)});
        parts.push_back(detail::mha(t, ps, b + "/t", q_src, kv, cfg.heads, C));
      }
      tok = t.add(tok, gated(t.concat_rows(parts), b + "/t_gate"));
    }
    if (l == cfg.tap_block()) res.tap_temporal = tok;
    if (cfg.use_spatial) {
      ad::Var ln = t.layernorm(tok, ps.use(t, b + "/s_ln_g"), ps.use(t, b + "/s_ln_b"));
      ad::Var ln_tm = t.gather_rows(ln, tm_perm);
      std::vector<ad::Var> parts;
      for (int ti = 0; ti < T; ++ti) {
        ad::Var grp = t.slice_rows(ln_tm, static_cast<Eigen::Index>(ti) * V * P, V * P);
        parts.push_back(detail::mha(t, ps, b + "/s", grp, grp, cfg.heads, C));
      }
      tok = t.add(tok, gated(t.gather_rows(t.concat_rows(parts), tm_inv), b + "/s_gate"));
    }
    if (l == cfg.tap_block()) res.tap_spatial = tok;
    {
      ad::Var ln = t.layernorm(tok, ps.use(t, b + "/m_ln_g"), ps.use(t, b + "/m_ln_b"));
      ad::Var h1 = t.gelu(t.add_rowvec(t.matmul(ln, ps.use(t, b + "/m_w1")), ps.use(t, b + "/m_b1")));
      if (cfg.dropout > 0 && dropout_rng) {
        ad::Mat mask(h1->val.rows(), h1->val.cols());
        double keep = 1.0 - cfg.dropout;
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
          for (Eigen::Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = dropout_rng->uniform(0, 1) < keep ? 1.0 / keep : 0.0;
        h1 = t.hadamard(h1, t.constant(mask));
      }
      ad::Var h2 = t.add_rowvec(t.matmul(h1, ps.use(t, b + "/m_w2")), ps.use(t, b + "/m_b2"));
      tok = t.add(tok, gated(h2, b + "/m_gate"));
    }
    if (!tok->val.allFinite())
      throw ModelError("forward: non-finite activations in block " + std::to_string(l));
  }

  res.tokens_out = tok;
  res.pred = t.add_rowvec(t.matmul(tok, ps.use(t, "out/w")), ps.use(t, "out/b"));
  return res;
}

}  // namespace drivefix
