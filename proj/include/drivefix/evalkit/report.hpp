#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>

#include "drivefix/evalkit/metrics.hpp"
#include "drivefix/restorer/restore.hpp"
#include "drivefix/trainer/train.hpp"

namespace drivefix {

// One model variant for the ablation grid: identical to the baseline except
// for a single switch.
struct AblationVariant {
  std::string name;
  ModelConfig cfg;
  AlignmentWeights weights;
};

// Row order is fixed and documented: the full model first, then each
// single-switch removal.
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base,
                                                      const AlignmentWeights& w) {
  std::vector<AblationVariant> out;
  out.push_back({"full", base, w});
  AblationVariant v{"no_cross_view", base, w};
  v.cfg.use_spatial = false;
  out.push_back(v);
  v = {"no_temporal", base, w};
  v.cfg.use_temporal = false;
  out.push_back(v);
  v = {"no_history", base, w};
  v.cfg.h = 0;
  out.push_back(v);
  v = {"no_alignment", base, w};
  v.weights = {0.0, 0.0};
  out.push_back(v);
  v = {"no_guidance", base, w};
  v.cfg.use_guidance = false;
  out.push_back(v);
  return out;
}

// Number of leaf fields that differ between two variants' serialized configs
// (model config plus loss weights). Every ablation row must be exactly 1 away
// from the full row.
inline int variant_diff_count(const AblationVariant& a, const AblationVariant& b) {
  json ja = to_json(a.cfg), jb = to_json(b.cfg);
  int n = 0;
  for (auto& [key, val] : ja.items())
    if (jb.at(key) != val) ++n;
  if (a.weights.alpha != b.weights.alpha) ++n;
  if (a.weights.beta != b.weights.beta) ++n;
  return n;
}

// Held-out scene: ground truth plus its corrupted rendition and the keep set
// recorded by the corruption manifest.
struct EvalScene {
  std::string id;
  Scene scene;
  MultiViewSequence gt;
  MultiViewSequence degraded;
  std::vector<int> keep_set;
};

inline MetricReport aggregate_reports(const std::vector<MetricReport>& rows,
                                      const std::string& id = "aggregate") {
  if (rows.empty()) throw ConfigError("aggregate: no reports");
  MetricReport agg;
  agg.scene_id = id;
  double xv = 0;
  int xv_n = 0;
  for (const MetricReport& r : rows) {
    agg.psnr_all += r.psnr_all;
    agg.psnr_reconstruction += r.psnr_reconstruction;
    agg.psnr_interpolation += r.psnr_interpolation;
    agg.ssim_all += r.ssim_all;
    agg.flicker += r.flicker;
    if (r.cross_view) {
      xv += *r.cross_view;
      ++xv_n;
    }
  }
  double n = static_cast<double>(rows.size());
  agg.psnr_all /= n;
  agg.psnr_reconstruction /= n;
  agg.psnr_interpolation /= n;
  agg.ssim_all /= n;
  agg.flicker /= n;
  if (xv_n) agg.cross_view = xv / xv_n;
  return agg;
}

namespace detail {

inline std::string num17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline const char* kMetricCsvHeader =
    "scene_id,psnr_all,psnr_reconstruction,psnr_interpolation,ssim_all,cross_view,flicker";

inline std::string metric_csv_row(const MetricReport& r) {
  std::string xv = r.cross_view ? detail::num17(*r.cross_view) : "";
  return r.scene_id + "," + detail::num17(r.psnr_all) + "," +
         detail::num17(r.psnr_reconstruction) + "," + detail::num17(r.psnr_interpolation) + "," +
         detail::num17(r.ssim_all) + "," + xv + "," + detail::num17(r.flicker);
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<MetricReport>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("report: cannot write " + path.string());
  f << kMetricCsvHeader << "\n";
  for (const MetricReport& r : rows) f << metric_csv_row(r) << "\n";
}

inline std::vector<MetricReport> load_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("report: cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMetricCsvHeader)
    throw IoError("report: unexpected csv header in " + path.string());
  std::vector<MetricReport> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 7) cells.push_back("");
    MetricReport r;
    r.scene_id = cells[0];
    r.psnr_all = std::stod(cells[1]);
    r.psnr_reconstruction = std::stod(cells[2]);
    r.psnr_interpolation = std::stod(cells[3]);
    r.ssim_all = std::stod(cells[4]);
    if (!cells[5].empty()) r.cross_view = std::stod(cells[5]);
    r.flicker = std::stod(cells[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Rasterizes one polyline per series into a fixed-size chart with axis frame
// and point markers. Values are normalized to the data range.
inline Image render_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                              int w = 320, int h = 240) {
  if (xs.size() != ys.size() || xs.empty()) throw ConfigError("plot: need matching nonempty data");
  Image img(h, w, 3);
  std::fill(img.v.begin(), img.v.end(), 1.0);
  const int m = 24;  // margin
  auto put = [&](int y, int x, double r, double g, double b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  };
  for (int x = m; x < w - m; ++x) {
    put(h - m, x, 0, 0, 0);
    put(m, x, 0, 0, 0);
  }
  for (int y = m; y < h - m; ++y) {
    put(y, m, 0, 0, 0);
    put(y, w - m, 0, 0, 0);
  }
  double x0 = *std::min_element(xs.begin(), xs.end());
  double x1 = *std::max_element(xs.begin(), xs.end());
  double y0 = *std::min_element(ys.begin(), ys.end());
  double y1 = *std::max_element(ys.begin(), ys.end());
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  auto px = [&](double x) { return m + static_cast<int>((x - x0) / (x1 - x0) * (w - 2 * m)); };
  auto py = [&](double y) { return h - m - static_cast<int>((y - y0) / (y1 - y0) * (h - 2 * m)); };
  for (size_t i = 1; i < xs.size(); ++i) {
    int ax = px(xs[i - 1]), ay = py(ys[i - 1]), bx = px(xs[i]), by = py(ys[i]);
    int steps = std::max(std::abs(bx - ax), std::abs(by - ay)) + 1;
    for (int s = 0; s <= steps; ++s) {
      double f = static_cast<double>(s) / steps;
      put(static_cast<int>(std::lround(ay + f * (by - ay))),
          static_cast<int>(std::lround(ax + f * (bx - ax))), 0.1, 0.2, 0.8);
    }
  }
  for (size_t i = 0; i < xs.size(); ++i)
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) put(py(ys[i]) + dy, px(xs[i]) + dx, 0.8, 0.1, 0.1);
  return img;
}

// One evaluated point of the fine-tune-duration sweep.
struct SweepPoint {
  int mark = 0;
  MetricReport report;
};

// Writes metrics.csv, metrics.jsonl and, when sweep points are given,
// sweep.csv/sweep.jsonl plus one line plot per metric and a best-mark flag
// (highest overall PSNR). File names are fixed so report digests are stable.
inline void emit_report(const std::vector<MetricReport>& rows, const std::filesystem::path& out,
                        const std::vector<SweepPoint>& sweep = {}) {
  std::filesystem::create_directories(out);
  write_metrics_csv(out / "metrics.csv", rows);
  {
    std::ofstream f(out / "metrics.jsonl");
    for (const MetricReport& r : rows) f << to_json(r).dump() << "\n";
  }
  if (sweep.empty()) return;
  std::vector<MetricReport> srows;
  std::vector<double> marks, psnrs, ssims, flickers;
  int best = sweep.front().mark;
  double best_psnr = sweep.front().report.psnr_all;
  for (const SweepPoint& p : sweep) {
    MetricReport r = p.report;
    r.scene_id = "mark_" + std::to_string(p.mark);
    srows.push_back(r);
    marks.push_back(p.mark);
    psnrs.push_back(p.report.psnr_all);
    ssims.push_back(p.report.ssim_all);
    flickers.push_back(p.report.flicker);
    if (p.report.psnr_all > best_psnr) {
      best_psnr = p.report.psnr_all;
      best = p.mark;
    }
  }
  write_metrics_csv(out / "sweep.csv", srows);
  {
    std::ofstream f(out / "sweep.jsonl");
    for (const SweepPoint& p : sweep) {
      json j = to_json(p.report);
      j["mark"] = p.mark;
      j["best"] = (p.mark == best);
      f << j.dump() << "\n";
    }
  }
  json summary{{"best_mark", best}, {"best_psnr", best_psnr}, {"marks", json::array()}};
  for (const SweepPoint& p : sweep) summary["marks"].push_back(p.mark);
  std::ofstream(out / "sweep_summary.json") << summary.dump(2) << "\n";
  write_rgb_png(out / "sweep_psnr.png", render_line_plot(marks, psnrs));
  write_rgb_png(out / "sweep_ssim.png", render_line_plot(marks, ssims));
  write_rgb_png(out / "sweep_flicker.png", render_line_plot(marks, flickers));
}

// Restores every held-out scene with the given parameters and aggregates the
// per-scene scores.
inline std::pair<std::vector<MetricReport>, MetricReport> evaluate_params(
    const ModelConfig& cfg, ParamStore& ps, const std::vector<EvalScene>& eval_scenes,
    const RestoreConfig& rcfg) {
  std::vector<MetricReport> rows;
  for (const EvalScene& es : eval_scenes) {
    MultiViewSequence restored =
        restore_sequence(cfg, ps, es.degraded, es.scene.config.far_plane, rcfg);
    rows.push_back(score_sequence(es.id, restored, es.gt, es.scene, es.keep_set));
  }
  MetricReport agg = aggregate_reports(rows);
  return {std::move(rows), agg};
}

struct AblationRow {
  std::string name;
  MetricReport report;
};

inline json to_json(const AblationRow& r) {
  json j = to_json(r.report);
  j["variant"] = r.name;
  return j;
}

// Trains and evaluates the six single-switch variants. Each variant runs both
// training stages from scratch with its own config and scores the held-out
// scenes; the output directory gets one subdirectory per variant plus
// grid.csv/grid.jsonl in the documented row order.
inline std::vector<AblationRow> run_ablation_grid(const std::vector<SceneData>& train_scenes,
                                                  const std::vector<EvalScene>& eval_scenes,
                                                  const ModelConfig& base, const TrainConfig& tc,
                                                  const AlignmentWeights& w,
                                                  const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : ablation_variants(base, w)) {
    TrainSet data = TrainSet::build(train_scenes, v.cfg.h);
    std::filesystem::path vdir = out / v.name;
    TrainResult s1 = train_stage1(data, v.cfg, tc, vdir / "stage1");
    TrainResult s2 = train_stage2_align(s1.final_ckpt, data, v.weights, vdir / "stage2");
    TrainingCheckpoint ck = load_training_checkpoint(s2.final_ckpt);
    RestoreConfig rcfg;
    rcfg.h = v.cfg.h;
    auto [per_scene, agg] = evaluate_params(v.cfg, ck.params, eval_scenes, rcfg);
    emit_report(per_scene, vdir / "report");
    rows.push_back({v.name, agg});
  }
  std::vector<MetricReport> grid;
  for (const AblationRow& r : rows) {
    MetricReport m = r.report;
    m.scene_id = r.name;
    grid.push_back(m);
  }
  write_metrics_csv(out / "grid.csv", grid);
  std::ofstream jf(out / "grid.jsonl");
  for (const AblationRow& r : rows) jf << to_json(r).dump() << "\n";
  return rows;
}

}  // namespace drivefix
