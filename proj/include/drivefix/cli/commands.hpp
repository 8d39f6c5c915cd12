#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "drivefix/degrade/corrupt.hpp"
#include "drivefix/degrade/triplets.hpp"
#include "drivefix/evalkit/report.hpp"
#include "drivefix/restorer/restore.hpp"
#include "drivefix/trainer/train.hpp"

namespace drivefix::cli {

inline constexpr const char* kVersion = "0.1.0";

// Recursive overlay: values in `over` win, objects merge key-wise. Used for
// the defaults < config file < flags resolution chain.
inline void merge_into(json& base, const json& over) {
  if (!over.is_object() || !base.is_object()) {
    base = over;
    return;
  }
  for (auto& [k, v] : over.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object())
      merge_into(base[k], v);
    else
      base[k] = v;
  }
}

inline json load_json_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open " + p.string());
  try {
    return json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError("bad json in " + p.string() + ": " + e.what());
  }
}

// Worker cap from DRIVEFIX_THREADS (0/unset = library default).
inline int thread_cap() {
  const char* env = std::getenv("DRIVEFIX_THREADS");
  if (!env) return 0;
  int n = std::atoi(env);
  return n > 0 ? n : 0;
}

class Stopwatch {
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();

 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
};

// Every command writes one of these next to its outputs; digests let a reader
// verify the artifacts match the recorded run.
inline void write_run_manifest(const fs::path& out_dir, const std::string& command,
                               const json& resolved_config, uint64_t seed, const json& inputs,
                               const json& outputs, double wall_seconds) {
  json m{{"command", command},     {"config", resolved_config},
         {"seed", seed},           {"inputs", inputs},
         {"outputs", outputs},     {"version", kVersion},
         {"wall_seconds", wall_seconds}, {"threads", thread_cap()}};
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "run_manifest.json");
  f << m.dump(2) << "\n";
}

// Finds scenes under `root`: the dir itself, direct children, or the corrupt
// corpus nesting <id>/degraded/. Scene ids come from the corpus-level name.
inline std::vector<std::pair<std::string, fs::path>> list_scene_dirs(const fs::path& root) {
  if (!fs::exists(root)) throw IoError("missing input dir " + root.string());
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::exists(root / "meta.json")) {
    std::string id = root.filename().string();
    if (id == "degraded" && root.has_parent_path()) id = root.parent_path().filename().string();
    out.emplace_back(id, root);
    return out;
  }
  for (auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    if (fs::exists(e.path() / "meta.json"))
      out.emplace_back(e.path().filename().string(), e.path());
    else if (fs::exists(e.path() / "degraded" / "meta.json"))
      out.emplace_back(e.path().filename().string(), e.path() / "degraded");
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no scene directories under " + root.string());
  return out;
}

// ---- synth ----

struct SynthArgs {
  int scenes = 4;
  uint64_t seed = 0;
  fs::path out;
  int size = 64;
  int frames = 24;
  std::string rig = "frontal";
  fs::path config;  // optional SceneConfig json
};

inline int cmd_synth(const SynthArgs& a) {
  Stopwatch sw;
  json resolved = to_json(SceneConfig{});
  json inputs = json::object();
  if (!a.config.empty()) {
    merge_into(resolved, load_json_file(a.config));
    inputs["config"] = digest_file(a.config);
  }
  SceneConfig sc = scene_config_from_json(resolved);
  sc.T = a.frames;
  resolved["T"] = sc.T;
  sc.validate();
  if (a.rig != "frontal" && a.rig != "surround")
    throw ConfigError("rig must be frontal or surround");

  SeedBank bank(a.seed);
  json outputs = json::object();
  for (int i = 0; i < a.scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    Scene scene = generate_scene(sc, bank.derive(name));
    CameraRig rig = a.rig == "frontal" ? make_frontal_rig(sc, a.size, a.size)
                                       : make_surround_rig(sc, a.size, a.size);
    MultiViewSequence seq = render_views(scene, rig, a.size, a.size);
    write_scene_dir(a.out / name, seq, &scene);
    outputs[name] = digest_dir(a.out / name);
  }
  json cfg{{"scene_config", resolved}, {"scenes", a.scenes}, {"size", a.size},
           {"frames", a.frames},       {"rig", a.rig}};
  write_run_manifest(a.out, "synth", cfg, a.seed, inputs, outputs, sw.seconds());
  return 0;
}

// ---- corrupt ----

struct CorruptArgs {
  fs::path spec;  // optional CorruptionSpec json
  fs::path in;
  fs::path out;
  uint64_t seed = 0;
  int history = 2;
};

inline int cmd_corrupt(const CorruptArgs& a) {
  Stopwatch sw;
  auto scenes = list_scene_dirs(a.in);
  json inputs = json::object(), outputs = json::object();
  SeedBank bank(a.seed);
  std::ofstream tf;
  json spec_over = json::object();
  if (!a.spec.empty()) {
    spec_over = load_json_file(a.spec);
    inputs["spec"] = digest_file(a.spec);
  }
  json resolved_spec;
  fs::create_directories(a.out);
  std::ofstream triplet_index(a.out / "triplets.jsonl");
  for (auto& [id, dir] : scenes) {
    LoadedScene ls = read_scene_dir(dir);
    if (!ls.scene)
      throw ConfigError("scene " + id + " has no generator metadata; cannot re-render corrupted");
    json spec_json = to_json(CorruptionSpec::defaults(ls.seq.T));
    merge_into(spec_json, spec_over);
    CorruptionSpec spec = corruption_spec_from_json(spec_json);
    resolved_spec = spec_json;
    CorruptionResult cr =
        corrupt_sequence(*ls.scene, ls.seq.rig, ls.seq.H, ls.seq.W, spec, bank.derive(id));
    inputs[id] = digest_dir(dir);
    json extra{{"far_plane", ls.scene->config.far_plane}, {"source_digest", inputs[id]}};
    write_scene_dir(a.out / id / "degraded", cr.seq, &*ls.scene, extra);
    std::ofstream mf(a.out / id / "corruption_manifest.json");
    mf << cr.manifest.dump(2) << "\n";
    mf.close();
    for (const TrainingTriplet& tr : build_triplets(id, ls.seq.T, a.history)) {
      json row = to_json(tr);
      row["manifest"] = (a.out / id / "corruption_manifest.json").string();
      triplet_index << row.dump() << "\n";
    }
    outputs[id] = digest_dir(a.out / id);
  }
  triplet_index.close();
  json cfg{{"spec", resolved_spec}, {"history", a.history}};
  write_run_manifest(a.out, "corrupt", cfg, a.seed, inputs, outputs, sw.seconds());
  return 0;
}

// ---- build ----

struct BuildArgs {
  fs::path gt;        // synth corpus
  fs::path degraded;  // corrupt corpus
  fs::path out;
  int history = 2;
};

// Pairs clean and corrupted scenes into a training dataset index. Only
// structure is validated here; pixels load lazily at train time.
inline int cmd_build(const BuildArgs& a) {
  Stopwatch sw;
  auto gt_scenes = list_scene_dirs(a.gt);
  json inputs = json::object();
  json scenes = json::array();
  for (auto& [id, dir] : gt_scenes) {
    fs::path dg = a.degraded / id / "degraded";
    std::string why;
    if (!validate_scene_dir(dir, &why)) throw ConfigError("clean scene " + id + ": " + why);
    if (!fs::exists(dg / "meta.json")) throw IoError("missing degraded scene for " + id);
    if (!validate_scene_dir(dg, &why)) throw ConfigError("degraded scene " + id + ": " + why);
    json gm = load_json_file(dir / "meta.json"), dm = load_json_file(dg / "meta.json");
    for (const char* key : {"T", "K", "H", "W"})
      if (gm.at(key) != dm.at(key))
        throw ModelError("clean/degraded shape mismatch for " + id + " on " + key);
    json entry{{"id", id},
               {"gt_dir", fs::absolute(dir).string()},
               {"degraded_dir", fs::absolute(dg).string()},
               {"far_plane", gm.value("far_plane", 100.0)}};
    fs::path cm = a.degraded / id / "corruption_manifest.json";
    if (fs::exists(cm)) {
      json m = load_json_file(cm);
      if (m.contains("temporal") && m["temporal"].contains("keep_set"))
        entry["keep_set"] = m["temporal"]["keep_set"];
    }
    scenes.push_back(entry);
    inputs[id + "/gt"] = digest_dir(dir);
    inputs[id + "/degraded"] = digest_dir(dg);
  }
  json ds{{"scenes", scenes}, {"history", a.history}};
  fs::create_directories(a.out);
  std::ofstream f(a.out / "dataset.json");
  f << ds.dump(2) << "\n";
  f.close();
  json outputs{{"dataset", digest_file(a.out / "dataset.json")}};
  write_run_manifest(a.out, "build", json{{"history", a.history}}, 0, inputs, outputs,
                     sw.seconds());
  return 0;
}

struct LoadedDataset {
  TrainSet train;
  std::vector<EvalScene> eval;  // same scenes, with GT motion + keep sets
};

inline LoadedDataset load_dataset(const fs::path& dataset_dir, int history) {
  fs::path f = fs::is_directory(dataset_dir) ? dataset_dir / "dataset.json" : dataset_dir;
  json ds = load_json_file(f);
  LoadedDataset out;
  std::vector<SceneData> scenes;
  for (const json& e : ds.at("scenes")) {
    LoadedScene gt = read_scene_dir(e.at("gt_dir").get<std::string>());
    LoadedScene dg = read_scene_dir(e.at("degraded_dir").get<std::string>());
    double far = e.value("far_plane", 100.0);
    std::string id = e.at("id");
    scenes.push_back(SceneData::make(id, gt.seq, dg.seq, far));
    if (gt.scene) {
      EvalScene es;
      es.id = id;
      es.scene = *gt.scene;
      es.gt = std::move(gt.seq);
      es.degraded = std::move(dg.seq);
      if (e.contains("keep_set")) es.keep_set = e["keep_set"].get<std::vector<int>>();
      out.eval.push_back(std::move(es));
    }
  }
  out.train = TrainSet::build(std::move(scenes), history);
  return out;
}

// ---- train / finetune ----

struct TrainArgs {
  fs::path config;  // optional TrainConfig json
  fs::path model;   // optional ModelConfig json
  fs::path data;
  fs::path out;
  int64_t seed = -1;   // flag overrides
  int64_t steps = -1;
};

inline int cmd_train(const TrainArgs& a) {
  Stopwatch sw;
  json tj = to_json(TrainConfig{}), mj = to_json(ModelConfig{});
  json inputs = json::object();
  if (!a.config.empty()) {
    merge_into(tj, load_json_file(a.config));
    inputs["config"] = digest_file(a.config);
  }
  if (!a.model.empty()) {
    merge_into(mj, load_json_file(a.model));
    inputs["model"] = digest_file(a.model);
  }
  if (a.seed >= 0) tj["seed"] = a.seed;
  if (a.steps > 0) tj["stage1_steps"] = a.steps;
  TrainConfig tc = train_config_from_json(tj);
  ModelConfig mc = model_config_from_json(mj);
  tc.validate();
  mc.validate();
  inputs["data"] = digest_file(fs::is_directory(a.data) ? a.data / "dataset.json" : a.data);
  LoadedDataset ds = load_dataset(a.data, mc.h);
  TrainResult res = train_stage1(ds.train, mc, tc, a.out);
  json outputs{{"final_ckpt", res.final_ckpt.string()},
               {"final_ckpt_digest", digest_dir(res.final_ckpt)},
               {"final_step", res.final_step},
               {"last_loss", res.last_loss}};
  write_run_manifest(a.out, "train", json{{"train", tj}, {"model", mj}}, tc.seed, inputs, outputs,
                     sw.seconds());
  return 0;
}

struct FinetuneArgs {
  fs::path from;  // stage-1 checkpoint dir
  fs::path data;
  fs::path out;
  std::vector<int> sweep;
  double alpha = 0.5;
  double beta = 0.05;
};

inline int cmd_finetune(const FinetuneArgs& a) {
  Stopwatch sw;
  if (!fs::exists(a.from / "manifest.json")) throw IoError("missing checkpoint " + a.from.string());
  TrainingCheckpoint ck = load_training_checkpoint(a.from);
  json inputs{{"from", digest_dir(a.from)},
              {"data", digest_file(fs::is_directory(a.data) ? a.data / "dataset.json" : a.data)}};
  LoadedDataset ds = load_dataset(a.data, ck.model.h);
  AlignmentWeights w{a.alpha, a.beta};
  w.validate();
  TrainResult res = train_stage2_align(a.from, ds.train, w, a.out, a.sweep);
  json outputs{{"final_ckpt", res.final_ckpt.string()},
               {"final_ckpt_digest", digest_dir(res.final_ckpt)},
               {"final_step", res.final_step}};
  for (int mark : a.sweep)
    outputs["mark_" + std::to_string(mark)] = digest_dir(a.out / ("mark_" + std::to_string(mark)));
  json cfg{{"alpha", a.alpha}, {"beta", a.beta}, {"sweep", a.sweep}};
  write_run_manifest(a.out, "finetune", cfg, ck.train.seed, inputs, outputs, sw.seconds());
  return 0;
}

// ---- restore ----

struct RestoreArgs {
  fs::path ckpt;
  fs::path in;  // degraded scene dir or corpus
  fs::path out;
  int steps = 8;
  int history = -1;  // default: model's h
  int chunk = 1;
  std::string cold_start = "degraded_as_history";
  uint64_t seed = 0;
};

inline int cmd_restore(const RestoreArgs& a) {
  Stopwatch sw;
  if (!fs::exists(a.ckpt / "manifest.json")) throw IoError("missing checkpoint " + a.ckpt.string());
  TrainingCheckpoint ck = load_training_checkpoint(a.ckpt);
  std::string ckpt_digest = digest_dir(a.ckpt);
  RestoreConfig rc = restore_config_from_json(json{{"h", a.history < 0 ? ck.model.h : a.history},
                                                   {"steps", a.steps},
                                                   {"chunk", a.chunk},
                                                   {"cold_start", a.cold_start},
                                                   {"seed", a.seed}});
  rc.validate();
  json inputs{{"ckpt", ckpt_digest}};
  json outputs = json::object();
  for (auto& [id, dir] : list_scene_dirs(a.in)) {
    LoadedScene ls = read_scene_dir(dir);
    double far = ls.meta.value("far_plane", 100.0);
    MultiViewSequence restored = restore_sequence(ck.model, ck.params, ls.seq, far, rc);
    emit_pseudo_gt(restored, far, a.out / id, ckpt_digest, rc);
    inputs[id] = digest_dir(dir);
    outputs[id] = digest_dir(a.out / id);
  }
  write_run_manifest(a.out, "restore", to_json(rc), rc.seed, inputs, outputs, sw.seconds());
  return 0;
}

// ---- eval ----

struct EvalArgs {
  fs::path restored;
  fs::path gt;
  fs::path out;
  fs::path corrupt;  // optional corrupt corpus for keep sets
};

inline int cmd_eval(const EvalArgs& a) {
  Stopwatch sw;
  auto gt_scenes = list_scene_dirs(a.gt);
  json inputs = json::object();
  std::vector<MetricReport> rows;
  for (auto& [id, gdir] : gt_scenes) {
    fs::path rdir = fs::exists(a.restored / "meta.json") ? a.restored : a.restored / id;
    if (!fs::exists(rdir / "meta.json")) throw IoError("missing restored scene for " + id);
    LoadedScene gt = read_scene_dir(gdir);
    LoadedScene rs = read_scene_dir(rdir);
    if (!gt.scene) throw ConfigError("gt scene " + id + " has no generator metadata");
    std::vector<int> keep;
    if (!a.corrupt.empty()) {
      fs::path cm = a.corrupt / id / "corruption_manifest.json";
      if (fs::exists(cm)) {
        json m = load_json_file(cm);
        if (m.contains("temporal") && m["temporal"].contains("keep_set"))
          keep = m["temporal"]["keep_set"].get<std::vector<int>>();
      }
    }
    rows.push_back(score_sequence(id, rs.seq, gt.seq, *gt.scene, keep));
    inputs[id + "/gt"] = digest_dir(gdir);
    inputs[id + "/restored"] = digest_dir(rdir);
  }
  rows.push_back(aggregate_reports(rows));
  emit_report(rows, a.out);
  json outputs{{"metrics", digest_file(a.out / "metrics.csv")}};
  write_run_manifest(a.out, "eval", json::object(), 0, inputs, outputs, sw.seconds());
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  fs::path config;  // {model, train, alpha, beta, data, eval?}
  fs::path out;
};

inline int cmd_ablate(const AblateArgs& a) {
  Stopwatch sw;
  json cfg = load_json_file(a.config);
  json mj = to_json(ModelConfig{}), tj = to_json(TrainConfig{});
  if (cfg.contains("model")) merge_into(mj, cfg["model"]);
  if (cfg.contains("train")) merge_into(tj, cfg["train"]);
  ModelConfig mc = model_config_from_json(mj);
  TrainConfig tc = train_config_from_json(tj);
  AlignmentWeights w{cfg.value("alpha", 0.5), cfg.value("beta", 0.05)};
  mc.validate();
  tc.validate();
  w.validate();
  fs::path train_data = cfg.at("data").get<std::string>();
  fs::path eval_data = cfg.contains("eval") ? fs::path(cfg["eval"].get<std::string>()) : train_data;
  LoadedDataset train_ds = load_dataset(train_data, mc.h);
  LoadedDataset eval_ds = load_dataset(eval_data, mc.h);
  if (eval_ds.eval.empty()) throw ConfigError("ablate: eval scenes lack generator metadata");
  json inputs{{"config", digest_file(a.config)}};
  auto rows = run_ablation_grid(train_ds.train.scenes, eval_ds.eval, mc, tc, w, a.out);
  json outputs{{"grid", digest_file(a.out / "grid.csv")}};
  json resolved{{"model", mj}, {"train", tj}, {"alpha", w.alpha}, {"beta", w.beta}};
  write_run_manifest(a.out, "ablate", resolved, tc.seed, inputs, outputs, sw.seconds());
  return 0;
}

// ---- report ----

struct ReportArgs {
  fs::path metrics;  // metrics csv (rows named mark_<k> form the sweep)
  fs::path out;
};

inline int cmd_report(const ReportArgs& a) {
  Stopwatch sw;
  std::vector<MetricReport> rows = load_metrics_csv(a.metrics);
  std::vector<SweepPoint> sweep;
  for (const MetricReport& r : rows)
    if (r.scene_id.rfind("mark_", 0) == 0) {
      SweepPoint p;
      p.mark = std::stoi(r.scene_id.substr(5));
      p.report = r;
      sweep.push_back(p);
    }
  std::sort(sweep.begin(), sweep.end(),
            [](const SweepPoint& x, const SweepPoint& y) { return x.mark < y.mark; });
  emit_report(rows, a.out, sweep);
  json inputs{{"metrics", digest_file(a.metrics)}};
  json outputs{{"metrics", digest_file(a.out / "metrics.csv")}};
  if (!sweep.empty()) outputs["sweep"] = digest_file(a.out / "sweep.csv");
  write_run_manifest(a.out, "report", json::object(), 0, inputs, outputs, sw.seconds());
  return 0;
}

// Single-line machine-parsable category for each failure class.
inline std::string error_category(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return "missing_input";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint_invalid";
  if (dynamic_cast<const TrainError*>(&e)) return "training_failed";
  if (dynamic_cast<const ConfigError*>(&e)) return "schema_violation";
  if (dynamic_cast<const ModelError*>(&e)) return "dim_mismatch";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "dim_mismatch";
  return "internal_error";
}

inline std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace drivefix::cli
