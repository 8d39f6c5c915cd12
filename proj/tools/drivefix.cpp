#include <Eigen/Core>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "drivefix/cli/commands.hpp"

using namespace drivefix;
using namespace drivefix::cli;

int main(int argc, char** argv) {
  if (int n = thread_cap()) Eigen::setNbThreads(n);

  CLI::App app{"drivefix: synthetic multi-camera driving-scene restoration pipeline"};
  app.set_version_flag("--version", std::string("drivefix ") + kVersion);
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-camera scene corpus");
  synth->add_option("--scenes", sa.scenes, "Number of scenes")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Master seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output corpus directory")->required();
  synth->add_option("--size", sa.size, "Frame height and width in pixels")->capture_default_str();
  synth->add_option("--frames", sa.frames, "Timesteps per scene")->capture_default_str();
  synth->add_option("--rig", sa.rig, "Camera rig: frontal or surround")->capture_default_str();
  synth->add_option("--config", sa.config, "Scene config JSON (overrides defaults)");

  CorruptArgs ca;
  auto* corrupt = app.add_subcommand("corrupt", "Render corrupted versions of a scene corpus");
  corrupt->add_option("--spec", ca.spec, "Corruption spec JSON (overrides defaults)");
  corrupt->add_option("--in", ca.in, "Clean corpus directory")->required();
  corrupt->add_option("--out", ca.out, "Output corpus directory")->required();
  corrupt->add_option("--seed", ca.seed, "Master seed")->capture_default_str();
  corrupt->add_option("--history", ca.history, "History length for the triplet index")
      ->capture_default_str();

  BuildArgs ba;
  auto* build = app.add_subcommand("build", "Pair clean and corrupted scenes into a dataset");
  build->add_option("--gt", ba.gt, "Clean corpus directory")->required();
  build->add_option("--degraded", ba.degraded, "Corrupted corpus directory")->required();
  build->add_option("--out", ba.out, "Output dataset directory")->required();
  build->add_option("--history", ba.history, "History length")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Stage-1 diffusion training");
  train->add_option("--config", ta.config, "Train config JSON (overrides defaults)");
  train->add_option("--model", ta.model, "Model config JSON (overrides defaults)");
  train->add_option("--data", ta.data, "Dataset directory or dataset.json")->required();
  train->add_option("--out", ta.out, "Output run directory")->required();
  train->add_option("--seed", ta.seed, "Seed override");
  train->add_option("--steps", ta.steps, "Stage-1 step count override");

  FinetuneArgs fa;
  auto* finetune = app.add_subcommand("finetune", "Stage-2 geometry-alignment fine-tune");
  finetune->add_option("--from", fa.from, "Stage-1 checkpoint directory")->required();
  finetune->add_option("--data", fa.data, "Dataset directory or dataset.json")->required();
  finetune->add_option("--out", fa.out, "Output run directory")->required();
  finetune->add_option("--sweep", fa.sweep, "Comma-separated step marks for extra checkpoints")
      ->delimiter(',');
  finetune->add_option("--alpha", fa.alpha, "Angular alignment weight")->capture_default_str();
  finetune->add_option("--beta", fa.beta, "Scale alignment weight")->capture_default_str();

  RestoreArgs ra;
  auto* restore = app.add_subcommand("restore", "Restore degraded scenes with a checkpoint");
  restore->add_option("--ckpt", ra.ckpt, "Checkpoint directory")->required();
  restore->add_option("--in", ra.in, "Degraded scene dir or corpus")->required();
  restore->add_option("--out", ra.out, "Output directory")->required();
  restore->add_option("--steps", ra.steps, "Sampler steps")->capture_default_str();
  restore->add_option("--history", ra.history, "History length (-1 = model default)");
  restore->add_option("--chunk", ra.chunk, "Timesteps per chunk")->capture_default_str();
  restore->add_option("--cold-start", ra.cold_start,
                      "degraded_as_history or replicate_first")
      ->capture_default_str();
  restore->add_option("--seed", ra.seed, "Sampler seed")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score restored scenes against ground truth");
  eval->add_option("--restored", ea.restored, "Restored scene dir or corpus")->required();
  eval->add_option("--gt", ea.gt, "Ground-truth scene dir or corpus")->required();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_option("--corrupt", ea.corrupt,
                   "Corrupt corpus (supplies keep sets for the PSNR split)");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the six ablation variants");
  ablate->add_option("--config", aa.config, "Grid config JSON")->required();
  ablate->add_option("--out", aa.out, "Output grid directory")->required();

  ReportArgs pa;
  auto* report = app.add_subcommand("report", "Regenerate tables and sweep plots from metrics");
  report->add_option("--metrics", pa.metrics, "Metrics CSV")->required();
  report->add_option("--out", pa.out, "Report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(sa);
    if (corrupt->parsed()) return cmd_corrupt(ca);
    if (build->parsed()) return cmd_build(ba);
    if (train->parsed()) return cmd_train(ta);
    if (finetune->parsed()) return cmd_finetune(fa);
    if (restore->parsed()) return cmd_restore(ra);
    if (eval->parsed()) return cmd_eval(ea);
    if (ablate->parsed()) return cmd_ablate(aa);
    if (report->parsed()) return cmd_report(pa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_category(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
