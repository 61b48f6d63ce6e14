// near: command-line front end for phantom generation, distortion, training,
// repair, smoothing baseline, evaluation, mesh export and full experiments.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "near/pipeline.hpp"

namespace {

using namespace near;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  int threads = 1;
};

json config_or_empty(const Globals& g) { return g.config.empty() ? json::object() : read_json(g.config); }

void log_line(const std::string& s) { std::cerr << s << std::endl; }

fs::path require_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw InvalidArgument(std::string(cmd) + " needs --out");
  return g.out;
}

// ----------------------------------------------------------------------------

void cmd_phantoms(const Globals& g, int n, std::int64_t resolution) {
  PhantomConfig cfg = config_or_empty(g).get<PhantomConfig>();
  if (resolution > 0) cfg.resolution = resolution;
  const fs::path out = require_out(g, "phantoms");
  const auto phantoms = make_phantoms(n, cfg, g.seed.value_or(0), g.threads);
  save_phantoms(phantoms, out);
  for (const auto& ph : phantoms)
    log_line(ph.case_id + ": " + std::to_string(ph.mask.count_foreground()) + " foreground voxels, contrast " +
             format_fixed(appearance_contrast(ph), 3));
}

void cmd_distort(const Globals& g, const std::string& manifest) {
  const DistortionConfig cfg = config_or_empty(g).get<DistortionConfig>();
  const fs::path out = require_out(g, "distort");
  const auto cases = load_manifest(manifest);
  const std::uint64_t seed = g.seed.value_or(0);
  std::vector<DistortionResult> results(cases.size());
  parallel_for(static_cast<std::int64_t>(cases.size()), g.threads, [&](std::int64_t i) {
    Rng rng(derive_seed(seed, cases[i].case_id));
    results[i] = synthesize_distortion(load_nvol(cases[i].mask_path), cfg, rng);
  });
  std::vector<CaseRecord> records;
  std::string csv = "case_id,dice,attempts\n";
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CaseRecord r = cases[i];
    r.gt_mask_path = cases[i].mask_path;
    r.mask_path = out / (r.case_id + ".mask.json");
    save_nvol(results[i].mask, r.mask_path);
    csv += r.case_id + "," + format_fixed(results[i].dice, 10) + "," + std::to_string(results[i].attempts) + "\n";
    records.push_back(std::move(r));
  }
  save_manifest(records, out / "manifest.json");
  write_text(out / "distortion.csv", csv);
  std::cout << csv;
}

void cmd_train(const Globals& g, const std::string& manifest, bool shape_only) {
  const json j = config_or_empty(g);
  ArchConfig arch = j.contains("arch") ? j.at("arch").get<ArchConfig>() : ArchConfig{};
  TrainConfig tc = j.contains("train") ? j.at("train").get<TrainConfig>() : TrainConfig{};
  if (shape_only) arch.use_appearance = false;
  if (g.seed) tc.seed = *g.seed;
  tc.threads = g.threads;
  const fs::path out = require_out(g, "train");
  const auto dataset = load_cases(load_manifest(manifest));
  const TrainResult res = train(dataset, arch, tc, [&](int epoch, double loss) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == tc.epochs)
      log_line("epoch " + std::to_string(epoch) + " loss " + format_fixed(loss, 6));
  });
  if (res.aborted) log_line("training stopped early: " + res.abort_reason);
  save_checkpoint(*res.best, out / "checkpoint.json");
  save_loss_log(res.epoch_losses, out / "loss.csv");
  log_line("selected epoch " + std::to_string(res.best->epoch) + " loss " + format_fixed(res.best->loss, 6));
}

void cmd_repair(const Globals& g, const std::string& checkpoint, const std::string& manifest,
                const std::vector<std::string>& only, double threshold, bool probability) {
  const fs::path out = require_out(g, "repair");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Exec exec{g.threads};
  for (const auto& c : load_manifest(manifest)) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.case_id) == only.end()) continue;
    const VolumeGrid appearance = load_nvol(c.appearance_path);
    save_nvol(repair(ck, c.case_id, appearance, threshold, exec), out / (c.case_id + ".mask.json"));
    if (probability)
      save_nvol(predict_probability(ck, c.case_id, appearance, exec), out / (c.case_id + ".probability.json"));
    log_line("repaired " + c.case_id);
  }
}

void cmd_baseline(const Globals& g, const std::string& manifest, std::vector<int> radii, double tau) {
  const fs::path out = require_out(g, "baseline");
  const auto cases = load_manifest(manifest);
  const bool have_gold = std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.gt_mask_path; });
  if (radii.empty()) radii = {1, 2};
  if (!have_gold && radii.size() > 1) {
    log_line("no gold masks in the manifest; using radius " + std::to_string(radii.front()));
    radii.resize(1);
  }
  int best_radius = radii.front();
  double best = -1;
  std::string csv = "radius,dsc_mean,nsd_mean\n";
  for (int r : radii) {
    std::vector<CaseMetrics> rows;
    std::vector<VolumeGrid> smoothed(cases.size());
    parallel_for(static_cast<std::int64_t>(cases.size()), g.threads,
                 [&](std::int64_t i) { smoothed[i] = baseline_smooth(load_nvol(cases[i].mask_path), r); });
    if (have_gold) {
      for (std::size_t i = 0; i < cases.size(); ++i)
        rows.push_back(evaluate_case(cases[i].case_id, smoothed[i], load_nvol(*cases[i].gt_mask_path), tau));
      const MetricSummary s = aggregate(rows, tau);
      csv += std::to_string(r) + "," + format_fixed(s.dsc.mean, 10) + "," + format_fixed(s.nsd.mean, 10) + "\n";
      if (s.dsc.mean <= best) continue;
      best = s.dsc.mean;
    }
    best_radius = r;
    for (std::size_t i = 0; i < cases.size(); ++i) save_nvol(smoothed[i], out / (cases[i].case_id + ".mask.json"));
  }
  if (have_gold) {
    write_text(out / "sweep.csv", csv);
    std::cout << csv;
  }
  log_line("baseline radius " + std::to_string(best_radius));
}

void cmd_eval(const Globals& g, const std::string& manifest, const std::string& pred_dir, double tau) {
  std::vector<CaseMetrics> rows;
  for (const auto& c : load_manifest(manifest)) {
    const fs::path gold = c.gt_mask_path ? *c.gt_mask_path : c.mask_path;
    rows.push_back(evaluate_case(c.case_id, load_nvol(fs::path(pred_dir) / (c.case_id + ".mask.json")), load_nvol(gold), tau));
  }
  const std::string csv = metrics_csv(rows);
  if (!g.out.empty()) write_text(g.out, csv);
  std::cout << csv;
}

void cmd_mesh(const Globals& g, const std::string& input, double threshold, const std::string& format) {
  const fs::path out = require_out(g, "mesh");
  const VolumeGrid field = load_nvol(input);
  const MeshExport e = export_mesh(field, threshold, out, mesh_format_from_string(format), log_line);
  log_line(std::to_string(e.triangles) + " triangles written to " + out.string());
}

void cmd_experiment(const Globals& g) {
  ExperimentConfig cfg = config_or_empty(g).get<ExperimentConfig>();
  if (g.seed) cfg.seed = *g.seed;
  const fs::path out = require_out(g, "experiment");
  const ExperimentReport rep = run_experiment(cfg, out, g.threads, log_line);
  std::cout << read_text(out / "reports" / "summary.csv");
  (void)rep;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reuses buffers of a few MB every step; keep them in the heap
  // instead of returning them to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  CLI::App app{"Appearance-aware implicit mask repair"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory (or file for eval/mesh)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  int n = 1;
  std::int64_t resolution = 0;
  auto* phantoms = app.add_subcommand("phantoms", "Generate synthetic (appearance, mask) cases");
  phantoms->add_option("-n,--cases", n, "Number of cases")->check(CLI::PositiveNumber);
  phantoms->add_option("--resolution", resolution, "Grid size per axis (overrides the config)");

  std::string manifest;
  auto* distort = app.add_subcommand("distort", "Synthesize distorted masks in the Dice band");
  distort->add_option("--manifest", manifest, "Case manifest")->required()->check(CLI::ExistingFile);

  bool shape_only = false;
  auto* train_cmd = app.add_subcommand("train", "Fit latents, decoder and head on a manifest");
  train_cmd->add_option("--manifest", manifest, "Case manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_flag("--shape-only", shape_only, "Drop the appearance input (NeAR (S))");

  std::string checkpoint;
  std::vector<std::string> only;
  double threshold = 0.5;
  bool probability = false;
  auto* repair_cmd = app.add_subcommand("repair", "Reconstruct full-resolution masks from a checkpoint");
  repair_cmd->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  repair_cmd->add_option("--manifest", manifest, "Case manifest")->required()->check(CLI::ExistingFile);
  repair_cmd->add_option("--case", only, "Restrict to these case ids");
  repair_cmd->add_option("-t,--threshold", threshold, "Occupancy threshold");
  repair_cmd->add_flag("--probability", probability, "Also write probability volumes");

  std::vector<int> radii;
  double tau = kDefaultNsdToleranceMm;
  auto* baseline = app.add_subcommand("baseline", "Closing plus largest-component smoothing");
  baseline->add_option("--manifest", manifest, "Case manifest")->required()->check(CLI::ExistingFile);
  baseline->add_option("--radius", radii, "Closing radii to sweep (default 1 2)");
  baseline->add_option("--tolerance", tau, "NSD tolerance in mm");

  std::string pred_dir;
  auto* eval = app.add_subcommand("eval", "DSC and NSD of predicted masks against gold");
  eval->add_option("--manifest", manifest, "Case manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred", pred_dir, "Directory of <case_id>.mask.json predictions")->required();
  eval->add_option("--tolerance", tau, "NSD tolerance in mm");

  std::string input, format = "off";
  auto* mesh = app.add_subcommand("mesh", "Marching-cubes export of a mask or probability volume");
  mesh->add_option("--input", input, "nvol header")->required()->check(CLI::ExistingFile);
  mesh->add_option("-t,--threshold", threshold, "Iso-level");
  mesh->add_option("--format", format, "off or stl")->check(CLI::IsMember({"off", "stl"}));

  auto* experiment = app.add_subcommand("experiment", "phantoms -> distort -> train -> repair -> evaluate");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*phantoms) cmd_phantoms(g, n, resolution);
    if (*distort) cmd_distort(g, manifest);
    if (*train_cmd) cmd_train(g, manifest, shape_only);
    if (*repair_cmd) cmd_repair(g, checkpoint, manifest, only, threshold, probability);
    if (*baseline) cmd_baseline(g, manifest, radii, tau);
    if (*eval) cmd_eval(g, manifest, pred_dir, tau);
    if (*mesh) cmd_mesh(g, input, threshold, format);
    if (*experiment) cmd_experiment(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
