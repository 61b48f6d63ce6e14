#pragma once

// End-to-end orchestration on files: case manifests, repair inference,
// smoothing baseline, mesh export and the distorted-gold experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/checkpoint.hpp"
#include "near/distort.hpp"
#include "near/io.hpp"
#include "near/marching_cubes.hpp"
#include "near/metrics.hpp"
#include "near/morphology.hpp"
#include "near/phantom.hpp"
#include "near/trainer.hpp"

namespace near {

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Manifests

struct CaseRecord {
  std::string case_id;
  fs::path appearance_path;
  fs::path mask_path;
  std::optional<fs::path> gt_mask_path;
  std::optional<std::string> label;  // "normal" | "abnormal"; metadata only

  bool operator==(const CaseRecord&) const = default;
};

/// Loads a JSON array of case records. Relative paths resolve against the
/// manifest's directory.
inline std::vector<CaseRecord> load_manifest(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw IoError("manifest must be a JSON array: " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<CaseRecord> out;
  try {
    for (const auto& r : j) {
      CaseRecord c;
      c.case_id = r.at("case_id").get<std::string>();
      c.appearance_path = resolve(r.at("appearance_path").get<std::string>());
      c.mask_path = resolve(r.at("mask_path").get<std::string>());
      if (r.contains("gt_mask_path")) c.gt_mask_path = resolve(r.at("gt_mask_path").get<std::string>());
      if (r.contains("label")) {
        c.label = r.at("label").get<std::string>();
        if (*c.label != "normal" && *c.label != "abnormal")
          throw IoError("case " + c.case_id + ": label must be normal or abnormal");
      }
      for (const auto& prev : out)
        if (prev.case_id == c.case_id) throw IoError("duplicate case id " + c.case_id + " in " + path.string());
      out.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw IoError("bad manifest record in " + path.string() + ": " + e.what());
  }
  return out;
}

/// Writes records with paths relative to the manifest's directory.
inline void save_manifest(const std::vector<CaseRecord>& cases, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
  json j = json::array();
  for (const auto& c : cases) {
    json r = {{"case_id", c.case_id}, {"appearance_path", rel(c.appearance_path)}, {"mask_path", rel(c.mask_path)}};
    if (c.gt_mask_path) r["gt_mask_path"] = rel(*c.gt_mask_path);
    if (c.label) r["label"] = *c.label;
    j.push_back(std::move(r));
  }
  write_json(path, j);
}

/// Loads every case's appearance and mask and checks the manifest invariants.
inline std::vector<TrainingCase> load_cases(const std::vector<CaseRecord>& records) {
  std::vector<TrainingCase> out;
  for (const auto& r : records) {
    TrainingCase c{r.case_id, load_nvol(r.appearance_path), load_nvol(r.mask_path)};
    if (c.appearance.kind() != Kind::Appearance) throw IoError(r.case_id + ": appearance volume has the wrong kind");
    require_mask(c.mask, "load_cases");
    require_same_shape(c.appearance, c.mask, "load_cases");
    out.push_back(std::move(c));
  }
  return out;
}

/// Writes the cases of `phantoms` as nvol pairs under `dir` plus dir/manifest.json.
inline std::vector<CaseRecord> save_phantoms(const std::vector<Phantom>& phantoms, const fs::path& dir) {
  std::vector<CaseRecord> records;
  for (const auto& ph : phantoms) {
    CaseRecord r{ph.case_id, dir / (ph.case_id + ".appearance.json"), dir / (ph.case_id + ".mask.json"), {}, {}};
    save_nvol(ph.appearance, r.appearance_path);
    save_nvol(ph.mask, r.mask_path);
    records.push_back(std::move(r));
  }
  save_manifest(records, dir / "manifest.json");
  return records;
}

// ---------------------------------------------------------------------------
// Inference

namespace detail {

inline std::vector<float> voxel_logits(const Checkpoint& ck, const std::string& case_id, const VolumeGrid& appearance,
                                       const Exec& exec) {
  const std::int64_t row = ck.latents.find(case_id);
  if (row < 0) throw UnknownCase("case " + case_id + " is not in the checkpoint latent table");
  const auto pyramid = decode_features<float>(ck.arch, ck.params, ck.latents.code(row), nullptr, exec.threads);
  return query_logits<float>(ck.arch, ck.params, pyramid, voxel_centers(appearance.shape()), appearance.data(), exec);
}

}  // namespace detail

/// Occupancy probability at every voxel center of the appearance grid.
inline VolumeGrid predict_probability(const Checkpoint& ck, const std::string& case_id, const VolumeGrid& appearance,
                                      const Exec& exec = {}) {
  const std::vector<float> logits = detail::voxel_logits(ck, case_id, appearance, exec);
  VolumeGrid out(appearance.shape(), appearance.spacing(), Kind::Appearance);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = detail::sigmoid(logits[i]);
  return out;
}

/// Foreground where the field exceeds t, restricted to the largest component.
/// The comparison happens on logits so t=0 and t=1 are exact even where the
/// single-precision sigmoid saturates.
inline VolumeGrid repair(const Checkpoint& ck, const std::string& case_id, const VolumeGrid& appearance,
                         double t = 0.5, const Exec& exec = {}) {
  const std::vector<float> logits = detail::voxel_logits(ck, case_id, appearance, exec);
  const double cut = t <= 0   ? -std::numeric_limits<double>::infinity()
                     : t >= 1 ? std::numeric_limits<double>::infinity()
                              : std::log(t / (1 - t));
  VolumeGrid mask = VolumeGrid::mask(appearance.shape(), appearance.spacing());
  for (std::size_t i = 0; i < logits.size(); ++i) mask[i] = static_cast<double>(logits[i]) > cut ? 1.0f : 0.0f;
  return connected_components(mask, KeepLargest{});
}

// ---------------------------------------------------------------------------
// Smoothing baseline

inline VolumeGrid baseline_smooth(const VolumeGrid& mask, int radius) {
  return connected_components(morphological_close(mask, radius), KeepLargest{});
}

struct BaselineSweepEntry {
  int radius = 0;
  MeanStd dsc, nsd;
};

struct BaselineSweep {
  std::vector<BaselineSweepEntry> entries;
  int best_radius = 0;  // highest mean DSC against gold; ties go to the smaller radius
};

// ---------------------------------------------------------------------------
// Mesh export

struct MeshExport {
  std::size_t triangles = 0;
  bool empty = false;
};

inline MeshExport export_mesh(const VolumeGrid& field, double t, const fs::path& path, MeshFormat format,
                              const Logger& warn = {}) {
  const TriangleMesh mesh = marching_cubes(field, t);
  save_mesh(mesh, path, format);
  if (mesh.triangles.empty() && warn) warn("warning: empty mesh written to " + path.string());
  return {mesh.triangles.size(), mesh.triangles.empty()};
}

inline MeshFormat mesh_format_from_string(const std::string& s) {
  if (s == "off") return MeshFormat::Off;
  if (s == "stl") return MeshFormat::Stl;
  throw InvalidArgument("unknown mesh format " + s + " (expected off or stl)");
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// "case_id,dsc,nsd" rows plus a final "mean±std" row in percent.
inline std::string metrics_csv(const std::vector<CaseMetrics>& rows) {
  std::ostringstream out;
  out << "case_id,dsc,nsd\n";
  for (const auto& r : rows) out << r.case_id << ',' << format_fixed(r.dsc, 10) << ',' << format_fixed(r.nsd, 10) << '\n';
  if (!rows.empty()) {
    const MetricSummary s = aggregate(rows);
    out << "mean±std," << format_fixed(100 * s.dsc.mean, 2) << "±" << format_fixed(100 * s.dsc.std, 2) << ','
        << format_fixed(100 * s.nsd.mean, 2) << "±" << format_fixed(100 * s.nsd.std, 2) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Experiment

inline constexpr const char* kMethodDistorted = "distorted";
inline constexpr const char* kMethodBaseline = "baseline";
inline constexpr const char* kMethodShape = "NeAR (S)";
inline constexpr const char* kMethodShapeAppearance = "NeAR (S+A)";

/// A model variant is named "S" (shape only) or "S+A" (shape plus appearance).
inline std::string variant_method(const std::string& v) {
  if (v == "S") return kMethodShape;
  if (v == "S+A") return kMethodShapeAppearance;
  throw InvalidArgument("unknown model variant " + v + " (expected S or S+A)");
}
inline std::string variant_dir(const std::string& v) { return v == "S" ? "s" : "s_a"; }

struct ExperimentConfig {
  int cases = 20;
  std::uint64_t seed = 0;  // data seed: phantoms and distortions
  PhantomConfig phantom;
  DistortionConfig distortion;
  ArchConfig arch;
  TrainConfig train;  // train.seed seeds model initialization and sampling
  std::vector<std::string> variants{"S+A", "S"};
  double threshold = 0.5;
  std::vector<int> baseline_radii{1, 2};
  double nsd_tolerance_mm = kDefaultNsdToleranceMm;
  bool export_meshes = false;
  std::string mesh_format = "off";

  void validate() const {
    if (cases < 1) throw InvalidArgument("experiment needs at least one case");
    phantom.validate();
    distortion.validate();
    arch.validate();
    train.validate();
    if (variants.empty()) throw InvalidArgument("experiment needs at least one model variant");
    for (const auto& v : variants) variant_method(v);
    if (baseline_radii.empty()) throw InvalidArgument("experiment needs at least one baseline radius");
    for (int r : baseline_radii)
      if (r < 1) throw InvalidArgument("baseline radii must be at least 1");
    if (!(nsd_tolerance_mm >= 0)) throw InvalidArgument("nsd tolerance must be non-negative");
    mesh_format_from_string(mesh_format);
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"cases", c.cases},
       {"seed", c.seed},
       {"phantom", c.phantom},
       {"distortion", c.distortion},
       {"arch", c.arch},
       {"train", c.train},
       {"variants", c.variants},
       {"threshold", c.threshold},
       {"baseline_radii", c.baseline_radii},
       {"nsd_tolerance_mm", c.nsd_tolerance_mm},
       {"export_meshes", c.export_meshes},
       {"mesh_format", c.mesh_format}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.cases = j.value("cases", c.cases);
  c.seed = j.value("seed", c.seed);
  if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomConfig>();
  if (j.contains("distortion")) c.distortion = j.at("distortion").get<DistortionConfig>();
  if (j.contains("arch")) c.arch = j.at("arch").get<ArchConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  c.variants = j.value("variants", c.variants);
  c.threshold = j.value("threshold", c.threshold);
  c.baseline_radii = j.value("baseline_radii", c.baseline_radii);
  c.nsd_tolerance_mm = j.value("nsd_tolerance_mm", c.nsd_tolerance_mm);
  c.export_meshes = j.value("export_meshes", c.export_meshes);
  c.mesh_format = j.value("mesh_format", c.mesh_format);
  c.validate();
}

struct MethodSummary {
  std::string method;
  MetricSummary metrics;
};

struct ExperimentReport {
  fs::path out_dir;
  std::vector<MethodSummary> summary;  // distorted, baseline, then variants in config order
  BaselineSweep baseline;
  std::vector<double> achieved_dice;   // distortion Dice per case

  const MetricSummary& method(const std::string& name) const {
    for (const auto& m : summary)
      if (m.method == name) return m.metrics;
    throw InvalidArgument("no report row for " + name);
  }
};

/// A failure inside one experiment phase; outputs of earlier phases stay on disk.
class PhaseError : public Error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : Error("experiment phase '" + phase + "' failed: " + what), phase_(std::move(phase)) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

namespace detail {

template <class Fn>
auto run_phase(const std::string& name, const Logger& log, Fn&& fn) {
  if (log) log("phase " + name);
  try {
    return fn();
  } catch (const std::exception& e) {
    throw PhaseError(name, e.what());
  }
}

inline std::vector<CaseMetrics> evaluate_dir(const std::vector<CaseRecord>& cases, const fs::path& dir, double tau,
                                             int threads) {
  std::vector<CaseMetrics> out(cases.size());
  parallel_for(static_cast<std::int64_t>(cases.size()), threads, [&](std::int64_t i) {
    const auto& c = cases[i];
    out[i] = evaluate_case(c.case_id, load_nvol(dir / (c.case_id + ".mask.json")), load_nvol(*c.gt_mask_path), tau);
  });
  return out;
}

}  // namespace detail

/// phantoms -> distort -> train each variant -> repair -> baseline -> evaluate.
/// Every reported number is computed from masks re-read from disk.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const fs::path& out, int threads = 1,
                                       const Logger& log = {}) {
  cfg.validate();
  ExperimentReport report;
  report.out_dir = out;
  const fs::path gold_dir = out / "gold", distorted_dir = out / "distorted", reports_dir = out / "reports";
  write_json(out / "experiment.json", cfg);

  const std::vector<CaseRecord> gold = detail::run_phase("phantoms", log, [&] {
    return save_phantoms(make_phantoms(cfg.cases, cfg.phantom, cfg.seed, threads), gold_dir);
  });

  const std::vector<CaseRecord> distorted = detail::run_phase("distort", log, [&] {
    std::vector<DistortionResult> results(gold.size());
    parallel_for(static_cast<std::int64_t>(gold.size()), threads, [&](std::int64_t i) {
      Rng rng(derive_seed(cfg.seed ^ 0xd157ULL, gold[i].case_id));
      results[i] = synthesize_distortion(load_nvol(gold[i].mask_path), cfg.distortion, rng);
    });
    std::vector<CaseRecord> records;
    std::ostringstream csv;
    csv << "case_id,dice,attempts\n";
    for (std::size_t i = 0; i < gold.size(); ++i) {
      CaseRecord r = gold[i];
      r.mask_path = distorted_dir / (r.case_id + ".mask.json");
      r.gt_mask_path = gold[i].mask_path;
      save_nvol(results[i].mask, r.mask_path);
      csv << r.case_id << ',' << format_fixed(results[i].dice, 10) << ',' << results[i].attempts << '\n';
      report.achieved_dice.push_back(results[i].dice);
      records.push_back(std::move(r));
    }
    save_manifest(records, distorted_dir / "manifest.json");
    write_text(distorted_dir / "distortion.csv", csv.str());
    return records;
  });

  for (const auto& v : cfg.variants) {
    const fs::path model_dir = out / "models" / variant_dir(v);
    detail::run_phase("train " + v, log, [&] {
      ArchConfig arch = cfg.arch;
      arch.use_appearance = v == "S+A";
      TrainConfig tc = cfg.train;
      tc.threads = threads;
      const auto dataset = load_cases(distorted);
      const TrainResult res = train(dataset, arch, tc, [&](int epoch, double loss) {
        if (log && (epoch == 1 || epoch % 25 == 0 || epoch == tc.epochs))
          log("  " + v + " epoch " + std::to_string(epoch) + " loss " + format_fixed(loss, 6));
      });
      if (res.aborted && log) log("  training stopped early: " + res.abort_reason);
      save_checkpoint(*res.best, model_dir / "checkpoint.json");
      save_loss_log(res.epoch_losses, model_dir / "loss.csv");
      return 0;
    });
    detail::run_phase("repair " + v, log, [&] {
      const Checkpoint ck = load_checkpoint(model_dir / "checkpoint.json");
      const Exec exec{threads};
      for (const auto& c : distorted) {
        const VolumeGrid appearance = load_nvol(c.appearance_path);
        const VolumeGrid mask = repair(ck, c.case_id, appearance, cfg.threshold, exec);
        const fs::path dir = out / "repaired" / variant_dir(v);
        save_nvol(mask, dir / (c.case_id + ".mask.json"));
        if (cfg.export_meshes)
          export_mesh(mask, 0.5, out / "meshes" / variant_dir(v) / (c.case_id + "." + cfg.mesh_format),
                      mesh_format_from_string(cfg.mesh_format), log);
      }
      return 0;
    });
  }

  detail::run_phase("baseline", log, [&] {
    std::ostringstream csv;
    csv << "radius,dsc_mean,dsc_std,nsd_mean,nsd_std\n";
    double best = -1;
    for (int r : cfg.baseline_radii) {
      const fs::path dir = out / "baseline" / ("r" + std::to_string(r));
      parallel_for(static_cast<std::int64_t>(distorted.size()), threads, [&](std::int64_t i) {
        save_nvol(baseline_smooth(load_nvol(distorted[i].mask_path), r), dir / (distorted[i].case_id + ".mask.json"));
      });
      const auto rows = detail::evaluate_dir(distorted, dir, cfg.nsd_tolerance_mm, threads);
      const MetricSummary s = aggregate(rows, cfg.nsd_tolerance_mm);
      report.baseline.entries.push_back({r, s.dsc, s.nsd});
      if (s.dsc.mean > best) {
        best = s.dsc.mean;
        report.baseline.best_radius = r;
      }
      csv << r << ',' << format_fixed(100 * s.dsc.mean, 2) << ',' << format_fixed(100 * s.dsc.std, 2) << ','
          << format_fixed(100 * s.nsd.mean, 2) << ',' << format_fixed(100 * s.nsd.std, 2) << '\n';
    }
    write_text(reports_dir / "baseline_sweep.csv", csv.str());
    return 0;
  });

  detail::run_phase("evaluate", log, [&] {
    std::vector<std::pair<std::string, fs::path>> methods{
        {kMethodDistorted, distorted_dir},
        {kMethodBaseline, out / "baseline" / ("r" + std::to_string(report.baseline.best_radius))}};
    for (const auto& v : cfg.variants) methods.emplace_back(variant_method(v), out / "repaired" / variant_dir(v));

    std::ostringstream per_case, summary;
    per_case << "method,case_id,dsc,nsd\n";
    summary << "method,dsc_mean,dsc_std,nsd_mean,nsd_std\n";
    for (const auto& [name, dir] : methods) {
      const auto rows = detail::evaluate_dir(distorted, dir, cfg.nsd_tolerance_mm, threads);
      for (const auto& r : rows)
        per_case << name << ',' << r.case_id << ',' << format_fixed(r.dsc, 10) << ',' << format_fixed(r.nsd, 10)
                 << '\n';
      const MetricSummary s = aggregate(rows, cfg.nsd_tolerance_mm);
      report.summary.push_back({name, s});
      summary << name << ',' << format_fixed(100 * s.dsc.mean, 2) << ',' << format_fixed(100 * s.dsc.std, 2) << ','
              << format_fixed(100 * s.nsd.mean, 2) << ',' << format_fixed(100 * s.nsd.std, 2) << '\n';
    }
    write_text(reports_dir / "per_case.csv", per_case.str());
    write_text(reports_dir / "summary.csv", summary.str());
    return 0;
  });
  return report;
}

}  // namespace near
