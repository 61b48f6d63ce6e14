// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Pass criterion names (A1 .. A9) to run a subset.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "near/backward.hpp"
#include "near/checkpoint.hpp"
#include "near/pipeline.hpp"
#include "test_util.hpp"

using namespace near;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) { return format_fixed(v, digits); }

const fs::path kWork = fs::temp_directory_path() / "near_acceptance";

Logger progress() {
  return [](const std::string& s) { std::cout << "    " << s << std::endl; };
}

// ---------------------------------------------------------------------------

Outcome overfit_single_phantom() {
  const auto t0 = Clock::now();
  const Phantom ph = make_phantom(PhantomConfig{}, phantom_case_id(0), derive_seed(0, phantom_case_id(0)));
  TrainConfig tc;
  tc.epochs = 300;
  tc.train_grid = 32;
  const std::vector<TrainingCase> data{{ph.case_id, ph.appearance, ph.mask}};
  const TrainResult r = train(data, ArchConfig{}, tc);
  const VolumeGrid repaired = repair(*r.best, ph.case_id, ph.appearance);
  const double d = dsc(repaired, ph.mask), secs = seconds_since(t0);
  return {d >= 0.95 && secs <= 600,
          "dsc=" + num(d) + " (>= 0.95) time=" + num(secs, 1) + "s (<= 600s) epoch=" + std::to_string(r.best->epoch)};
}

Outcome distortion_band() {
  const auto phantoms = make_phantoms(10, PhantomConfig{}, 0);
  const DistortionConfig cfg;
  double sum = 0, lo = 1, hi = 0;
  int n = 0;
  bool all_in = true;
  for (const auto& ph : phantoms)
    for (int k = 0; k < 5; ++k) {
      Rng rng(derive_seed(static_cast<std::uint64_t>(k), ph.case_id));
      const double d = synthesize_distortion(ph.mask, cfg, rng).dice;
      all_in = all_in && d >= 0.65 && d <= 0.75;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
      sum += d;
      ++n;
    }
  const double mean = sum / n;
  return {all_in && n == 50 && mean >= 0.68 && mean <= 0.74,
          std::to_string(n) + " draws, range [" + num(lo) + ", " + num(hi) + "] (within [0.65, 0.75]) mean=" +
              num(mean) + " (within [0.68, 0.74])"};
}

// The A3 experiment setup with training seed `seed`.
ExperimentConfig repair_experiment(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.cases = 20;
  cfg.seed = 0;
  cfg.train.epochs = 300;
  cfg.train.train_grid = 32;
  cfg.train.seed = seed;
  cfg.variants = {"S+A", "S"};
  return cfg;
}

struct RepairRuns {
  std::vector<ExperimentReport> reports;  // one per training seed
  double seed0_seconds = 0;
};

const RepairRuns& repair_runs() {
  static const RepairRuns runs = [] {
    RepairRuns r;
    for (std::uint64_t s = 0; s < 3; ++s) {
      std::cout << "  experiment, training seed " << s << std::endl;
      const auto t0 = Clock::now();
      r.reports.push_back(run_experiment(repair_experiment(s), kWork / ("experiment_seed" + std::to_string(s)), 1,
                                         progress()));
      if (s == 0) r.seed0_seconds = seconds_since(t0);
    }
    return r;
  }();
  return runs;
}

Outcome repair_improvement() {
  const auto& runs = repair_runs();
  const ExperimentReport& rep = runs.reports.at(0);
  const auto& dist = rep.method(kMethodDistorted);
  const auto& sa = rep.method(kMethodShapeAppearance);
  const double gain_dsc = 100 * (sa.dsc.mean - dist.dsc.mean), gain_nsd = 100 * (sa.nsd.mean - dist.nsd.mean);
  return {gain_dsc >= 5 && gain_nsd >= 5 && runs.seed0_seconds <= 7200,
          "DSC " + num(100 * dist.dsc.mean, 2) + " -> " + num(100 * sa.dsc.mean, 2) + " (+" + num(gain_dsc, 2) +
              ", >= 5) NSD " + num(100 * dist.nsd.mean, 2) + " -> " + num(100 * sa.nsd.mean, 2) + " (+" +
              num(gain_nsd, 2) + ", >= 5) time=" + num(runs.seed0_seconds / 60, 1) + "min (<= 120, both variants)"};
}

Outcome appearance_ablation() {
  const auto& runs = repair_runs();
  double pooled_sa = 0, pooled_s = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < runs.reports.size(); ++s) {
    const double sa = runs.reports[s].method(kMethodShapeAppearance).dsc.mean;
    const double so = runs.reports[s].method(kMethodShape).dsc.mean;
    pooled_sa += sa / static_cast<double>(runs.reports.size());
    pooled_s += so / static_cast<double>(runs.reports.size());
    per_seed += " seed" + std::to_string(s) + " S+A=" + num(100 * sa, 2) + " S=" + num(100 * so, 2);
  }
  const double sa0 = runs.reports[0].method(kMethodShapeAppearance).dsc.mean;
  const double s0 = runs.reports[0].method(kMethodShape).dsc.mean;
  return {sa0 >= s0 && pooled_sa > pooled_s,
          "pooled S+A=" + num(100 * pooled_sa, 2) + " > S=" + num(100 * pooled_s, 2) + ";" + per_seed +
              " (seed0 S+A >= S)"};
}

Outcome baseline_ordering() {
  const ExperimentReport& rep = repair_runs().reports.at(0);
  const double dist = rep.method(kMethodDistorted).dsc.mean, base = rep.method(kMethodBaseline).dsc.mean,
               sa = rep.method(kMethodShapeAppearance).dsc.mean;
  return {base > dist && base < sa, "distorted=" + num(100 * dist, 2) + " < baseline(r=" +
                                        std::to_string(rep.baseline.best_radius) + ")=" + num(100 * base, 2) +
                                        " < S+A=" + num(100 * sa, 2)};
}

// ---------------------------------------------------------------------------

double kink_margin(const ModelParams<double>& p, const Evaluation<double>& ev) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& level : ev.decoder.level) m = std::min(m, level.cwiseAbs().minCoeff());
  for (const auto& c : ev.chunks) {
    const ColMat<double>* in = &c.input;
    for (std::size_t j = 0; j < c.hidden.size(); ++j) {
      ColMat<double> pre = p.head_w[j] * (*in);
      pre.colwise() += p.head_b[j];
      m = std::min(m, pre.cwiseAbs().minCoeff());
      in = &c.hidden[j];
    }
  }
  return m;
}

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  ArchConfig a;
  a.latent_dim = 4;
  a.seed_resolution = 2;
  a.seed_channels = 6;
  a.block_channels = {5};
  a.feature_channels = 3;
  a.head_hidden = {7, 6};
  const LossConfig lc;
  NearState<double> st;
  std::vector<NormalizedPoint> pts;
  std::vector<float> app, lab;
  // first seed whose activations keep clear of ReLU kinks by more than the step
  for (std::uint64_t seed = 0;; ++seed) {
    st = init_model<double>(a, 1, seed);
    Rng rng(seed + 1000);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    pts.clear();
    app.clear();
    lab.clear();
    for (int i = 0; i < 16; ++i) {
      pts.push_back({u(rng), u(rng), u(rng)});
      app.push_back(0.5f + 0.5f * u(rng));
      lab.push_back(u(rng) > 0 ? 1.0f : 0.0f);
    }
    if (kink_margin(st.params, evaluate<double>(a, st.params, st.latents.code(0), pts, app, lab, lc)) > 1e-3) break;
  }
  const Vec<double> z = st.latents.code(0);
  auto eval = [&](const Vec<double>& zz) { return evaluate<double>(a, st.params, zz, pts, app, lab, lc).loss; };
  const auto g = backward(a, st.params, evaluate<double>(a, st.params, z, pts, app, lab, lc));
  auto rel = [](double n, double an) { return std::abs(n - an) / std::max({std::abs(n), std::abs(an), 1e-6}); };
  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  auto refs = st.params.tensors(a);
  const auto grefs = g.params.tensors(a);
  for (std::size_t t = 0; t < refs.size(); ++t)
    for (std::size_t i = 0; i < refs[t].data.size(); ++i) {
      const double old = refs[t].data[i];
      refs[t].data[i] = old + h;
      const double lp = eval(z);
      refs[t].data[i] = old - h;
      const double lm = eval(z);
      refs[t].data[i] = old;
      const double e = rel((lp - lm) / (2 * h), grefs[t].data[i]);
      if (e > worst) worst = e, worst_name = refs[t].name;
    }
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vec<double> zp = z, zm = z;
    zp(i) += h;
    zm(i) -= h;
    const double e = rel((eval(zp) - eval(zm)) / (2 * h), g.latent(i));
    if (e > worst) worst = e, worst_name = "latent";
  }
  const double secs = seconds_since(t0);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  return {worst < 1e-4 && secs <= 60,
          std::string("max rel err=") + buf + " (< 1e-4, worst " + worst_name + ") time=" + num(secs, 1) + "s"};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dens(0.05, 0.6), sp(0.5, 1.5);
  const double taus[] = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
  double worst = 0;
  bool monotone = true;
  for (int k = 0; k < 200; ++k) {
    const Spacing s{sp(rng), sp(rng), sp(rng)};
    const VolumeGrid a = testing::random_mask(cube(8), dens(rng), rng, s);
    const VolumeGrid b = testing::random_mask(cube(8), dens(rng), rng, s);
    worst = std::max(worst, std::abs(dsc(a, b) - testing::brute_force_dsc(a, b)));
    double prev = -1;
    for (double tau : taus) {
      const double v = nsd(a, b, tau);
      worst = std::max(worst, std::abs(v - testing::brute_force_nsd(a, b, tau)));
      monotone = monotone && v >= prev;
      prev = v;
    }
  }
  const double secs = seconds_since(t0);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  return {worst <= 1e-12 && monotone && secs <= 60, std::string("200 pairs, max |diff|=") + buf +
                                                        " (<= 1e-12) monotone=" + (monotone ? "yes" : "no") +
                                                        " time=" + num(secs, 1) + "s"};
}

Outcome experiment_determinism() {
  const fs::path cfg = fs::path(NEAR_CONFIG_DIR) / "experiment_small.json";
  std::vector<fs::path> outs{kWork / "determinism_a", kWork / "determinism_b"};
  for (const auto& o : outs) {
    fs::remove_all(o);
    const std::string cmd = std::string("\"") + NEAR_CLI_PATH + "\" --config \"" + cfg.string() + "\" --out \"" +
                            o.string() + "\" experiment > \"" + (kWork / "determinism.log").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "experiment command failed: " + cmd};
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(outs[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), outs[0]);
    const std::string r = rel.generic_string();
    const bool is_csv = rel.extension() == ".csv";
    const bool is_repaired = r.starts_with("repaired/");
    if (!is_csv && !is_repaired) continue;
    ++compared;
    const fs::path other = outs[1] / rel;
    if (!fs::exists(other) || read_text(entry.path()) != read_text(other)) differing.push_back(r);
  }
  return {differing.empty() && compared > 0,
          std::to_string(compared) + " CSV and repaired-mask files compared, " + std::to_string(differing.size()) +
              " differ" + (differing.empty() ? "" : " (first: " + differing[0] + ")")};
}

Outcome format_round_trip() {
  const fs::path dir = kWork / "round_trip";
  fs::remove_all(dir);
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::int64_t> n(1, 12);
  std::uniform_real_distribution<double> sp(0.2, 3.0);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  auto same_files = [](const fs::path& a, const fs::path& b) {
    fs::path ab = a, bb = b;
    ab.replace_extension(".bin");
    bb.replace_extension(".bin");
    return read_text(a) == read_text(b) && read_text(ab) == read_text(bb);
  };
  int nvol_ok = 0, ckpt_ok = 0;
  const Kind kinds[] = {Kind::Intensity, Kind::Appearance, Kind::Mask, Kind::Distance};
  for (int i = 0; i < 10; ++i) {
    const Kind kind = kinds[i % 4];
    VolumeGrid v({n(rng), n(rng), n(rng)}, {sp(rng), sp(rng), sp(rng)}, kind);
    for (auto& x : v.data()) {
      const float r = u(rng);
      x = kind == Kind::Mask ? (r > 0 ? 1.0f : 0.0f) : kind == Kind::Appearance ? 0.25f * (r + 2.0f) : kind == Kind::Distance ? std::abs(r) : r;
    }
    const fs::path a = dir / "a" / "vol.json", b = dir / "b" / "vol.json";
    save_nvol(v, a);
    save_nvol(load_nvol(a), b);
    nvol_ok += same_files(a, b);

    Checkpoint ck;
    ck.arch.latent_dim = static_cast<int>(n(rng));
    ck.arch.seed_resolution = 2;
    ck.arch.seed_channels = static_cast<int>(n(rng));
    ck.arch.block_channels = {static_cast<int>(n(rng)), static_cast<int>(n(rng))};
    ck.arch.feature_channels = static_cast<int>(n(rng));
    ck.arch.head_hidden = {static_cast<int>(n(rng))};
    ck.arch.use_appearance = i % 2 == 0;
    ck.train.seed = static_cast<std::uint64_t>(i);
    const std::int64_t cases = n(rng);
    std::vector<std::string> ids;
    for (std::int64_t c = 0; c < cases; ++c) ids.push_back(phantom_case_id(static_cast<int>(c)));
    auto st = init_model<float>(ck.arch, cases, static_cast<std::uint64_t>(i), ids);
    ck.params = st.params;
    ck.latents = st.latents;
    ck.epoch = i + 1;
    ck.loss = std::abs(u(rng));
    const fs::path ca = dir / "a" / "checkpoint.json", cb = dir / "b" / "checkpoint.json";
    save_checkpoint(ck, ca);
    save_checkpoint(load_checkpoint(ca), cb);
    ckpt_ok += same_files(ca, cb);
  }
  return {nvol_ok == 10 && ckpt_ok == 10,
          "nvol " + std::to_string(nvol_ok) + "/10, checkpoint " + std::to_string(ckpt_ok) + "/10 byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", overfit_single_phantom}, {"A2", distortion_band},        {"A3", repair_improvement},
      {"A4", appearance_ablation},    {"A5", baseline_ordering},      {"A6", gradient_oracle},
      {"A7", metric_oracles},         {"A8", experiment_determinism}, {"A9", format_round_trip}};
  std::set<std::string> selected(argv + 1, argv + argc);
  for (const auto& s : selected) {
    bool known = false;
    for (const auto& [name, fn] : criteria) known = known || name == s;
    if (!known) {
      std::cerr << "unknown criterion " << s << "\n";
      return 2;
    }
  }
  fs::create_directories(kWork);
  std::map<std::string, Outcome> results;
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
