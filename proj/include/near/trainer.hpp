#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/adam.hpp"
#include "near/backward.hpp"
#include "near/error.hpp"
#include "near/model.hpp"
#include "near/sampling.hpp"
#include "near/volume.hpp"

namespace near {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 300;
  double lambda = 0.01;
  bool squared_latent_norm = false;
  std::int64_t train_grid = 64;
  double jitter_sigma = 0.01;
  std::int64_t points_per_step = 16384;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (!(lr > 0)) throw InvalidArgument("lr must be positive");
    if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
    if (lambda < 0) throw InvalidArgument("lambda must be non-negative");
    if (train_grid < 2) throw InvalidArgument("train_grid must be at least 2");
    if (jitter_sigma < 0) throw InvalidArgument("jitter_sigma must be non-negative");
    if (points_per_step < 1) throw InvalidArgument("points_per_step must be positive");
  }
  LossConfig loss() const { return {lambda, squared_latent_norm}; }
  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"epochs", c.epochs},
       {"lambda", c.lambda},
       {"squared_latent_norm", c.squared_latent_norm},
       {"train_grid", c.train_grid},
       {"jitter_sigma", c.jitter_sigma},
       {"points_per_step", c.points_per_step},
       {"seed", c.seed},
       {"checkpoint_policy", "lowest-training-loss"}};
}

/// `threads` is an execution setting and is never persisted.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.squared_latent_norm = j.value("squared_latent_norm", c.squared_latent_norm);
  c.train_grid = j.value("train_grid", c.train_grid);
  c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
  c.points_per_step = j.value("points_per_step", c.points_per_step);
  c.seed = j.value("seed", c.seed);
  if (j.contains("checkpoint_policy") && j.at("checkpoint_policy") != "lowest-training-loss")
    throw InvalidArgument("only the lowest-training-loss checkpoint policy is supported");
  c.validate();
}

/// One training shape: windowed image plus the (possibly imperfect) mask.
struct TrainingCase {
  std::string case_id;
  VolumeGrid appearance;
  VolumeGrid mask;
};

/// A shuffled epoch of labelled points, cut into optimizer steps.
struct EpochBatch {
  std::vector<NormalizedPoint> points;
  std::vector<float> appearance;
  std::vector<float> labels;
  std::vector<std::pair<std::size_t, std::size_t>> steps;  // [begin, end)
};

/// Jittered train_grid^3 meshgrid labelled from the full-resolution mask
/// (nearest voxel) with trilinearly sampled appearance.
inline EpochBatch sample_epoch_batch(const TrainingCase& c, const TrainConfig& cfg, Rng& rng) {
  require_same_shape(c.appearance, c.mask, "sample_epoch_batch");
  require_mask(c.mask, "sample_epoch_batch");
  const auto base = meshgrid(cfg.train_grid);
  EpochBatch b;
  b.points = jitter(base, cfg.jitter_sigma, rng);
  std::shuffle(b.points.begin(), b.points.end(), rng);
  b.labels.resize(b.points.size());
  b.appearance.resize(b.points.size());
  for (std::size_t i = 0; i < b.points.size(); ++i) {
    b.labels[i] = nearest_label(c.mask, b.points[i]);
    b.appearance[i] = trilinear_sample(c.appearance, b.points[i]);
  }
  for (std::size_t s = 0; s < b.points.size(); s += static_cast<std::size_t>(cfg.points_per_step))
    b.steps.emplace_back(s, std::min(b.points.size(), s + static_cast<std::size_t>(cfg.points_per_step)));
  return b;
}

/// Persisted model state: architecture, training settings, the parameters at
/// the selected epoch and one latent per case.
struct Checkpoint {
  ArchConfig arch;
  TrainConfig train;
  ModelParams<float> params;
  LatentTable<float> latents;
  int epoch = 0;
  double loss = 0;

  bool operator==(const Checkpoint& o) const {
    return arch == o.arch && train == o.train && params == o.params && latents == o.latents && epoch == o.epoch &&
           loss == o.loss;
  }
};

struct TrainResult {
  std::optional<Checkpoint> best;
  std::vector<double> epoch_losses;  // epoch-mean training loss, epoch 1 first
  bool aborted = false;
  std::string abort_reason;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

namespace detail {

template <class T>
std::vector<std::span<T>> spans_of(std::vector<TensorRef<T>> refs) {
  std::vector<std::span<T>> out;
  for (auto& r : refs) out.push_back(r.data);
  return out;
}

}  // namespace detail

/// Auto-decoding: one latent per case, optimized jointly with the shared
/// decoder and head. Each step draws one slice of one case's epoch batch,
/// updates the shared parameters and that case's latent only. The returned
/// checkpoint is the epoch with the lowest mean training loss. A non-finite
/// loss stops training; the best checkpoint so far is kept.
inline TrainResult train(std::span<const TrainingCase> dataset, const ArchConfig& arch, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (dataset.empty()) throw InvalidArgument("train needs at least one case");
  arch.validate();
  cfg.validate();
  std::vector<std::string> ids;
  for (const auto& c : dataset) {
    if (c.mask.shape().d < cfg.train_grid || c.mask.shape().h < cfg.train_grid || c.mask.shape().w < cfg.train_grid)
      throw InvalidArgument("train_grid exceeds the volume resolution of case " + c.case_id);
    if (std::find(ids.begin(), ids.end(), c.case_id) != ids.end())
      throw InvalidArgument("duplicate case id " + c.case_id);
    ids.push_back(c.case_id);
  }

  NearState<float> state = init_model<float>(arch, static_cast<std::int64_t>(dataset.size()), cfg.seed, ids);
  Rng rng(splitmix64(cfg.seed ^ 0x5eedULL));
  const Exec exec{cfg.threads};
  const LossConfig loss_cfg = cfg.loss();

  std::vector<std::size_t> sizes;
  for (const auto& t : state.params.tensors(arch)) sizes.push_back(t.data.size());
  AdamState<float> shared(sizes);
  std::vector<AdamState<float>> latent_states(dataset.size(),
                                              AdamState<float>({static_cast<std::size_t>(arch.latent_dim)}));

  TrainResult result;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    std::int64_t steps = 0;
    try {
      for (std::size_t ci : order) {
        const EpochBatch batch = sample_epoch_batch(dataset[ci], cfg, rng);
        for (const auto& [b, e] : batch.steps) {
          Vec<float> z = state.latents.code(static_cast<std::int64_t>(ci));
          const auto ev = evaluate<float>(arch, state.params, z, std::span(batch.points).subspan(b, e - b),
                                          std::span(batch.appearance).subspan(b, e - b),
                                          std::span(batch.labels).subspan(b, e - b), loss_cfg, exec);
          const auto grad = backward(arch, state.params, ev, exec);
          sum += ev.loss;
          ++steps;

          const auto p = detail::spans_of(state.params.tensors(arch));
          std::vector<std::span<const float>> gs;
          for (const auto& t : grad.params.tensors(arch)) gs.push_back(t.data);
          adam_step<float>(shared, p, gs, cfg.lr);

          std::span<float> zrow(state.latents.codes.row(static_cast<Eigen::Index>(ci)).data(),
                                static_cast<std::size_t>(arch.latent_dim));
          const std::span<float> zp[] = {zrow};
          const std::span<const float> zg[] = {std::span<const float>(grad.latent.data(), grad.latent.size())};
          adam_step<float>(latent_states[ci], zp, zg, cfg.lr);
        }
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    const double mean = sum / static_cast<double>(steps);
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
    if (!result.best || mean < result.best->loss) {
      if (!result.best) result.best.emplace();
      result.best->arch = arch;
      result.best->train = cfg;
      result.best->train.threads = 1;
      result.best->params = state.params;
      result.best->latents = state.latents;
      result.best->epoch = epoch;
      result.best->loss = mean;
    }
  }
  if (result.aborted && !result.best) throw NumericError("loss", result.abort_reason);
  return result;
}

}  // namespace near
