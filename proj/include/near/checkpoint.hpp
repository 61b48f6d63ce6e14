#pragma once

// Checkpoint files: a JSON manifest (tensor table, architecture and training
// config, selected epoch/loss, case ids) and a little-endian f32 blob.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "near/io.hpp"
#include "near/trainer.hpp"

namespace near {

inline constexpr const char* kCheckpointFormat = "near-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& ck, const fs::path& manifest_path) {
  fs::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  std::vector<float> blob;
  json tensors = json::object();
  auto add = [&](const std::string& name, const std::vector<std::int64_t>& shape, std::span<const float> data) {
    tensors[name] = {{"offset", blob.size() * sizeof(float)}, {"shape", shape}};
    blob.insert(blob.end(), data.begin(), data.end());
  };
  for (const auto& t : ck.params.tensors(ck.arch)) add(t.name, t.shape, t.data);
  add("latents", {ck.latents.codes.rows(), ck.latents.codes.cols()},
      std::span<const float>(ck.latents.codes.data(), static_cast<std::size_t>(ck.latents.codes.size())));

  json m;
  m["format"] = kCheckpointFormat;
  m["version"] = kCheckpointVersion;
  m["arch"] = ck.arch;
  m["train"] = ck.train;
  m["selection"] = {{"epoch", ck.epoch}, {"loss", ck.loss}};
  m["case_ids"] = ck.latents.case_ids;
  m["tensors"] = tensors;
  m["data"] = blob_path.filename().string();
  write_bytes(blob_path, blob.data(), blob.size() * sizeof(float));
  write_json(manifest_path, m);
}

inline Checkpoint load_checkpoint(const fs::path& manifest_path) {
  const json m = read_json(manifest_path);
  try {
    if (m.at("format") != kCheckpointFormat) throw IoError("not a checkpoint: " + manifest_path.string());
    if (m.at("version").get<int>() != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    Checkpoint ck;
    ck.arch = m.at("arch").get<ArchConfig>();
    ck.train = m.at("train").get<TrainConfig>();
    ck.epoch = m.at("selection").at("epoch").get<int>();
    ck.loss = m.at("selection").at("loss").get<double>();
    const std::string raw = read_text(manifest_path.parent_path() / m.at("data").get<std::string>());
    const json& tensors = m.at("tensors");

    auto fetch = [&](const std::string& name, const std::vector<std::int64_t>& shape, std::span<float> dst) {
      if (!tensors.contains(name)) throw IoError("checkpoint is missing tensor " + name);
      const auto& t = tensors.at(name);
      if (t.at("shape").get<std::vector<std::int64_t>>() != shape)
        throw IoError("checkpoint tensor " + name + " has an unexpected shape");
      const auto offset = t.at("offset").get<std::size_t>();
      if (offset + dst.size_bytes() > raw.size()) throw IoError("checkpoint blob too short for " + name);
      std::memcpy(dst.data(), raw.data() + offset, dst.size_bytes());
    };
    ck.params = ModelParams<float>::zeros(ck.arch);
    for (auto& t : ck.params.tensors(ck.arch)) fetch(t.name, t.shape, t.data);

    ck.latents.case_ids = m.at("case_ids").get<std::vector<std::string>>();
    const auto n = static_cast<Eigen::Index>(ck.latents.case_ids.size());
    ck.latents.codes.resize(n, ck.arch.latent_dim);
    fetch("latents", {n, ck.arch.latent_dim},
          std::span<float>(ck.latents.codes.data(), static_cast<std::size_t>(ck.latents.codes.size())));
    return ck;
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest " + manifest_path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError("bad checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
}

/// Loss log: "epoch,mean_loss" rows.
inline void save_loss_log(const std::vector<double>& losses, const fs::path& p) {
  std::ostringstream out;
  out << "epoch,mean_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << (i + 1) << ',' << losses[i] << '\n';
  write_text(p, out.str());
}

}  // namespace near
