#include "nff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "nff/dataset_io.hpp"

namespace nff {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

namespace {

using nlohmann::json;

json tensor_entry(const std::string& name, const ad::Tensor& t, std::size_t& offset) {
  json e = {{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}};
  offset += t.size() * sizeof(double);
  return e;
}

void append(std::string& blob, const ad::Tensor& t) {
  const auto* p = reinterpret_cast<const char*>(t.data().data());
  blob.append(p, t.size() * sizeof(double));
}

CheckpointMeta meta_of(const json& m) {
  if (!m.is_object() || m.value("format", "") != "nff-checkpoint-1") throw DataMismatchError("not a checkpoint manifest");
  CheckpointMeta meta;
  meta.kind = m.at("kind").get<std::string>();
  meta.config_hash = m.at("config_hash").get<std::string>();
  meta.dataset_hash = m.at("dataset_hash").get<std::string>();
  meta.epoch = m.at("epoch").get<std::size_t>();
  return meta;
}

json read_manifest(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataMismatchError("checkpoint manifest " + path + " is malformed: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, std::span<const NamedParam> params,
                     const TrainState& state) {
  json tensors = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back(tensor_entry(p.name, *p.tensor, offset));
    append(blob, *p.tensor);
  }
  const bool has_moments = !state.adam.m.empty();
  if (has_moments && (state.adam.m.size() != params.size() || state.adam.v.size() != params.size())) {
    throw ShapeError("save_checkpoint: optimizer state does not match the parameters");
  }
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back(tensor_entry("adam.m." + params[i].name, state.adam.m[i], offset));
      append(blob, state.adam.m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back(tensor_entry("adam.v." + params[i].name, state.adam.v[i], offset));
      append(blob, state.adam.v[i]);
    }
  }
  const json manifest = {
      {"format", "nff-checkpoint-1"},
      {"kind", meta.kind},
      {"config_hash", meta.config_hash},
      {"dataset_hash", meta.dataset_hash},
      {"epoch", state.epoch},
      {"adam_step", state.adam.step},
      {"rng_state", state.rng.save()},
      {"history", state.history},
      {"blob", path.substr(path.find_last_of('/') + 1) + ".bin"},
      {"blob_bytes", blob.size()},
      {"tensors", tensors},
  };
  write_text(path, manifest.dump(1) + "\n");
  write_text(path + ".bin", blob);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) { return meta_of(read_manifest(path)); }

CheckpointMeta load_checkpoint(const std::string& path, std::span<const NamedParam> params, TrainState* state) {
  const json m = read_manifest(path);
  const CheckpointMeta meta = meta_of(m);
  const std::string blob = read_text(path + ".bin");
  if (blob.size() != m.at("blob_bytes").get<std::size_t>()) throw DataMismatchError("checkpoint blob size mismatch");

  std::map<std::string, std::pair<std::array<std::size_t, 2>, std::size_t>> index;
  for (const auto& e : m.at("tensors")) {
    index[e.at("name").get<std::string>()] = {e.at("shape").get<std::array<std::size_t, 2>>(),
                                              e.at("offset").get<std::size_t>()};
  }
  const auto fetch = [&](const std::string& name, ad::Tensor& into) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataMismatchError("checkpoint lacks tensor '" + name + "'");
    const auto [shape, off] = it->second;
    if (shape[0] != into.rows() || shape[1] != into.cols()) {
      throw DataMismatchError("checkpoint tensor '" + name + "' has shape " + std::to_string(shape[0]) + "x" +
                              std::to_string(shape[1]) + ", model expects " + shape_string(into));
    }
    if (off + into.size() * sizeof(double) > blob.size()) throw DataMismatchError("checkpoint blob truncated");
    std::memcpy(into.data().data(), blob.data() + off, into.size() * sizeof(double));
  };
  if (index.size() != params.size() && index.size() != 3 * params.size()) {
    throw DataMismatchError("checkpoint holds a different set of tensors than the model");
  }
  for (const auto& p : params) fetch(p.name, *p.tensor);

  if (state != nullptr) {
    state->epoch = m.at("epoch").get<std::size_t>();
    state->history = m.at("history").get<std::vector<double>>();
    state->rng.restore(m.at("rng_state").get<std::string>());
    state->adam = {};
    state->adam.step = m.at("adam_step").get<std::int64_t>();
    if (index.size() == 3 * params.size()) {
      for (const auto& p : params) {
        state->adam.m.emplace_back(p.tensor->rows(), p.tensor->cols());
        fetch("adam.m." + p.name, state->adam.m.back());
      }
      for (const auto& p : params) {
        state->adam.v.emplace_back(p.tensor->rows(), p.tensor->cols());
        fetch("adam.v." + p.name, state->adam.v.back());
      }
    }
  }
  return meta;
}

}  // namespace nff
