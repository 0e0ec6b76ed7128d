#ifndef RELXFORGE_CHECKPOINT_HPP_
#define RELXFORGE_CHECKPOINT_HPP_

// Binary layout (all integers little-endian):
//   "RLXF" | u32 version | u64 json_len | json | u32 count |
//   count x (u32 name_len | name | u32 ndim | ndim x u64 dim | f32 data) |
//   u64 crc64 of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relxforge/crc64.hpp"
#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/model.hpp"
#include "relxforge/optim.hpp"
#include "relxforge/tensor.hpp"

namespace relxforge::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::string_view kCheckpointMagic = "RLXF";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta;  // serialized with sorted keys, so byte-stable
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  std::string serialize() const {
    std::string out;
    auto put = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
    auto u32 = [&](std::uint32_t v) { put(&v, 4); };
    auto u64 = [&](std::uint64_t v) { put(&v, 8); };
    out += kCheckpointMagic;
    u32(kCheckpointVersion);
    const std::string json = meta.dump();
    u64(json.size());
    out += json;
    u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      if (t.data.size() != numel(t.shape)) {
        throw Error(ErrorCode::kShapeMismatch, "tensor '" + t.name + "' data/shape mismatch");
      }
      u32(static_cast<std::uint32_t>(t.name.size()));
      out += t.name;
      u32(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) u64(d);
      put(t.data.data(), t.data.size() * sizeof(float));
    }
    u64(crc64(out));
    return out;
  }

  static Checkpoint deserialize(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != kCheckpointMagic) {
      throw Error(ErrorCode::kBadMagic, "not a relxforge checkpoint");
    }
    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
      if (bytes.size() < pos + n) throw Error(ErrorCode::kChecksumFail, "checkpoint is truncated");
    };
    auto get = [&](void* dst, std::size_t n) {
      need(n);
      std::memcpy(dst, bytes.data() + pos, n);
      pos += n;
    };
    auto u32 = [&] { std::uint32_t v; get(&v, 4); return v; };
    auto u64 = [&] { std::uint64_t v; get(&v, 8); return v; };

    const std::uint32_t version = u32();
    if (version != kCheckpointVersion) {
      throw Error(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                                   ", expected " + std::to_string(kCheckpointVersion));
    }
    if (bytes.size() < 16) throw Error(ErrorCode::kChecksumFail, "checkpoint is truncated");
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (crc64(bytes.substr(0, bytes.size() - 8)) != stored) {
      throw Error(ErrorCode::kChecksumFail, "checkpoint checksum mismatch");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    auto need_body = [&](std::size_t n) {
      if (body.size() < pos + n) throw Error(ErrorCode::kMalformedRecord, "checkpoint body overruns");
    };

    Checkpoint ck;
    const std::uint64_t json_len = u64();
    need_body(json_len);
    try {
      ck.meta = nlohmann::json::parse(body.substr(pos, json_len));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord, std::string("checkpoint metadata: ") + e.what());
    }
    pos += json_len;
    const std::uint32_t count = u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      const std::uint32_t name_len = u32();
      need_body(name_len);
      t.name.assign(body.substr(pos, name_len));
      pos += name_len;
      const std::uint32_t ndim = u32();
      for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(u64());
      const std::size_t n = numel(t.shape);
      need_body(n * sizeof(float));
      t.data.resize(n);
      get(t.data.data(), n * sizeof(float));
      ck.tensors.push_back(std::move(t));
    }
    if (pos != body.size()) throw Error(ErrorCode::kMalformedRecord, "trailing bytes in checkpoint");
    return ck;
  }

  void save(const std::string& path) const { io::write_file(path, serialize()); }
  static Checkpoint load(const std::string& path) { return deserialize(io::read_file(path)); }
};

template <class T>
Checkpoint make_checkpoint(EncoderModel<T>& model, const Optimizer<T>* optimizer = nullptr,
                           const nlohmann::json& trainer_state = nullptr) {
  Checkpoint ck;
  ck.meta["format"] = "relxforge";
  ck.meta["model"] = model.config().to_json();
  if (!trainer_state.is_null()) ck.meta["trainer"] = trainer_state;
  auto to_f32 = [](const std::vector<T>& v) { return std::vector<float>(v.begin(), v.end()); };
  const auto named = model.named_parameters();
  for (const auto& [name, p] : named) ck.tensors.push_back({name, p->shape, to_f32(p->data)});
  if (optimizer != nullptr) {
    nlohmann::json o = optimizer->config().to_json();
    o["step"] = optimizer->state().step;
    ck.meta["optimizer"] = o;
    const auto& st = optimizer->state();
    if (!st.m.empty()) {
      for (std::size_t i = 0; i < named.size(); ++i) {
        ck.tensors.push_back({"optim.m." + named[i].first, named[i].second->shape, to_f32(st.m[i])});
        ck.tensors.push_back({"optim.v." + named[i].first, named[i].second->shape, to_f32(st.v[i])});
      }
    }
  }
  return ck;
}

inline ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  if (!ck.meta.contains("model")) throw Error(ErrorCode::kMalformedRecord, "checkpoint has no model config");
  return ModelConfig::from_json(ck.meta.at("model"));
}

template <class T>
void load_weights(EncoderModel<T>& model, const Checkpoint& ck) {
  model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
    const NamedTensor* t = ck.find(name);
    if (t == nullptr) throw Error(ErrorCode::kMalformedRecord, "checkpoint lacks tensor '" + name + "'");
    if (t->shape != p.shape) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + name + "' has shape " + shape_str(t->shape) +
                                                 ", model expects " + shape_str(p.shape));
    }
    p.data.assign(t->data.begin(), t->data.end());
  });
}

template <class T>
EncoderModel<T> model_from_checkpoint(const Checkpoint& ck) {
  EncoderModel<T> model(checkpoint_model_config(ck), 0);
  load_weights(model, ck);
  return model;
}

/// Restores moments and the step counter saved by make_checkpoint.
template <class T>
void restore_optimizer(Optimizer<T>& optimizer, EncoderModel<T>& model, const Checkpoint& ck) {
  if (!ck.meta.contains("optimizer")) throw Error(ErrorCode::kMalformedRecord, "checkpoint has no optimizer state");
  nlohmann::json o = ck.meta.at("optimizer");
  auto& st = optimizer.state();
  st.step = o.at("step").get<std::uint64_t>();
  st.m.clear();
  st.v.clear();
  for (const auto& [name, p] : model.named_parameters()) {
    const NamedTensor* m = ck.find("optim.m." + name);
    const NamedTensor* v = ck.find("optim.v." + name);
    if (m == nullptr || v == nullptr) {
      if (st.step == 0 || optimizer.config().kind == OptimizerKind::kSgd) continue;
      throw Error(ErrorCode::kMalformedRecord, "checkpoint lacks optimizer moments for '" + name + "'");
    }
    st.m.emplace_back(m->data.begin(), m->data.end());
    st.v.emplace_back(v->data.begin(), v->data.end());
  }
}

}  // namespace relxforge::nn

#endif  // RELXFORGE_CHECKPOINT_HPP_
