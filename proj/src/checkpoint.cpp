#include "fptt/checkpoint.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "binio.hpp"
#include "fptt/errors.hpp"

namespace fptt {

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::unordered_set<std::string> names;
  binio::Writer w;
  w.bytes("FPCK", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (!names.insert(name).second) throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("checkpoint: name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("checkpoint: rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  w.bytes(ckpt.config.data(), ckpt.config.size());
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = binio::Reader::load(path);
  if (r.str(4) != "FPCK") throw FormatError(path.string() + ": not an FPCK checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const auto count = r.u32();
  Checkpoint ckpt;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str(r.u16());
    if (!names.insert(name).second) throw FormatError(path.string() + ": duplicate tensor name '" + name + "'");
    const auto rank = r.u8();
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u32();
      numel *= d;
      if (d == 0 || numel * 4 > r.remaining()) throw FormatError(path.string() + ": bad shape for '" + name + "'");
    }
    std::vector<float> values(numel);
    for (auto& v : values) v = r.f32();
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  ckpt.config = r.str(r.u32());
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
  return ckpt;
}

Checkpoint make_checkpoint(const ParameterSet<float>& params, std::string config) {
  Checkpoint ckpt;
  for (const auto& [name, t] : params.entries()) ckpt.tensors.emplace_back(name, t.clone());
  ckpt.config = std::move(config);
  return ckpt;
}

void restore_parameters(ParameterSet<float>& params, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  if (by_name.size() != params.entries().size())
    throw FormatError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model has " +
                      std::to_string(params.entries().size()));
  for (const auto& [name, dst] : params.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != dst.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(dst.shape()));
    auto out = dst;
    std::copy(it->second->data().begin(), it->second->data().end(), out.data().begin());
  }
}

}  // namespace fptt
