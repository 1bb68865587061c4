#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gsde/guidance.hpp"
#include "gsde/optimizer.hpp"
#include "gsde/schedule.hpp"
#include "gsde/score_net.hpp"
#include "json.hpp"

namespace gsde {

// File layout (little-endian):
//   "NFSD" | u32 version | u32 header length | JSON header
//   per array: u32 name length | name | u32 rank | u32 dims[rank] | f32 payload
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'N', 'F', 'S', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
  nlohmann::json header;
  ParamSet<float> arrays;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open checkpoint '" + path + "'");
    in_.seekg(0, std::ios::end);
    remaining_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0, std::ios::beg);
  }

  void read(void* dst, std::uint64_t n) {
    if (n > remaining_ || !in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw IoError("checkpoint '" + path_ + "' is truncated");
    remaining_ -= n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, 4);
    return v;
  }
  std::string str(std::uint64_t n) {
    if (n > remaining_) throw IoError("checkpoint '" + path_ + "' is truncated");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::uint64_t remaining() const { return remaining_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t remaining_ = 0;
};

}  // namespace detail

inline void write_checkpoint_file(const std::string& path, const CheckpointFile& ck) {
  nlohmann::json header = ck.header;
  header["num_arrays"] = ck.arrays.size();
  const std::string blob = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for (const auto& a : ck.arrays) {
    detail::put_u32(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(a.dims.size()));
    for (int d : a.dims) detail::put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 4));
  }
  if (!os.flush()) throw IoError("failed writing checkpoint '" + path + "'");
}

inline CheckpointFile read_checkpoint_file(const std::string& path) {
  detail::CheckpointReader r(path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  CheckpointFile ck;
  try {
    ck.header = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
  const auto n = ck.header.value("num_arrays", std::uint64_t{0});
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint '" + path + "': implausible rank for array '" + name + "'");
    std::vector<int> dims(rank);
    std::uint64_t count = 1;
    for (auto& d : dims) count *= (d = static_cast<int>(r.u32()));
    if (count * 4 > r.remaining()) throw IoError("checkpoint '" + path + "' is truncated");
    const std::size_t idx = ck.arrays.add(name, dims, InitScheme::kZero);
    auto& values = ck.arrays[idx].values;
    r.read(values.data(), values.size() * 4);
  }
  if (r.remaining() != 0) throw IoError("checkpoint '" + path + "' has trailing bytes");
  return ck;
}

inline void append_arrays(ParamSet<float>& dst, const ParamSet<float>& src, const std::string& prefix) {
  for (const auto& a : src) dst[dst.add(prefix + a.name, a.dims, a.init)].values = a.values;
}

// Copies the arrays of `src` named prefix + <name in dst> into `dst`.
inline void fill_from(ParamSet<float>& dst, const ParamSet<float>& src, const std::string& prefix,
                      const std::string& path) {
  for (auto& a : dst) {
    const auto* s = src.find(prefix + a.name);
    if (!s) throw ShapeError("checkpoint '" + path + "' lacks array '" + prefix + a.name + "'");
    if (s->dims != a.dims)
      throw ShapeError("checkpoint '" + path + "': array '" + prefix + a.name + "' has mismatched dimensions");
    a.values = s->values;
  }
}

inline nlohmann::json to_json(const NoiseSchedule& s) {
  return {{"T", s.steps()}, {"beta_min", s.beta_min()}, {"beta_max", s.beta_max()}};
}

inline nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"kind", to_string(c.kind)}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},          {"eps", c.eps}};
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  return c;
}

struct ScoreCheckpoint {
  ScoreNet<float> net;
  std::optional<OptimizerState<float>> optimizer;
  nlohmann::json header;
};

// `extra` is merged into the header (e.g. schedule, training step).
inline void save_checkpoint(const ScoreNet<float>& net, const OptimizerState<float>* opt, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  CheckpointFile ck;
  ck.header = extra;
  ck.header["kind"] = "score_net";
  ck.header["network"] = to_json(net.config.unet());
  append_arrays(ck.arrays, net.params(), "");
  if (opt) {
    ck.header["optimizer"] = to_json(opt->config);
    ck.header["optimizer"]["step"] = opt->step;
    if (opt->config.kind == OptimizerKind::kAdam) {
      append_arrays(ck.arrays, opt->first_moment, "adam.m/");
      append_arrays(ck.arrays, opt->second_moment, "adam.v/");
    }
  }
  write_checkpoint_file(path, ck);
}

// With `expected`, a checkpoint built for a different network configuration is
// rejected with ShapeError.
inline ScoreCheckpoint load_checkpoint(const std::string& path, const ScoreNetConfig* expected = nullptr) {
  CheckpointFile ck = read_checkpoint_file(path);
  if (ck.header.value("kind", std::string{}) != "score_net")
    throw ShapeError("checkpoint '" + path + "' does not hold a score network");
  ScoreNetConfig cfg;
  try {
    cfg = score_config_from_unet(unet_config_from_json(ck.header.at("network")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a malformed network header: " + e.what());
  }
  if (expected && !(cfg == *expected))
    throw ShapeError("checkpoint '" + path + "' was built for a different network configuration");
  ScoreCheckpoint out{build_network<float>(cfg, 0), std::nullopt, ck.header};
  fill_from(out.net.params(), ck.arrays, "", path);
  if (ck.header.contains("optimizer")) {
    const auto& oj = ck.header["optimizer"];
    OptimizerState<float> st = make_optimizer(optimizer_config_from_json(oj), out.net.params());
    st.step = oj.at("step").get<long>();
    if (st.config.kind == OptimizerKind::kAdam) {
      fill_from(st.first_moment, ck.arrays, "adam.m/", path);
      fill_from(st.second_moment, ck.arrays, "adam.v/", path);
    }
    out.optimizer = std::move(st);
  }
  return out;
}

inline void save_heatmap(const HeatmapExtractor<float>& h, const std::string& path) {
  CheckpointFile ck;
  ck.header["kind"] = "heatmap";
  ck.header["extractor"] = to_string(h.kind());
  ck.header["keypoints"] = h.keypoints();
  ck.header["heat_sigma"] = h.heat_sigma();
  ck.header["T"] = h.steps();
  if (h.kind() == HeatmapKind::kTrainedNet) {
    ck.header["network"] = to_json(h.net().config());
    append_arrays(ck.arrays, h.net().params(), "");
  }
  write_checkpoint_file(path, ck);
}

inline HeatmapExtractor<float> load_heatmap(const std::string& path) {
  CheckpointFile ck = read_checkpoint_file(path);
  if (ck.header.value("kind", std::string{}) != "heatmap")
    throw ShapeError("checkpoint '" + path + "' does not hold a heatmap extractor");
  try {
    const auto kind = heatmap_kind_from_string(ck.header.at("extractor").get<std::string>());
    const double sigma = ck.header.at("heat_sigma").get<double>();
    if (kind == HeatmapKind::kLinearBank)
      return HeatmapExtractor<float>::linear_bank(ck.header.at("keypoints").get<int>(), sigma);
    UNet<float> net(unet_config_from_json(ck.header.at("network")), 0, false);
    fill_from(net.params(), ck.arrays, "", path);
    return HeatmapExtractor<float>::trained_net(std::move(net), ck.header.at("T").get<int>(), sigma);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a malformed heatmap header: " + e.what());
  }
}

}  // namespace gsde
