#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gsde/layers.hpp"
#include "gsde/params.hpp"
#include "gsde/random.hpp"
#include "gsde/tensor.hpp"
#include "json.hpp"

namespace gsde {

struct UNetConfig {
  int image_size = 32;
  int in_channels = 2;
  int out_channels = 1;
  int base_channels = 16;
  int depth = 2;
  int time_embed_dim = 32;

  void validate() const {
    if (image_size <= 0 || in_channels <= 0 || out_channels <= 0 || base_channels <= 0 || depth <= 0 ||
        time_embed_dim <= 0)
      throw ConfigError("network: all dimensions must be positive");
    if (time_embed_dim % 2 != 0) throw ConfigError("network: time_embed_dim must be even");
    if (image_size % (1 << depth) != 0)
      throw ConfigError("network: image_size " + std::to_string(image_size) + " not divisible by 2^depth");
  }
  int channels_at(int level) const { return base_channels << level; }
  bool operator==(const UNetConfig&) const = default;
};

inline nlohmann::json to_json(const UNetConfig& c) {
  return {{"image_size", c.image_size},         {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"base_channels", c.base_channels},   {"depth", c.depth},             {"time_embed_dim", c.time_embed_dim}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  return c;
}

template <typename S>
struct UNetCache {
  std::vector<S> embedding;
  std::vector<std::vector<S>> stage_bias;
  std::vector<layers::ConvCache<S>> conv;
  std::vector<Tensor<S>> pre;     // pre-activation of every biased stage
  std::vector<Tensor<S>> skips;   // encoder outputs e_0..e_D
};

// Small time-conditioned encoder/decoder:
//   e_0 = silu(conv(x) + b_0),  e_l = silu(conv_s2(e_{l-1}) + b_l)      l = 1..D
//   m   = silu(conv(e_D) + b_mid)
//   u_l = silu(conv([up(u_{l+1}), e_l]) + b'_l)                          l = D-1..0, u_D = m
//   y   = conv(u_0)
// where every b is an affine function of the sinusoidal time embedding.
template <typename S>
class UNet {
 public:
  UNet() = default;

  UNet(const UNetConfig& cfg, std::uint64_t seed, bool zero_output = true) : cfg_(cfg) {
    cfg_.validate();
    build_layout(zero_output);
    initialize(seed);
  }

  const UNetConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  // Replaces all parameters; the layout must match this configuration.
  void set_params(ParamSet<S> p) {
    params_.require_layout(p, "UNet::set_params");
    params_ = std::move(p);
  }

  template <typename T>
  UNet<T> cast() const {
    UNet<T> out;
    out.cfg_ = cfg_;
    out.params_ = params_.template cast<T>();
    out.enc_ = enc_;
    out.mid_ = mid_;
    out.dec_ = dec_;
    out.out_ = out_;
    out.enc_tb_ = enc_tb_;
    out.mid_tb_ = mid_tb_;
    out.dec_tb_ = dec_tb_;
    return out;
  }

  Tensor<S> forward(const Tensor<S>& x, int t, int T, UNetCache<S>* cache = nullptr) const {
    if (x.channels() != cfg_.in_channels || x.height() != cfg_.image_size || x.width() != cfg_.image_size)
      throw ShapeError("unet: input " + x.shape().str() + " does not match config (" +
                       std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.image_size) + "," +
                       std::to_string(cfg_.image_size) + ")");
    UNetCache<S> local;
    UNetCache<S>& c = cache ? *cache : local;
    const int D = cfg_.depth;
    c.embedding = layers::time_embedding<S>(t, T, cfg_.time_embed_dim);
    c.conv.assign(conv_count(), {});
    c.pre.clear();
    c.stage_bias.clear();
    c.skips.clear();

    std::size_t ci = 0;
    auto stage = [&](const layers::Conv3x3& conv, const layers::TimeBias& tb, const Tensor<S>& in) {
      Tensor<S> z = layers::conv_forward(params_, conv, in, c.conv[ci++]);
      auto b = layers::time_bias_forward(params_, tb, c.embedding);
      layers::add_channel_bias(z, b);
      Tensor<S> a = layers::silu(z);
      c.stage_bias.push_back(std::move(b));
      c.pre.push_back(std::move(z));
      return a;
    };

    Tensor<S> h = stage(enc_[0], enc_tb_[0], x);
    c.skips.push_back(h);
    for (int l = 1; l <= D; ++l) {
      h = stage(enc_[l], enc_tb_[l], h);
      c.skips.push_back(h);
    }
    h = stage(mid_, mid_tb_, h);
    for (int l = D - 1; l >= 0; --l) {
      Tensor<S> cat = concat_channels(layers::upsample2x(h), c.skips[l]);
      h = stage(dec_[l], dec_tb_[l], cat);
    }
    return layers::conv_forward(params_, out_, h, c.conv[ci]);
  }

  // Backpropagates dL/dy through a cached forward pass. Parameter gradients are
  // accumulated into `grads` (which must share this network's layout); the
  // return value is dL/dx when `want_input_grad`, else empty.
  Tensor<S> backward(const UNetCache<S>& c, const Tensor<S>& dy, ParamSet<S>& grads, bool want_input_grad) const {
    const int D = cfg_.depth;
    // Stage indices in forward order: enc 0..D, mid D+1, dec (D-1..0) at D+2...
    const std::size_t mid_stage = static_cast<std::size_t>(D) + 1;
    auto dec_stage = [&](int l) { return mid_stage + 1 + static_cast<std::size_t>(D - 1 - l); };
    const std::size_t out_conv = conv_count() - 1;

    auto stage_back = [&](std::size_t s, const layers::Conv3x3& conv, const layers::TimeBias& tb,
                          const Tensor<S>& dact, bool need_dx) {
      Tensor<S> dz = layers::silu_backward(c.pre[s], dact);
      layers::time_bias_backward(tb, c.embedding, layers::channel_sums(dz), grads);
      return layers::conv_backward(params_, conv, c.conv[s], dz, grads, need_dx);
    };

    Tensor<S> du = layers::conv_backward(params_, out_, c.conv[out_conv], dy, grads, true);
    std::vector<Tensor<S>> dskip(D + 1);
    for (int l = 0; l <= D; ++l) dskip[l] = Tensor<S>(c.skips[l].shape());
    for (int l = 0; l < D; ++l) {
      Tensor<S> dcat = stage_back(dec_stage(l), dec_[l], dec_tb_[l], du, true);
      auto [dup, de] = layers::split_channels(dcat, cfg_.channels_at(l + 1));
      dskip[l] += de;
      du = layers::upsample2x_backward(dup);
    }
    dskip[D] += stage_back(mid_stage, mid_, mid_tb_, du, true);
    for (int l = D; l >= 1; --l) dskip[l - 1] += stage_back(static_cast<std::size_t>(l), enc_[l], enc_tb_[l], dskip[l], true);
    return stage_back(0, enc_[0], enc_tb_[0], dskip[0], want_input_grad);
  }

 private:
  template <typename>
  friend class UNet;

  std::size_t conv_count() const { return static_cast<std::size_t>(2 * cfg_.depth + 3); }

  void build_layout(bool zero_output) {
    const int D = cfg_.depth, E = cfg_.time_embed_dim;
    const auto fan = InitScheme::kFanInNormal;
    enc_.push_back(layers::add_conv(params_, "enc0", cfg_.in_channels, cfg_.channels_at(0), 1, fan));
    enc_tb_.push_back(layers::add_time_bias(params_, "enc0.time", cfg_.channels_at(0), E));
    for (int l = 1; l <= D; ++l) {
      const std::string n = "enc" + std::to_string(l);
      enc_.push_back(layers::add_conv(params_, n, cfg_.channels_at(l - 1), cfg_.channels_at(l), 2, fan));
      enc_tb_.push_back(layers::add_time_bias(params_, n + ".time", cfg_.channels_at(l), E));
    }
    mid_ = layers::add_conv(params_, "mid", cfg_.channels_at(D), cfg_.channels_at(D), 1, fan);
    mid_tb_ = layers::add_time_bias(params_, "mid.time", cfg_.channels_at(D), E);
    dec_.resize(D);
    dec_tb_.resize(D);
    for (int l = D - 1; l >= 0; --l) {
      const std::string n = "dec" + std::to_string(l);
      dec_[l] = layers::add_conv(params_, n, cfg_.channels_at(l + 1) + cfg_.channels_at(l), cfg_.channels_at(l), 1, fan);
      dec_tb_[l] = layers::add_time_bias(params_, n + ".time", cfg_.channels_at(l), E);
    }
    out_ = layers::add_conv(params_, "out", cfg_.channels_at(0), cfg_.out_channels, 1,
                            zero_output ? InitScheme::kZero : fan);
  }

  void initialize(std::uint64_t seed) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& a = params_[i];
      if (a.init == InitScheme::kZero) continue;
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < a.dims.size(); ++d) fan_in *= static_cast<std::size_t>(a.dims[d]);
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      Rng rng(seed, {i});
      for (auto& v : a.values) v = static_cast<S>(std_dev * rng.normal());
    }
  }

  UNetConfig cfg_;
  ParamSet<S> params_;
  std::vector<layers::Conv3x3> enc_;
  layers::Conv3x3 mid_;
  std::vector<layers::Conv3x3> dec_;
  layers::Conv3x3 out_;
  std::vector<layers::TimeBias> enc_tb_;
  layers::TimeBias mid_tb_;
  std::vector<layers::TimeBias> dec_tb_;
};

}  // namespace gsde
