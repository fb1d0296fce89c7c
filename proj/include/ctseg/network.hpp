#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctseg/conv.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

enum class Upsampling { transposed, trilinear };
enum class ConvStyle { regular, separable };

struct NetworkConfig {
  int64_t in_channels = 1;
  int64_t num_classes = 14;
  int64_t base_features = 32;
  int num_stages = 4;
  Upsampling decoder_upsampling = Upsampling::transposed;
  ConvStyle conv_style = ConvStyle::regular;
  int64_t se_reduction = 8;

  int64_t width(int level) const { return base_features << level; }

  void validate() const {
    require(in_channels >= 1, "network: in_channels must be >= 1");
    require(num_classes >= 2, "network: num_classes must be >= 2");
    require(base_features >= 1, "network: base_features must be >= 1");
    require(num_stages >= 1, "network: num_stages must be >= 1");
    require(se_reduction >= 1, "network: se_reduction must be >= 1");
    require(base_features % se_reduction == 0,
            "network: base_features (" + std::to_string(base_features) +
                ") must be divisible by se_reduction (" + std::to_string(se_reduction) + ")");
  }
};

enum class ParamInit { xavier_normal, ones, zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::xavier_normal;
  int64_t fan_in = 0;
  int64_t fan_out = 0;
};

namespace detail {

class ParamEnumerator {
 public:
  explicit ParamEnumerator(const NetworkConfig& cfg) : cfg_(cfg) {}

  std::vector<ParamSpec> run() {
    specs_.clear();
    const int S = cfg_.num_stages;
    residual_block("enc0", cfg_.in_channels, cfg_.width(0), /*projection=*/cfg_.in_channels != cfg_.width(0),
                   /*initial=*/true);
    for (int i = 1; i <= S; ++i)
      residual_block("enc" + std::to_string(i), cfg_.width(i - 1), cfg_.width(i), true, false);
    for (int i = S - 1; i >= 0; --i) {
      const std::string dec = "dec" + std::to_string(i);
      if (cfg_.decoder_upsampling == Upsampling::transposed) {
        transposed_conv(dec + ".up", cfg_.width(i + 1), cfg_.width(i), 2);
      } else {
        conv(dec + ".up", cfg_.width(i + 1), cfg_.width(i), 3, ConvStyle::regular, false);
      }
      se_block(dec + ".se", cfg_.width(i));
      plain_block(dec + ".block", 2 * cfg_.width(i), cfg_.width(i));
    }
    conv("head", cfg_.width(0), cfg_.num_classes, 1, ConvStyle::regular, false);
    bias("head.b", cfg_.num_classes);
    return std::move(specs_);
  }

 private:
  void push(std::string name, Shape shape, ParamInit init, int64_t fan_in = 0,
            int64_t fan_out = 0) {
    specs_.push_back({std::move(name), std::move(shape), init, fan_in, fan_out});
  }

  void conv(const std::string& prefix, int64_t in, int64_t out, int64_t k, ConvStyle style,
            bool initial) {
    if (style == ConvStyle::separable && k > 1 && !initial) {
      push(prefix + ".dw.w", Shape{in, 1, k, k, k}, ParamInit::xavier_normal, k * k * k,
           k * k * k);
      push(prefix + ".pw.w", Shape{out, in, 1, 1, 1}, ParamInit::xavier_normal, in, out);
    } else {
      push(prefix + ".w", Shape{out, in, k, k, k}, ParamInit::xavier_normal, in * k * k * k,
           out * k * k * k);
    }
  }

  void transposed_conv(const std::string& prefix, int64_t in, int64_t out, int64_t k) {
    push(prefix + ".w", Shape{in, out, k, k, k}, ParamInit::xavier_normal, in * k * k * k,
         out * k * k * k);
  }

  void norm(const std::string& prefix, int64_t channels) {
    push(prefix + ".g", Shape{channels}, ParamInit::ones);
    push(prefix + ".b", Shape{channels}, ParamInit::zeros);
  }

  void bias(const std::string& name, int64_t channels) {
    push(name, Shape{channels}, ParamInit::zeros);
  }

  void residual_block(const std::string& prefix, int64_t in, int64_t out, bool projection,
                      bool initial) {
    conv(prefix + ".conv1", in, out, 3, cfg_.conv_style, initial);
    norm(prefix + ".norm1", out);
    conv(prefix + ".conv2", out, out, 3, cfg_.conv_style, false);
    norm(prefix + ".norm2", out);
    if (projection)
      push(prefix + ".proj.w", Shape{out, in, 1, 1, 1}, ParamInit::xavier_normal, in, out);
  }

  void plain_block(const std::string& prefix, int64_t in, int64_t out) {
    conv(prefix + ".conv1", in, out, 3, cfg_.conv_style, false);
    norm(prefix + ".norm1", out);
    conv(prefix + ".conv2", out, out, 3, cfg_.conv_style, false);
    norm(prefix + ".norm2", out);
  }

  void se_block(const std::string& prefix, int64_t channels) {
    const int64_t mid = channels / cfg_.se_reduction;
    require(mid >= 1, "network: SE bottleneck width < 1 for " + std::to_string(channels) +
                          " channels with r = " + std::to_string(cfg_.se_reduction));
    push(prefix + ".fc1.w", Shape{mid, channels, 1, 1, 1}, ParamInit::xavier_normal, channels,
         mid);
    push(prefix + ".fc1.b", Shape{mid}, ParamInit::zeros);
    push(prefix + ".fc2.w", Shape{channels, mid, 1, 1, 1}, ParamInit::xavier_normal, mid,
         channels);
    push(prefix + ".fc2.b", Shape{channels}, ParamInit::zeros);
  }

  const NetworkConfig& cfg_;
  std::vector<ParamSpec> specs_;
};

}  // namespace detail

inline std::vector<ParamSpec> enumerate_parameters(const NetworkConfig& cfg) {
  cfg.validate();
  return detail::ParamEnumerator(cfg).run();
}

// Exact learnable-scalar count for a config.
inline int64_t count_parameters(const NetworkConfig& cfg) {
  int64_t total = 0;
  for (const auto& spec : enumerate_parameters(cfg)) total += numel(spec.shape);
  return total;
}

// Named, ordered learnable tensors of one model.
template <typename T>
struct ModelParams {
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    require(it != tensors.end(), "model parameter not found: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    require(it != tensors.end(), "model parameter not found: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& name : order) n += tensors.at(name).size();
    return n;
  }

  void make_leaves() {
    for (const auto& name : order) tensors.at(name).set_leaf();
  }

  void zero_grads() {
    for (const auto& name : order) tensors.at(name).zero_grad();
  }

  // Deep copy without graph membership (for inference / checkpoint loads).
  ModelParams detached_clone() const {
    ModelParams out;
    out.order = order;
    for (const auto& name : order) out.tensors.emplace(name, tensors.at(name).clone());
    return out;
  }
};

// Instantiates all parameters for a config: conv weights ~ Normal(0,
// 2/(fan_in+fan_out)), norm gains 1, everything else 0. Deterministic for a
// fixed seed.
template <typename T>
ModelParams<T> build_model(const NetworkConfig& cfg, uint64_t init_seed) {
  ModelParams<T> params;
  Rng rng(mix_seed(init_seed, hash_tag("model-init")));
  for (const auto& spec : enumerate_parameters(cfg)) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case ParamInit::xavier_normal: {
        const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in + spec.fan_out));
        for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
        break;
      }
      case ParamInit::ones:
        for (auto& v : t.values()) v = T(1);
        break;
      case ParamInit::zeros:
        break;
    }
    params.order.push_back(spec.name);
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

namespace detail {

template <typename T>
Tensor<T> conv_unit(const ModelParams<T>& params, const std::string& prefix, const Tensor<T>& x,
                    const Triple& stride) {
  if (params.has(prefix + ".dw.w")) {
    return depthwise_separable_conv3d(x, params.at(prefix + ".dw.w"), params.at(prefix + ".pw.w"),
                                      Tensor<T>(), stride, triple(1));
  }
  const Tensor<T>& w = params.at(prefix + ".w");
  const int64_t k = w.extent(2);
  return conv3d(x, w, Tensor<T>(), stride, triple(k / 2));
}

template <typename T>
Tensor<T> norm_act(const ModelParams<T>& params, const std::string& prefix, const Tensor<T>& x,
                   T slope) {
  return leaky_relu(instance_norm(x, params.at(prefix + ".g"), params.at(prefix + ".b")), slope);
}

}  // namespace detail

// Two conv/norm/activation stages with the residual summation before the
// last activation; identity shortcut when stride is 1 and channels match,
// strided 1x1x1 projection otherwise.
template <typename T>
Tensor<T> residual_conv_block(const ModelParams<T>& params, const std::string& prefix,
                              const Tensor<T>& x, const Triple& stride, T slope = T(0.01)) {
  Tensor<T> h = detail::norm_act(params, prefix + ".norm1",
                                 detail::conv_unit(params, prefix + ".conv1", x, stride), slope);
  h = instance_norm(detail::conv_unit(params, prefix + ".conv2", h, triple(1)),
                    params.at(prefix + ".norm2.g"), params.at(prefix + ".norm2.b"));
  Tensor<T> shortcut = params.has(prefix + ".proj.w")
                           ? conv3d(x, params.at(prefix + ".proj.w"), Tensor<T>(), stride)
                           : x;
  return leaky_relu(add(h, shortcut), slope);
}

template <typename T>
Tensor<T> plain_conv_block(const ModelParams<T>& params, const std::string& prefix,
                           const Tensor<T>& x, T slope = T(0.01)) {
  Tensor<T> h = detail::norm_act(
      params, prefix + ".norm1", detail::conv_unit(params, prefix + ".conv1", x, triple(1)), slope);
  return detail::norm_act(params, prefix + ".norm2",
                          detail::conv_unit(params, prefix + ".conv2", h, triple(1)), slope);
}

// y = x + x * excite(x) with a bottlenecked, sigmoid-gated excitation.
template <typename T>
Tensor<T> residual_se_block(const ModelParams<T>& params, const std::string& prefix,
                            const Tensor<T>& x, T slope = T(0.01)) {
  Tensor<T> pooled = global_avg_pool(x);
  Tensor<T> z =
      leaky_relu(conv3d(pooled, params.at(prefix + ".fc1.w"), params.at(prefix + ".fc1.b")), slope);
  Tensor<T> gate = sigmoid(conv3d(z, params.at(prefix + ".fc2.w"), params.at(prefix + ".fc2.b")));
  return add(x, mul_channel(x, gate));
}

// Full U-Net forward: logits at input resolution.
template <typename T>
Tensor<T> forward_segmentation(const ModelParams<T>& params, const NetworkConfig& cfg,
                               const Tensor<T>& x, T leaky_slope = T(0.01)) {
  detail::check_rank5(x, "forward_segmentation");
  cfg.validate();
  require(x.extent(1) == cfg.in_channels,
          "forward_segmentation: input has " + std::to_string(x.extent(1)) +
              " channels, config expects " + std::to_string(cfg.in_channels));
  const int64_t div = int64_t{1} << cfg.num_stages;
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t e = x.extent(static_cast<size_t>(axis + 2));
    require(e % div == 0, "forward_segmentation: spatial extent " + std::to_string(e) +
                              " on axis " + std::to_string(axis) + " must be divisible by " +
                              std::to_string(div));
  }

  const int S = cfg.num_stages;
  std::vector<Tensor<T>> skips;
  skips.reserve(static_cast<size_t>(S));
  Tensor<T> h = residual_conv_block(params, "enc0", x, triple(1), leaky_slope);
  skips.push_back(h);
  for (int i = 1; i <= S; ++i) {
    h = residual_conv_block(params, "enc" + std::to_string(i), h, triple(2), leaky_slope);
    if (i < S) skips.push_back(h);
  }
  for (int i = S - 1; i >= 0; --i) {
    const std::string dec = "dec" + std::to_string(i);
    Tensor<T> up;
    if (cfg.decoder_upsampling == Upsampling::transposed) {
      up = conv3d_transposed(h, params.at(dec + ".up.w"), Tensor<T>(), triple(2));
    } else {
      Tensor<T> resized = trilinear_resize(
          h, {h.extent(2) * 2, h.extent(3) * 2, h.extent(4) * 2});
      up = conv3d(resized, params.at(dec + ".up.w"), Tensor<T>(), triple(1), triple(1));
    }
    Tensor<T> skip =
        residual_se_block(params, dec + ".se", skips[static_cast<size_t>(i)], leaky_slope);
    h = plain_conv_block(params, dec + ".block", concat_channels(up, skip), leaky_slope);
  }
  return conv3d(h, params.at("head.w"), params.at("head.b"));
}

}  // namespace ctseg
