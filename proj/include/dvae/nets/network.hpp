#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/latent.hpp"
#include "dvae/nets/layers.hpp"

namespace dvae::nets {

enum class NetKind { image_encoder, image_decoder, vector_encoder, vector_decoder };
enum class ScalePreset { paper, desk };

inline std::string to_string(NetKind k) {
  switch (k) {
    case NetKind::image_encoder: return "image_encoder";
    case NetKind::image_decoder: return "image_decoder";
    case NetKind::vector_encoder: return "vector_encoder";
    case NetKind::vector_decoder: return "vector_decoder";
  }
  return "?";
}

inline NetKind net_kind_from_string(const std::string& s) {
  for (auto k : {NetKind::image_encoder, NetKind::image_decoder, NetKind::vector_encoder,
                 NetKind::vector_decoder}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown net kind '" + s + "'");
}

inline std::string to_string(ScalePreset p) { return p == ScalePreset::paper ? "paper" : "desk"; }

inline ScalePreset scale_preset_from_string(const std::string& s) {
  if (s == "paper") return ScalePreset::paper;
  if (s == "desk") return ScalePreset::desk;
  throw ConfigError("unknown scale preset '" + s + "' (expected paper or desk)");
}

inline bool is_encoder(NetKind k) {
  return k == NetKind::image_encoder || k == NetKind::vector_encoder;
}
inline bool is_image(NetKind k) {
  return k == NetKind::image_encoder || k == NetKind::image_decoder;
}

// Encoders: input_shape is the observation, output_shape = {latent dim}
// (the net itself emits 2 * dim values: means then log-variances).
// Decoders: input_shape = {latent dim}, output_shape is the observation.
// Image shapes are {height, width, channels}.
struct NetSpec {
  NetKind kind = NetKind::vector_encoder;
  std::vector<int> input_shape;
  std::vector<int> output_shape;
  int width = 128;
  int depth = 3;
  ScalePreset preset = ScalePreset::desk;

  bool operator==(const NetSpec&) const = default;

  std::string describe() const {
    std::ostringstream os;
    auto shape = [&](const std::vector<int>& s) {
      os << '(';
      for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
      os << ')';
    };
    os << to_string(kind) << ' ';
    shape(input_shape);
    os << "->";
    shape(output_shape);
    os << " width=" << width << " depth=" << depth << " preset=" << to_string(preset);
    return os.str();
  }
};

inline int shape_size(const std::vector<int>& s) {
  int n = 1;
  for (int v : s) n *= v;
  return n;
}

inline void validate_image_shape(const std::vector<int>& s) {
  if (s.size() != 3) throw ConfigError("image shape must be (height, width, channels)");
  const int h = s[0];
  if (h != s[1]) throw ConfigError("image height must equal width");
  if (h < 16 || (h & (h - 1)) != 0) throw ConfigError("image size must be a power of two >= 16");
  if (s[2] <= 0) throw ConfigError("image channel count must be positive");
}

template <typename T>
struct ParameterSet {
  static constexpr const char* kVersion = "dvae-params-1";
  std::vector<Tensor<T>> tensors;
  std::string version = kVersion;
  std::uint64_t seed = 0;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.values.size());
    return n;
  }
  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.values.allFinite()) return false;
    }
    return true;
  }
  bool operator==(const ParameterSet& o) const {
    if (tensors.size() != o.tensors.size() || seed != o.seed || version != o.version) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].name != o.tensors[i].name || tensors[i].shape != o.tensors[i].shape ||
          tensors[i].values != o.tensors[i].values) {
        return false;
      }
    }
    return true;
  }
};

template <typename T>
Gradients<T> zero_gradients(const ParameterSet<T>& p) {
  Gradients<T> g;
  g.reserve(p.tensors.size());
  for (const auto& t : p.tensors) g.push_back(Vec<T>::Zero(t.values.size()));
  return g;
}

template <typename T>
class Network;

// Holds what a forward pass saved so a scalar loss of the output can be
// differentiated. Single-threaded; one context per forward pass.
template <typename T>
class GradientContext {
 public:
  const Mat<T>& output() const { return output_; }

  // Accumulates parameter gradients into *grads (skipped when null, which is
  // how frozen networks are run) and returns d loss / d input.
  Mat<T> backward(const Mat<T>& d_output, Gradients<T>* grads, bool need_input_grad = true) const;

 private:
  friend class Network<T>;
  const Network<T>* net_ = nullptr;
  std::vector<LayerCache<T>> caches_;
  Mat<T> output_;
};

template <typename T>
class Network {
 public:
  Network() = default;
  Network(NetSpec spec, std::vector<Layer> layers, ParameterSet<T> params, int input_dim,
          int output_dim)
      : spec_(std::move(spec)),
        layers_(std::move(layers)),
        params_(std::move(params)),
        input_dim_(input_dim),
        output_dim_(output_dim) {}

  const NetSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  std::size_t parameter_count() const { return params_.count(); }

  Mat<T> forward(const Mat<T>& x) const {
    check_input(x);
    Mat<T> h = x;
    for (const auto& layer : layers_) h = layer_forward<T>(layer, params_.tensors, h, nullptr);
    return h;
  }

  GradientContext<T> forward_with_gradients(const Mat<T>& x) const {
    check_input(x);
    GradientContext<T> ctx;
    ctx.net_ = this;
    ctx.caches_.resize(layers_.size());
    Mat<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layer_forward<T>(layers_[i], params_.tensors, h, &ctx.caches_[i]);
    }
    ctx.output_ = std::move(h);
    return ctx;
  }

  template <typename U>
  Network<U> cast() const {
    ParameterSet<U> p;
    p.version = params_.version;
    p.seed = params_.seed;
    for (const auto& t : params_.tensors) p.tensors.push_back({t.name, t.shape, t.values.template cast<U>()});
    return Network<U>(spec_, layers_, std::move(p), input_dim_, output_dim_);
  }

 private:
  void check_input(const Mat<T>& x) const {
    if (x.rows() != input_dim_) {
      throw DimensionError("network " + spec_.describe() + " expects " + std::to_string(input_dim_) +
                           " input features, got " + std::to_string(x.rows()));
    }
  }

  NetSpec spec_;
  std::vector<Layer> layers_;
  ParameterSet<T> params_;
  int input_dim_ = 0;
  int output_dim_ = 0;
};

template <typename T>
Mat<T> GradientContext<T>::backward(const Mat<T>& d_output, Gradients<T>* grads,
                                    bool need_input_grad) const {
  if (d_output.rows() != output_.rows() || d_output.cols() != output_.cols()) {
    throw DimensionError("output gradient shape does not match forward output");
  }
  if (grads && grads->size() != net_->params().tensors.size()) {
    throw DimensionError("gradient buffer does not match parameter set");
  }
  const auto& layers = net_->layers();
  Mat<T> d = d_output;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const bool need_dx = i > 0 || need_input_grad;
    d = layer_backward<T>(layers[i], net_->params().tensors, caches_[i], d, grads, need_dx);
    if (!need_dx) break;
  }
  return d;
}

template <typename T>
GradientContext<T> forward_with_gradients(const Network<T>& net, const Mat<T>& x) {
  return net.forward_with_gradients(x);
}

// Appends layers and fan-in-scaled uniform initial weights, in build order.
template <typename T>
class NetworkBuilder {
 public:
  NetworkBuilder(int input_dim, std::uint64_t seed) : dim_(input_dim), rng_(seed), seed_(seed) {}

  // Starts tracking an HWC image layout for the convolutional layers.
  NetworkBuilder& image(int h, int w, int c) {
    if (h * w * c != dim_) throw ConfigError("image layout does not match current feature count");
    h_ = h, w_ = w, c_ = c;
    return *this;
  }

  NetworkBuilder& linear(int out, double gain = 1.0) {
    Linear l{dim_, out, -1, -1};
    l.weight = add("weight", {out, dim_}, dim_, gain);
    l.bias = add_zero("bias", {out});
    push(l);
    dim_ = out;
    h_ = w_ = c_ = 0;
    return *this;
  }

  NetworkBuilder& conv(int out_c, int kernel, int stride, int pad, double gain = 1.0) {
    push(make_conv(out_c, kernel, stride, pad, gain, ""));
    return *this;
  }

  NetworkBuilder& conv_transpose(int out_c, int kernel, int stride, int pad, double gain = 1.0) {
    require_image();
    ConvTranspose2d l;
    l.in_c = c_;
    l.geom = ConvGeometry{(h_ - 1) * stride - 2 * pad + kernel, (w_ - 1) * stride - 2 * pad + kernel,
                          out_c, h_, w_, kernel, stride, pad};
    const int fan_in = std::max(1, c_ * kernel * kernel / (stride * stride));
    l.weight = add("weight", {l.geom.patch(), c_}, fan_in, gain);
    l.bias = add_zero("bias", {out_c});
    push(l);
    h_ = l.geom.big_h, w_ = l.geom.big_w, c_ = out_c;
    dim_ = h_ * w_ * c_;
    return *this;
  }

  NetworkBuilder& residual(int out_c, int stride) {
    require_image();
    Residual r;
    const int in_h = h_, in_w = w_, in_c = c_;
    r.a = make_conv(out_c, 3, stride, 1, std::sqrt(2.0), "a.");
    r.b = make_conv(out_c, 3, 1, 1, std::sqrt(2.0), "b.");
    if (stride != 1 || in_c != out_c) {
      const int out_h = h_, out_w = w_;
      h_ = in_h, w_ = in_w, c_ = in_c;
      r.has_projection = true;
      r.projection = make_conv(out_c, 1, stride, 0, 1.0, "proj.");
      h_ = out_h, w_ = out_w, c_ = out_c;
    }
    dim_ = h_ * w_ * c_;
    push(r);
    return *this;
  }

  NetworkBuilder& global_avg_pool() {
    require_image();
    push(GlobalAvgPool{h_, w_, c_});
    dim_ = c_;
    h_ = w_ = c_ = 0;
    return *this;
  }

  NetworkBuilder& relu() {
    push(Relu{});
    return *this;
  }
  NetworkBuilder& tanh() {
    push(Tanh{});
    return *this;
  }

  int current_dim() const { return dim_; }

  Network<T> build(NetSpec spec, int input_dim, int output_dim) {
    if (output_dim != dim_) {
      throw ConfigError("network ends with " + std::to_string(dim_) + " features, expected " +
                        std::to_string(output_dim));
    }
    params_.seed = seed_;
    return Network<T>(std::move(spec), std::move(layers_), std::move(params_), input_dim, output_dim);
  }

 private:
  void require_image() const {
    if (c_ == 0) throw ConfigError("convolutional layer needs an image layout");
  }

  Conv2d make_conv(int out_c, int kernel, int stride, int pad, double gain, const std::string& sub) {
    require_image();
    Conv2d l;
    l.out_c = out_c;
    l.geom = ConvGeometry{h_, w_, c_, conv_out_size(h_, kernel, stride, pad),
                          conv_out_size(w_, kernel, stride, pad), kernel, stride, pad};
    if (l.geom.small_h <= 0 || l.geom.small_w <= 0) throw ConfigError("convolution shrinks image to nothing");
    sub_prefix_ = sub;
    l.weight = add("weight", {out_c, l.geom.patch()}, l.geom.patch(), gain);
    l.bias = add_zero("bias", {out_c});
    sub_prefix_.clear();
    h_ = l.geom.small_h, w_ = l.geom.small_w, c_ = out_c;
    dim_ = h_ * w_ * c_;
    return l;
  }

  std::string name(const std::string& leaf) const {
    return "layer" + std::to_string(layers_.size()) + "." + sub_prefix_ + leaf;
  }

  int add(const std::string& leaf, std::vector<int> shape, int fan_in, double gain) {
    const double bound = gain * std::sqrt(3.0 / std::max(1, fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Vec<T> v(shape_size(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(dist(rng_));
    params_.tensors.push_back({name(leaf), std::move(shape), std::move(v)});
    return static_cast<int>(params_.tensors.size()) - 1;
  }

  int add_zero(const std::string& leaf, std::vector<int> shape) {
    Vec<T> v = Vec<T>::Zero(shape_size(shape));
    params_.tensors.push_back({name(leaf), std::move(shape), std::move(v)});
    return static_cast<int>(params_.tensors.size()) - 1;
  }

  void push(Layer l) { layers_.push_back(std::move(l)); }

  int dim_;
  int h_ = 0, w_ = 0, c_ = 0;
  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::string sub_prefix_;
  std::vector<Layer> layers_;
  ParameterSet<T> params_;
};

namespace detail {

inline void validate_spec(const NetSpec& spec) {
  if (spec.width <= 0) throw ConfigError("net width must be positive");
  if (spec.depth <= 0) throw ConfigError("net depth must be positive");
  switch (spec.kind) {
    case NetKind::image_encoder:
      validate_image_shape(spec.input_shape);
      if (spec.output_shape.size() != 1 || spec.output_shape[0] <= 0) {
        throw ConfigError("encoder output must be a positive latent dim");
      }
      break;
    case NetKind::vector_encoder:
      if (spec.input_shape.size() != 1 || spec.input_shape[0] <= 0) throw ConfigError("bad vector input shape");
      if (spec.output_shape.size() != 1 || spec.output_shape[0] <= 0) {
        throw ConfigError("encoder output must be a positive latent dim");
      }
      break;
    case NetKind::image_decoder:
      validate_image_shape(spec.output_shape);
      if (spec.input_shape.size() != 1 || spec.input_shape[0] <= 0) throw ConfigError("bad latent input shape");
      break;
    case NetKind::vector_decoder:
      if (spec.input_shape.size() != 1 || spec.input_shape[0] <= 0) throw ConfigError("bad latent input shape");
      if (spec.output_shape.size() != 1 || spec.output_shape[0] <= 0) throw ConfigError("bad vector output shape");
      break;
  }
}

inline int log2_int(int v) {
  int r = 0;
  while ((1 << (r + 1)) <= v) ++r;
  return r;
}

template <typename T>
void mlp(NetworkBuilder<T>& b, int hidden, int layers, int out) {
  for (int i = 0; i + 1 < layers; ++i) b.linear(hidden, std::sqrt(2.0)).relu();
  b.linear(out);
}

}  // namespace detail

// Encoder: observation -> 2 * latent values (means, then log-variances).
template <typename T = float>
Network<T> build_encoder(const NetSpec& spec, std::uint64_t seed) {
  detail::validate_spec(spec);
  if (!is_encoder(spec.kind)) throw ConfigError("build_encoder needs an encoder kind, got " + to_string(spec.kind));
  const int in = shape_size(spec.input_shape);
  const int latent = spec.output_shape[0];
  NetworkBuilder<T> b(in, seed);
  if (spec.kind == NetKind::vector_encoder) {
    detail::mlp(b, spec.width, spec.depth, 2 * latent);
  } else {
    const int size = spec.input_shape[0];
    b.image(size, size, spec.input_shape[2]);
    if (spec.preset == ScalePreset::desk) {
      // Strided 4x4 convolutions down to 2x2, channels doubling from width.
      const int blocks = detail::log2_int(size) - 1;
      int ch = spec.width;
      for (int i = 0; i < blocks; ++i, ch *= 2) b.conv(ch, 4, 2, 1, std::sqrt(2.0)).relu();
      b.linear(2 * latent);
    } else {
      // ResNet-18 layout: 7x7/2 stem, four stages of two basic blocks, global pooling.
      b.conv(spec.width, 7, 2, 3, std::sqrt(2.0)).relu();
      int ch = spec.width;
      for (int stage = 0; stage < 4; ++stage) {
        const int stride = stage == 0 ? 1 : 2;
        b.residual(ch, stride).residual(ch, 1);
        if (stage < 3) ch *= 2;
      }
      b.global_avg_pool().linear(2 * latent);
    }
  }
  return b.build(spec, in, 2 * latent);
}

// Decoder: latent -> observation (images in [-1, 1] through tanh).
template <typename T = float>
Network<T> build_decoder(const NetSpec& spec, std::uint64_t seed) {
  detail::validate_spec(spec);
  if (is_encoder(spec.kind)) throw ConfigError("build_decoder needs a decoder kind, got " + to_string(spec.kind));
  const int latent = spec.input_shape[0];
  const int out = shape_size(spec.output_shape);
  NetworkBuilder<T> b(latent, seed);
  if (spec.kind == NetKind::vector_decoder) {
    detail::mlp(b, spec.width, spec.depth, out);
  } else {
    const int size = spec.output_shape[0];
    const int channels = spec.output_shape[2];
    const int upsamples = detail::log2_int(size) - 2;  // from a 4x4 seed
    // desk: width is the channel count of the last hidden map; full scale (DCGAN):
    // width is the base that the 4x4 seed multiplies by 8.
    int ch = spec.preset == ScalePreset::desk ? spec.width << (upsamples - 1) : spec.width * 8;
    b.linear(4 * 4 * ch, std::sqrt(2.0)).relu().image(4, 4, ch);
    for (int i = 0; i + 1 < upsamples; ++i) {
      ch /= 2;
      b.conv_transpose(std::max(ch, 1), 4, 2, 1, std::sqrt(2.0)).relu();
      ch = std::max(ch, 1);
    }
    b.conv_transpose(channels, 4, 2, 1).tanh();
  }
  return b.build(spec, latent, out);
}

template <typename T = float>
Network<T> build_network(const NetSpec& spec, std::uint64_t seed) {
  return is_encoder(spec.kind) ? build_encoder<T>(spec, seed) : build_decoder<T>(spec, seed);
}

// Encoder convenience: split raw 2d outputs into batched means and clamped log-variances.
template <typename T>
std::pair<Mat<T>, Mat<T>> split_gaussian(const Mat<T>& raw) {
  const auto d = raw.rows() / 2;
  Mat<T> lv = raw.bottomRows(d).unaryExpr([](T v) { return clamp_log_var(v); });
  return {raw.topRows(d), std::move(lv)};
}

template <typename T>
GaussianParams<T> encode_one(const Network<T>& encoder, const Vec<T>& x) {
  if (!is_encoder(encoder.spec().kind)) throw ConfigError("not an encoder");
  Mat<T> in = x;
  auto [mean, lv] = split_gaussian<T>(encoder.forward(in));
  return {Vec<T>(mean.col(0)), Vec<T>(lv.col(0))};
}

}  // namespace dvae::nets
