#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "gridread/ean.hpp"
#include "gridread/errors.hpp"
#include "gridread/ops.hpp"
#include "gridread/tensor.hpp"

namespace gridread {

struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// ---------------------------------------------------------------------------
// Layer specs
// ---------------------------------------------------------------------------

struct LayerSpec {
  std::string kind;  // conv2d, batchnorm2d, relu, relu6, maxpool, adaptive_maxpool,
                     // residual_block, inverted_residual_block, dilated_bottleneck_block,
                     // conv1x1_head, head_activation
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int mid_ch = 0;      // bottleneck mid channels
  int expansion = 0;   // inverted-residual expansion factor
  int target = 0;      // adaptive pool target (square)
};

inline void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = {{"kind", s.kind},       {"in_ch", s.in_ch},       {"out_ch", s.out_ch},
       {"kernel", s.kernel},   {"stride", s.stride},     {"padding", s.padding},
       {"dilation", s.dilation}, {"mid_ch", s.mid_ch},   {"expansion", s.expansion},
       {"target", s.target}};
}

inline void from_json(const nlohmann::json& j, LayerSpec& s) {
  j.at("kind").get_to(s.kind);
  j.at("in_ch").get_to(s.in_ch);
  j.at("out_ch").get_to(s.out_ch);
  j.at("kernel").get_to(s.kernel);
  j.at("stride").get_to(s.stride);
  j.at("padding").get_to(s.padding);
  j.at("dilation").get_to(s.dilation);
  j.at("mid_ch").get_to(s.mid_ch);
  j.at("expansion").get_to(s.expansion);
  j.at("target").get_to(s.target);
}

// ---------------------------------------------------------------------------
// Model config
// ---------------------------------------------------------------------------

struct ModelConfig {
  int input_size = 448;  // H = W, must be a multiple of grid
  int grid = 14;         // S
  int boxes = 2;         // B
  SequenceSpec spec = SequenceSpec::ean13();
  std::string backbone = "tiny-res";  // tiny-res | tiny-ir
  int base_channels = 16;
  int neck_blocks = 3;
  int neck_channels = 256;

  int box_channels() const { return boxes * 5; }
  int class_channels() const { return spec.max_length * spec.classes_per_digit(); }
  int head_channels() const {
    return box_channels() + class_channels() + spec.length_classes();
  }

  void validate_config() const {
    if (grid <= 0 || boxes < 1) throw ConfigError("grid and boxes must be positive");
    if (input_size % grid != 0)
      throw ConfigError("input_size must be a multiple of grid (got " +
                        std::to_string(input_size) + " / " + std::to_string(grid) + ")");
    if (spec.max_length < 1 || spec.alphabet_size < 2)
      throw ConfigError("sequence spec must have positive length and alphabet");
    if (spec.has_length_head && spec.fixed_length)
      throw ConfigError("length head requires variable-length spec");
    if (backbone != "tiny-res" && backbone != "tiny-ir")
      throw ConfigError("unknown backbone: " + backbone);
    if (neck_blocks < 0 || neck_channels < 1) throw ConfigError("bad neck configuration");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_size", c.input_size},
       {"grid", c.grid},
       {"boxes", c.boxes},
       {"backbone", c.backbone},
       {"base_channels", c.base_channels},
       {"neck_blocks", c.neck_blocks},
       {"neck_channels", c.neck_channels},
       {"spec",
        {{"id", to_string(c.spec.id)},
         {"alphabet_size", c.spec.alphabet_size},
         {"max_length", c.spec.max_length},
         {"fixed_length", c.spec.fixed_length},
         {"has_na_class", c.spec.has_na_class},
         {"has_length_head", c.spec.has_length_head}}}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("input_size").get_to(c.input_size);
  j.at("grid").get_to(c.grid);
  j.at("boxes").get_to(c.boxes);
  j.at("backbone").get_to(c.backbone);
  j.at("base_channels").get_to(c.base_channels);
  j.at("neck_blocks").get_to(c.neck_blocks);
  j.at("neck_channels").get_to(c.neck_channels);
  const auto& s = j.at("spec");
  c.spec.id = symbology_from_string(s.at("id").get<std::string>());
  s.at("alphabet_size").get_to(c.spec.alphabet_size);
  s.at("max_length").get_to(c.spec.max_length);
  s.at("fixed_length").get_to(c.spec.fixed_length);
  s.at("has_na_class").get_to(c.spec.has_na_class);
  s.at("has_length_head").get_to(c.spec.has_length_head);
}

// Softmax groups of the head: one per digit slot, plus the optional length
// group; channels [0, 5B) are sigmoid box/confidence slots.
inline std::vector<ChannelGroup> head_softmax_groups(const ModelConfig& cfg) {
  std::vector<ChannelGroup> groups;
  int off = cfg.box_channels();
  for (int i = 0; i < cfg.spec.max_length; ++i) {
    groups.push_back({off, cfg.spec.classes_per_digit()});
    off += cfg.spec.classes_per_digit();
  }
  if (cfg.spec.has_length_head) groups.push_back({off, cfg.spec.length_classes()});
  return groups;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;      // has grad buffer
  bool trainable = true;  // running stats are saved but not optimized
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) = 0;
  virtual LayerSpec spec() const = 0;
  // Updates (c,h,w) and accumulates closed-form parameter / MAC counts.
  virtual void count(int& c, int& h, int& w, long long& params, long long& macs) const = 0;
};

template <typename T>
class ConvLayer : public Layer<T> {
 public:
  ConvLayer(int in_ch, int out_ch, int kernel, int stride, int padding, int dilation, int groups,
            Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), cp_{stride, padding, dilation, groups} {
    weight_ = he_uniform<T>({out_ch, in_ch / groups, kernel, kernel}, rng);
    weight_.enable_grad();
    bias_ = Tensor<T>({out_ch});
    bias_.enable_grad();
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (training) {
      input_ = x;
      return conv2d_forward(x, weight_, bias_, cp_, cp_.groups == 1 ? &col_cache_ : nullptr);
    }
    return conv2d_forward(x, weight_, bias_, cp_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx, dw, db;
    conv2d_backward(input_, weight_, cp_, dy, dx, dw, db,
                    col_cache_.empty() ? nullptr : &col_cache_, needs_input_grad_);
    for (size_t i = 0; i < dw.data.size(); ++i) weight_.grad[i] += dw.data[i];
    for (size_t i = 0; i < db.data.size(); ++i) bias_.grad[i] += db.data[i];
    return dx;
  }

  // The first layer of a network has no upstream consumer for dx.
  void set_needs_input_grad(bool v) { needs_input_grad_ = v; }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, true});
    out.push_back({prefix + ".bias", &bias_, true});
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "conv2d";
    s.in_ch = in_ch_;
    s.out_ch = out_ch_;
    s.kernel = weight_.dim(2);
    s.stride = cp_.stride;
    s.padding = cp_.padding;
    s.dilation = cp_.dilation;
    return s;
  }

  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    const int k = weight_.dim(2);
    h = conv_out_size(h, k, cp_.stride, cp_.padding, cp_.dilation);
    w = conv_out_size(w, k, cp_.stride, cp_.padding, cp_.dilation);
    const long long kk = static_cast<long long>(k) * k * (in_ch_ / cp_.groups);
    params += kk * out_ch_ + out_ch_;
    macs += kk * out_ch_ * static_cast<long long>(h) * w;
    c = out_ch_;
  }

 private:
  int in_ch_, out_ch_;
  ConvParams cp_;
  Tensor<T> weight_, bias_;
  Tensor<T> input_;
  std::vector<T> col_cache_;
  bool needs_input_grad_ = true;
};

template <typename T>
class BatchNormLayer : public Layer<T> {
 public:
  explicit BatchNormLayer(int channels) : channels_(channels) {
    gamma_ = Tensor<T>({channels});
    for (auto& v : gamma_.data) v = T(1);
    gamma_.enable_grad();
    beta_ = Tensor<T>({channels});
    beta_.enable_grad();
    running_mean_ = Tensor<T>({channels});
    running_var_ = Tensor<T>({channels});
    for (auto& v : running_var_.data) v = T(1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    training_ = training;
    return batchnorm2d_forward(x, gamma_, beta_, running_mean_, running_var_, training,
                               training ? &cache_ : nullptr);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx, dgamma, dbeta;
    batchnorm2d_backward(cache_, gamma_, dy, training_, dx, dgamma, dbeta);
    for (size_t i = 0; i < dgamma.data.size(); ++i) gamma_.grad[i] += dgamma.data[i];
    for (size_t i = 0; i < dbeta.data.size(); ++i) beta_.grad[i] += dbeta.data[i];
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, true});
    out.push_back({prefix + ".beta", &beta_, true});
    out.push_back({prefix + ".running_mean", &running_mean_, false});
    out.push_back({prefix + ".running_var", &running_var_, false});
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "batchnorm2d";
    s.in_ch = s.out_ch = channels_;
    return s;
  }

  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    (void)h;
    (void)w;
    (void)macs;
    params += 2LL * channels_;
    c = channels_;
  }

 private:
  int channels_;
  bool training_ = false;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  BatchNormCache<T> cache_;
};

template <typename T>
class ReluLayer : public Layer<T> {
 public:
  explicit ReluLayer(T cap = T(0)) : cap_(cap) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (training) input_ = x;
    return relu_forward(x, cap_);
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return relu_backward(input_, dy, cap_); }
  void collect_params(const std::string&, std::vector<NamedParam<T>>&) override {}
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = cap_ > 0 ? "relu6" : "relu";
    return s;
  }
  void count(int&, int&, int&, long long&, long long&) const override {}

 private:
  T cap_;
  Tensor<T> input_;
};

template <typename T>
class MaxPoolLayer : public Layer<T> {
 public:
  MaxPoolLayer(int kernel, int stride) : kernel_(kernel), stride_(stride) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    in_shape_ = x.shape;
    return maxpool_forward(x, kernel_, stride_, training ? &cache_ : nullptr);
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return pool_backward(cache_, in_shape_, dy); }
  void collect_params(const std::string&, std::vector<NamedParam<T>>&) override {}
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "maxpool";
    s.kernel = kernel_;
    s.stride = stride_;
    return s;
  }
  void count(int&, int& h, int& w, long long&, long long&) const override {
    h = (h - kernel_) / stride_ + 1;
    w = (w - kernel_) / stride_ + 1;
  }

 private:
  int kernel_, stride_;
  std::vector<int> in_shape_;
  PoolCache<T> cache_;
};

template <typename T>
class AdaptiveMaxPoolLayer : public Layer<T> {
 public:
  explicit AdaptiveMaxPoolLayer(int target) : target_(target) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    in_shape_ = x.shape;
    return adaptive_maxpool_forward(x, target_, target_, training ? &cache_ : nullptr);
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return pool_backward(cache_, in_shape_, dy); }
  void collect_params(const std::string&, std::vector<NamedParam<T>>&) override {}
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "adaptive_maxpool";
    s.target = target_;
    return s;
  }
  void count(int&, int& h, int& w, long long&, long long&) const override { h = w = target_; }

 private:
  int target_;
  std::vector<int> in_shape_;
  PoolCache<T> cache_;
};

// Sequential container used inside blocks.
template <typename T>
class Sequential : public Layer<T> {
 public:
  void add(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, training);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }
  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    for (size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
  }
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "sequential";
    return s;
  }
  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    for (const auto& l : layers_) l->count(c, h, w, params, macs);
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Residual conv block: conv-bn-relu-conv-bn plus skip (1x1 projection when
// shape changes), relu after the add.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(int in_ch, int out_ch, int stride, Rng& rng) : in_ch_(in_ch), out_ch_(out_ch) {
    body_.add(std::make_unique<ConvLayer<T>>(in_ch, out_ch, 3, stride, 1, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(out_ch));
    body_.add(std::make_unique<ReluLayer<T>>());
    body_.add(std::make_unique<ConvLayer<T>>(out_ch, out_ch, 3, 1, 1, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(out_ch));
    if (in_ch != out_ch || stride != 1) {
      proj_ = std::make_unique<Sequential<T>>();
      proj_->add(std::make_unique<ConvLayer<T>>(in_ch, out_ch, 1, stride, 0, 1, 1, rng));
      proj_->add(std::make_unique<BatchNormLayer<T>>(out_ch));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> main = body_.forward(x, training);
    Tensor<T> skip = proj_ ? proj_->forward(x, training) : x;
    add_inplace(main, skip);
    if (training) pre_relu_ = main;
    return relu_forward(main);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> g = relu_backward(pre_relu_, dy);
    Tensor<T> dx = body_.backward(g);
    Tensor<T> dskip = proj_ ? proj_->backward(g) : g;
    add_inplace(dx, dskip);
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    body_.collect_params(prefix + ".body", out);
    if (proj_) proj_->collect_params(prefix + ".proj", out);
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "residual_block";
    s.in_ch = in_ch_;
    s.out_ch = out_ch_;
    return s;
  }

  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    int c2 = c, h2 = h, w2 = w;
    body_.count(c2, h2, w2, params, macs);
    if (proj_) {
      int c3 = c, h3 = h, w3 = w;
      proj_->count(c3, h3, w3, params, macs);
    }
    c = c2;
    h = h2;
    w = w2;
  }

 private:
  int in_ch_, out_ch_;
  Sequential<T> body_;
  std::unique_ptr<Sequential<T>> proj_;
  Tensor<T> pre_relu_;
};

// MobileNetV2-style inverted residual: 1x1 expand + relu6, 3x3 depthwise +
// relu6, 1x1 linear projection; identity skip when stride 1 and shapes match.
template <typename T>
class InvertedResidualBlock : public Layer<T> {
 public:
  InvertedResidualBlock(int in_ch, int out_ch, int stride, int expansion, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), expansion_(expansion),
        use_skip_(stride == 1 && in_ch == out_ch) {
    const int mid = in_ch * expansion;
    body_.add(std::make_unique<ConvLayer<T>>(in_ch, mid, 1, 1, 0, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(mid));
    body_.add(std::make_unique<ReluLayer<T>>(T(6)));
    body_.add(std::make_unique<ConvLayer<T>>(mid, mid, 3, stride, 1, 1, mid, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(mid));
    body_.add(std::make_unique<ReluLayer<T>>(T(6)));
    body_.add(std::make_unique<ConvLayer<T>>(mid, out_ch, 1, 1, 0, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(out_ch));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> y = body_.forward(x, training);
    if (use_skip_) add_inplace(y, x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = body_.backward(dy);
    if (use_skip_) add_inplace(dx, dy);
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    body_.collect_params(prefix + ".body", out);
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "inverted_residual_block";
    s.in_ch = in_ch_;
    s.out_ch = out_ch_;
    s.expansion = expansion_;
    return s;
  }

  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    body_.count(c, h, w, params, macs);
  }

 private:
  int in_ch_, out_ch_, expansion_;
  bool use_skip_;
  Sequential<T> body_;
};

// Dilated bottleneck: 1x1 reduce, 3x3 dilated (padding = dilation, stride 1,
// so spatial resolution is preserved), 1x1 expand, residual add, relu.
template <typename T>
class DilatedBottleneckBlock : public Layer<T> {
 public:
  DilatedBottleneckBlock(int in_ch, int out_ch, int mid_ch, int dilation, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), mid_ch_(mid_ch), dilation_(dilation) {
    if (dilation < 1) throw ConfigError("dilation must be >= 1");
    body_.add(std::make_unique<ConvLayer<T>>(in_ch, mid_ch, 1, 1, 0, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(mid_ch));
    body_.add(std::make_unique<ReluLayer<T>>());
    body_.add(std::make_unique<ConvLayer<T>>(mid_ch, mid_ch, 3, 1, dilation, dilation, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(mid_ch));
    body_.add(std::make_unique<ReluLayer<T>>());
    body_.add(std::make_unique<ConvLayer<T>>(mid_ch, out_ch, 1, 1, 0, 1, 1, rng));
    body_.add(std::make_unique<BatchNormLayer<T>>(out_ch));
    if (in_ch != out_ch) {
      proj_ = std::make_unique<Sequential<T>>();
      proj_->add(std::make_unique<ConvLayer<T>>(in_ch, out_ch, 1, 1, 0, 1, 1, rng));
      proj_->add(std::make_unique<BatchNormLayer<T>>(out_ch));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> main = body_.forward(x, training);
    Tensor<T> skip = proj_ ? proj_->forward(x, training) : x;
    add_inplace(main, skip);
    if (training) pre_relu_ = main;
    return relu_forward(main);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> g = relu_backward(pre_relu_, dy);
    Tensor<T> dx = body_.backward(g);
    Tensor<T> dskip = proj_ ? proj_->backward(g) : g;
    add_inplace(dx, dskip);
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) override {
    body_.collect_params(prefix + ".body", out);
    if (proj_) proj_->collect_params(prefix + ".proj", out);
  }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "dilated_bottleneck_block";
    s.in_ch = in_ch_;
    s.out_ch = out_ch_;
    s.mid_ch = mid_ch_;
    s.dilation = dilation_;
    return s;
  }

  void count(int& c, int& h, int& w, long long& params, long long& macs) const override {
    int c2 = c, h2 = h, w2 = w;
    body_.count(c2, h2, w2, params, macs);
    if (proj_) {
      int c3 = c, h3 = h, w3 = w;
      proj_->count(c3, h3, w3, params, macs);
    }
    c = c2;
    h = h2;
    w = w2;
  }

 private:
  int in_ch_, out_ch_, mid_ch_, dilation_;
  Sequential<T> body_;
  std::unique_ptr<Sequential<T>> proj_;
  Tensor<T> pre_relu_;
};

// Final head activation: sigmoid on the B*(x,y,w,h,conf) slots, group softmax
// on digit (and length) slots.
template <typename T>
class HeadActivation : public Layer<T> {
 public:
  HeadActivation(int sigmoid_channels, std::vector<ChannelGroup> groups)
      : sigmoid_channels_(sigmoid_channels), groups_(std::move(groups)) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> y = softmax_group_forward(x, groups_);
    const int h = x.dim(2), w = x.dim(3);
    for (int n = 0; n < x.dim(0); ++n)
      for (int c = 0; c < sigmoid_channels_; ++c)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix)
            y.at4(n, c, iy, ix) = T(1) / (T(1) + std::exp(-x.at4(n, c, iy, ix)));
    if (training) output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = softmax_group_backward(output_, groups_, dy);
    const int h = dy.dim(2), w = dy.dim(3);
    for (int n = 0; n < dy.dim(0); ++n)
      for (int c = 0; c < sigmoid_channels_; ++c)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            const T s = output_.at4(n, c, iy, ix);
            dx.at4(n, c, iy, ix) = dy.at4(n, c, iy, ix) * s * (T(1) - s);
          }
    return dx;
  }

  void collect_params(const std::string&, std::vector<NamedParam<T>>&) override {}
  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = "head_activation";
    return s;
  }
  void count(int&, int&, int&, long long&, long long&) const override {}

 private:
  int sigmoid_channels_;
  std::vector<ChannelGroup> groups_;
  Tensor<T> output_;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
class Network {
 public:
  using value_type = T;

  Network(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate_config();
    Rng rng(mix_seed(init_seed, "init"));
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // Forward to the activated output tensor [N, C, S, S].
  Tensor<T> forward(const Tensor<T>& x, bool training = false) {
    if (x.shape.size() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_size ||
        x.dim(3) != cfg_.input_size)
      throw ShapeError("network input must be [N,3," + std::to_string(cfg_.input_size) + "," +
                       std::to_string(cfg_.input_size) + "], got " + shape_str(x));
    return layers_.forward(x, training);
  }

  Tensor<T> backward(const Tensor<T>& dy) { return layers_.backward(dy); }

  std::vector<NamedParam<T>> params() {
    std::vector<NamedParam<T>> out;
    layers_.collect_params("net", out);
    return out;
  }

  void zero_grad() {
    for (auto& p : params())
      if (p.trainable) p.tensor->zero_grad();
  }

  void count_params_flops(long long& params, long long& macs) const {
    params = 0;
    macs = 0;
    int c = 3, h = cfg_.input_size, w = cfg_.input_size;
    layers_.count(c, h, w, params, macs);
  }

 private:
  void build(Rng& rng) {
    const int c0 = cfg_.base_channels;
    int c = 0;
    if (cfg_.backbone == "tiny-res") {
      auto stem = std::make_unique<ConvLayer<T>>(3, c0, 3, 1, 1, 1, 1, rng);
      stem->set_needs_input_grad(false);
      layers_.add(std::move(stem));
      layers_.add(std::make_unique<BatchNormLayer<T>>(c0));
      layers_.add(std::make_unique<ReluLayer<T>>());
      layers_.add(std::make_unique<ConvLayer<T>>(c0, 2 * c0, 3, 2, 1, 1, 1, rng));
      layers_.add(std::make_unique<BatchNormLayer<T>>(2 * c0));
      layers_.add(std::make_unique<ReluLayer<T>>());
      layers_.add(std::make_unique<ResidualBlock<T>>(2 * c0, 2 * c0, 1, rng));
      layers_.add(std::make_unique<ResidualBlock<T>>(2 * c0, 4 * c0, 2, rng));
      layers_.add(std::make_unique<ResidualBlock<T>>(4 * c0, 4 * c0, 1, rng));
      layers_.add(std::make_unique<ResidualBlock<T>>(4 * c0, 8 * c0, 2, rng));
      c = 8 * c0;
    } else {  // tiny-ir
      auto stem = std::make_unique<ConvLayer<T>>(3, c0, 3, 2, 1, 1, 1, rng);
      stem->set_needs_input_grad(false);
      layers_.add(std::move(stem));
      layers_.add(std::make_unique<BatchNormLayer<T>>(c0));
      layers_.add(std::make_unique<ReluLayer<T>>(T(6)));
      layers_.add(std::make_unique<InvertedResidualBlock<T>>(c0, 2 * c0, 1, 2, rng));
      layers_.add(std::make_unique<InvertedResidualBlock<T>>(2 * c0, 4 * c0, 2, 4, rng));
      layers_.add(std::make_unique<InvertedResidualBlock<T>>(4 * c0, 4 * c0, 1, 4, rng));
      layers_.add(std::make_unique<InvertedResidualBlock<T>>(4 * c0, 8 * c0, 1, 4, rng));
      c = 8 * c0;
    }
    // Neck: dilated bottleneck stack, then batchnorm -> adaptive maxpool ->
    // 1x1 conv head, then activations.
    for (int i = 0; i < cfg_.neck_blocks; ++i) {
      layers_.add(std::make_unique<DilatedBottleneckBlock<T>>(
          c, cfg_.neck_channels, std::max(cfg_.neck_channels / 4, 8), 2, rng));
      c = cfg_.neck_channels;
    }
    layers_.add(std::make_unique<BatchNormLayer<T>>(c));
    layers_.add(std::make_unique<AdaptiveMaxPoolLayer<T>>(cfg_.grid));
    layers_.add(std::make_unique<ConvLayer<T>>(c, cfg_.head_channels(), 1, 1, 0, 1, 1, rng));
    layers_.add(std::make_unique<HeadActivation<T>>(cfg_.box_channels(), head_softmax_groups(cfg_)));
  }

  ModelConfig cfg_;
  Sequential<T> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic + JSON manifest (config + array directory) +
// raw little-endian payloads.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net) {
  auto params = net.params();
  nlohmann::json manifest;
  manifest["config"] = net.config();
  manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& p : params) {
    arrays.push_back({{"name", p.name}, {"shape", p.tensor->shape},
                      {"trainable", p.trainable}});
  }
  manifest["arrays"] = arrays;
  const std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t mlen = mstr.size();
  f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& p : params) {
    f.write(reinterpret_cast<const char*>(p.tensor->data.data()),
            static_cast<std::streamsize>(p.tensor->data.size() * sizeof(T)));
  }
  if (!f) throw IoError("checkpoint write failed: " + path);
}

inline ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  f.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw IoError("truncated checkpoint manifest: " + path);
  return nlohmann::json::parse(mstr).at("config").get<ModelConfig>();
}

template <typename T>
void load_checkpoint(const std::string& path, Network<T>& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  f.read(mstr.data(), static_cast<std::streamsize>(mlen));
  const auto manifest = nlohmann::json::parse(mstr);
  const std::string dtype = manifest.at("dtype").get<std::string>();
  if ((sizeof(T) == 4) != (dtype == "f32"))
    throw IoError("checkpoint dtype mismatch: " + dtype);

  auto params = net.params();
  const auto& arrays = manifest.at("arrays");
  if (arrays.size() != params.size()) throw IoError("checkpoint array count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& a = arrays[static_cast<int>(i)];
    if (a.at("name").get<std::string>() != params[i].name)
      throw IoError("checkpoint array name mismatch: " + a.at("name").get<std::string>());
    if (a.at("shape").get<std::vector<int>>() != params[i].tensor->shape)
      throw IoError("checkpoint shape mismatch for " + params[i].name);
    f.read(reinterpret_cast<char*>(params[i].tensor->data.data()),
           static_cast<std::streamsize>(params[i].tensor->data.size() * sizeof(T)));
  }
  if (!f) throw IoError("truncated checkpoint payload: " + path);
}

// Builds a network whose config is stored in the checkpoint, then loads it.
template <typename T>
std::unique_ptr<Network<T>> load_model(const std::string& path) {
  auto cfg = peek_checkpoint_config(path);
  auto net = std::make_unique<Network<T>>(cfg, 0);
  load_checkpoint(path, *net);
  return net;
}

}  // namespace gridread
