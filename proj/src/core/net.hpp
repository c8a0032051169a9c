#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace fbind {

struct NetworkConfig {
  int num_classes = 5;
  std::string encoder_tag = "toy";  // residual toy encoder; the only one shipped
  int output_stride = 8;            // {4, 8, 16}
  int encoder_width = 16;           // stem channels; features end at 2x this
  int encoder_blocks = 6;
  int branch_hidden = 32;           // SSM branch 3x3 channels
  int fbh_hidden = 0;               // 0 resolves to 2 * num_classes

  int resolved_fbh_hidden() const {
    return fbh_hidden > 0 ? fbh_hidden : 2 * num_classes;
  }
  void validate() const;
};

// One optimizable weight array; `frozen` marks tensors the current stage
// excludes from updates and weight decay.
struct ParamRef {
  std::string name;
  std::vector<double>* w;
  std::vector<double>* g;
  bool frozen = false;
};

struct Conv2d {
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  std::vector<double> w, b, gw, gb;

  void configure(int in_channels, int out_channels, int kernel, int stride_,
                 int pad_);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(const std::string& prefix, bool frozen,
               std::vector<ParamRef>* out);

 private:
  Tensor x_cache_;
};

// Rectifier with an optional leak. The encoder and SSM branches use a small
// leak so a large early step cannot kill the whole network; the binding head
// keeps the plain rectifier.
struct Rectifier {
  explicit Rectifier(double negative_slope = 0.0) : slope_(negative_slope) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  double slope_ = 0.0;
  std::vector<unsigned char> mask_;
  int c_ = 0, h_ = 0, w_ = 0;
};

struct ResidualBlock {
  Conv2d conv1, conv2;
  std::optional<Conv2d> proj;  // 1x1 shortcut when stride/width changes
  Rectifier relu1{0.01}, relu2{0.01};

  void configure(int in_c, int out_c, int stride);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(const std::string& prefix, bool frozen,
               std::vector<ParamRef>* out);
};

struct ToyEncoder {
  Conv2d stem;
  Rectifier stem_relu{0.01};
  std::vector<ResidualBlock> blocks;
  int out_channels = 0;

  void configure(const NetworkConfig& cfg);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(bool frozen, std::vector<ParamRef>* out);
};

// One SSM branch: 3x3 conv -> rectifier -> 1x1 conv to class logits.
struct Branch {
  Conv2d conv1, conv2;
  Rectifier relu{0.01};

  void configure(int in_c, int hidden, int classes);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(const std::string& prefix, bool frozen,
               std::vector<ParamRef>* out);
};

// Feature binding head: concat(S_t, S_p) -> 1x1 -> rectifier -> 1x1.
struct BindingHead {
  Conv2d conv1, conv2;
  Rectifier relu;  // plain rectifier here

  void configure(int classes, int hidden);
  void init(Rng& rng);
  Tensor forward(const Tensor& st, const Tensor& sp);
  // splits the concat gradient back into the two branch logit maps
  void backward(const Tensor& gy, Tensor* g_st, Tensor* g_sp);
  void collect(bool frozen, std::vector<ParamRef>* out);
};

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  bool initialized = false;
};

// S_t (dominant), S_p (phantom) and optionally S_fb (binding) for one input,
// at branch resolution, with the geometry needed to upsample back.
struct PredictionTriple {
  int in_h = 0, in_w = 0;    // original image dims
  int pad_h = 0, pad_w = 0;  // encoder input dims (stride multiples)
  Tensor st, sp;
  std::optional<Tensor> sfb;
};

class BindingNet {
 public:
  NetworkConfig cfg;
  Normalization norm;
  int stage = 1;  // serving head: 1 -> S_fb, 2 -> S_t

  static BindingNet build(const NetworkConfig& cfg, std::uint64_t init_seed);

  // include_fbh=false skips the binding head (stage 2 / inference mode).
  PredictionTriple forward(const Image& image, bool include_fbh);

  // Logits at input resolution: bilinear to the padded grid, then crop.
  Tensor upsample_to_input(const Tensor& branch_logits,
                           const PredictionTriple& t) const;

  // Backprop from input-resolution gradients (any pointer may be null).
  // Accumulates parameter gradients; call zero_grads between steps.
  void backward(const PredictionTriple& t, const Tensor* g_st_up,
                const Tensor* g_sp_up, const Tensor* g_sfb_up);

  // fbh_frozen marks binding-head tensors as non-trainable (stage 2).
  std::vector<ParamRef> params(bool fbh_frozen);
  void zero_grads();
  std::size_t param_count();

  void save(const std::filesystem::path& path);
  static BindingNet load(const std::filesystem::path& path);

 private:
  ToyEncoder enc_;
  Branch dom_, pha_;
  BindingHead fbh_;

  Tensor make_input(const Image& image, int pad_h, int pad_w) const;
};

}  // namespace fbind
