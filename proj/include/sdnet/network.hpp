#pragma once

// The soft-decoding branch network and its plumbing. A branch is D blocks:
// blocks 1..D-1 are CONV+BN+ReLU, block D is a lone CONV emitting 4 maps; the
// network predicts the residual between the packed clean and degraded tensors,
// so estimate = input + output. Two trained branches (pixel-polyphase and
// wavelet-sub-band) are fused with equal weights in soft_decode.
//
// Models carry an input_scale applied at the image boundary: tensors in the
// packed 0-255 domain are multiplied by it before entering the block stack and
// the predicted residual is divided by it on the way out. The default 1/255
// puts activations in the unit range the 0.1 learning rate expects. Training
// code scales its patch tensors once up front and runs the block stack
// directly, so branch_train_step itself is scale-agnostic.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sdnet/image.hpp"
#include "sdnet/layers.hpp"
#include "sdnet/optimizer.hpp"
#include "sdnet/rng.hpp"
#include "sdnet/tensor.hpp"
#include "sdnet/transforms.hpp"

namespace sdnet {

enum class Branch : std::uint8_t { Pixel = 0, Wavelet = 1 };

inline const char* branch_name(Branch b) {
  return b == Branch::Pixel ? "pixel" : "wavelet";
}

inline PackOrigin branch_domain(Branch b) {
  return b == Branch::Pixel ? PackOrigin::PixelPolyphase
                            : PackOrigin::WaveletSubband;
}

inline const char* origin_name(PackOrigin o) {
  return o == PackOrigin::PixelPolyphase ? "pixel-polyphase" : "wavelet-subband";
}

// qf tag value meaning "trained across a quality-factor mix".
inline constexpr int kBlindQf = 0;

struct NetworkConfig {
  int depth = 20;            // number of blocks D
  int hidden_channels = 64;  // feature maps in blocks 1..D-1
  int in_out_channels = 4;   // packed-domain channels

  void validate() const {
    require(depth >= 2, "NetworkConfig: depth must be >= 2, got " +
                            std::to_string(depth));
    require(hidden_channels >= 1 && in_out_channels >= 1,
            "NetworkConfig: channel counts must be >= 1");
  }
  bool operator==(const NetworkConfig&) const = default;

  // Learnable scalars plus BN running statistics, in checkpoint order.
  std::size_t scalar_count() const {
    const std::size_t h = hidden_channels, c = in_out_channels, d = depth;
    return h * c * 9              // first conv
           + (d - 2) * h * h * 9  // interior convs
           + (d - 1) * 4 * h      // gamma, beta, running mean/var per block
           + c * h * 9 + c;       // final conv + its bias
  }
};

template <typename T>
struct ModelParameters {
  using value_type = T;

  NetworkConfig config;
  Branch branch = Branch::Pixel;
  int qf = kBlindQf;  // quality factor this model was trained for; 0 = blind
  std::uint64_t iterations = 0;  // optimizer steps applied so far
  double input_scale = 1.0 / 255.0;
  std::vector<ConvLayer<T>> convs;      // depth entries
  std::vector<BatchNormLayer<T>> bns;   // depth-1 entries
};

template <typename T>
using ModelF = ModelParameters<T>;  // convenience alias for templates

// Allocates the layer stack for a config with default-initialized parameters
// (weights 0, gamma 1, beta 0, running stats 0/1). Interior convs are
// bias-free (BN beta supplies the shift); the final conv carries a bias.
template <typename T>
ModelParameters<T> make_model_shell(const NetworkConfig& config, Branch branch,
                                    int qf) {
  config.validate();
  require(qf == kBlindQf || (qf >= 1 && qf <= 100),
          "model qf tag must be 1..100 or 0 for blind, got " +
              std::to_string(qf));
  ModelParameters<T> m;
  m.config = config;
  m.branch = branch;
  m.qf = qf;
  m.convs.reserve(config.depth);
  m.convs.emplace_back(config.hidden_channels, config.in_out_channels, false);
  for (int b = 1; b < config.depth - 1; ++b)
    m.convs.emplace_back(config.hidden_channels, config.hidden_channels, false);
  m.convs.emplace_back(config.in_out_channels, config.hidden_channels, true);
  m.bns.assign(config.depth - 1,
               BatchNormLayer<T>(config.hidden_channels));
  return m;
}

// He-initialized model: weights ~ N(0, 2/(9*fan_in)), biases 0. The draw
// order (layer by layer, tap by tap, one generator) pins the result to the
// seed across platforms and thread counts.
template <typename T>
ModelParameters<T> init_model(const NetworkConfig& config, Branch branch,
                              int qf, std::uint64_t seed,
                              double input_scale = 1.0 / 255.0) {
  require(input_scale > 0, "init_model: input_scale must be positive");
  ModelParameters<T> m = make_model_shell<T>(config, branch, qf);
  m.input_scale = input_scale;
  Rng rng(seed);
  for (auto& conv : m.convs) {
    const double std_dev = std::sqrt(2.0 / (9.0 * conv.in_ch));
    for (auto& w : conv.weights) w = static_cast<T>(rng.normal() * std_dev);
  }
  return m;
}

// Everything the backward pass needs. conv_in[b] is the input to conv b
// (conv_in[0] is the stack input, conv_in[b>0] the previous block's ReLU
// output, which doubles as the ReLU mask: v > 0 holds for the same positions
// in a ReLU's input and output).
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> conv_in;
  std::vector<BnCache<T>> bn;
};

namespace detail {
template <typename T, typename Model>
Tensor<T> run_blocks(Model& model, const Tensor<T>& input, Mode mode,
                     ForwardCache<T>* cache) {
  const int depth = model.config.depth;
  require(input.shape().c == model.config.in_out_channels,
          "forward: input " + input.shape().str() + " does not have the " +
              std::to_string(model.config.in_out_channels) +
              " channels this model expects");
  if (cache) {
    cache->conv_in.clear();
    cache->conv_in.reserve(depth);
    cache->bn.assign(depth - 1, BnCache<T>{});
  }
  Tensor<T> h = input;
  for (int b = 0; b < depth - 1; ++b) {
    if (cache) cache->conv_in.push_back(h);
    h = conv2d_forward(h, model.convs[b]);
    h = batchnorm_forward(h, model.bns[b], mode,
                          cache ? &cache->bn[b] : nullptr);
    h = relu_forward(h);
  }
  if (cache) cache->conv_in.push_back(h);
  return conv2d_forward(h, model.convs[depth - 1]);
}
}  // namespace detail

// Raw block stack on tensors already in the model's working domain. The
// mutable overload supports Train (BN batch statistics get folded into the
// running averages); the const one is the shareable eval path.
template <typename T>
Tensor<T> forward_network(ModelParameters<T>& model, const Tensor<T>& input,
                          Mode mode, ForwardCache<T>* cache = nullptr) {
  return detail::run_blocks(model, input, mode, cache);
}

template <typename T>
Tensor<T> forward_network(const ModelParameters<T>& model,
                          const Tensor<T>& input) {
  return detail::run_blocks(model, input, Mode::Eval,
                            static_cast<ForwardCache<T>*>(nullptr));
}

template <typename T>
struct GradientSet {
  std::vector<std::vector<T>> conv_weights;  // per conv layer
  std::vector<std::vector<T>> conv_bias;     // empty for bias-free layers
  std::vector<std::vector<T>> bn_gamma;      // per BN layer
  std::vector<std::vector<T>> bn_beta;
};

// Backpropagates grad_out (d loss / d network output) through every block.
template <typename T>
GradientSet<T> network_backward(const ModelParameters<T>& model,
                                const ForwardCache<T>& cache,
                                const Tensor<T>& grad_out) {
  const int depth = model.config.depth;
  require(static_cast<int>(cache.conv_in.size()) == depth &&
              static_cast<int>(cache.bn.size()) == depth - 1,
          "network_backward: cache does not match model depth");
  GradientSet<T> g;
  g.conv_weights.resize(depth);
  g.conv_bias.resize(depth);
  g.bn_gamma.resize(depth - 1);
  g.bn_beta.resize(depth - 1);

  ConvGrads<T> cg =
      conv2d_backward(cache.conv_in[depth - 1], model.convs[depth - 1],
                      grad_out);
  g.conv_weights[depth - 1] = std::move(cg.weights);
  g.conv_bias[depth - 1] = std::move(cg.bias);
  Tensor<T> grad = std::move(cg.input);

  for (int b = depth - 2; b >= 0; --b) {
    grad = relu_backward(cache.conv_in[b + 1], grad);
    BnGrads<T> bg = batchnorm_backward(model.bns[b], cache.bn[b], grad);
    g.bn_gamma[b] = std::move(bg.gamma);
    g.bn_beta[b] = std::move(bg.beta);
    cg = conv2d_backward(cache.conv_in[b], model.convs[b], bg.input);
    g.conv_weights[b] = std::move(cg.weights);
    if (model.convs[b].has_bias) g.conv_bias[b] = std::move(cg.bias);
    grad = std::move(cg.input);
  }
  return g;
}

// One momentum-SGD step over every learnable. Weight decay touches conv
// weights only. Velocity slots follow a fixed traversal (conv, gamma, beta
// per block; final conv weights then bias) so optimizer state is stable
// across calls.
template <typename T>
void apply_gradients(ModelParameters<T>& model, const GradientSet<T>& grads,
                     OptimizerState<T>& opt) {
  const int depth = model.config.depth;
  std::size_t slot = 0;
  auto step = [&](std::vector<T>& param, const std::vector<T>& grad,
                  T decay, const std::string& what) {
    sgd_update<T>(param, opt.velocity_for(slot++, param.size()), grad,
                  opt.learning_rate, opt.momentum, decay, what);
  };
  for (int b = 0; b < depth - 1; ++b) {
    const std::string tag = "[" + std::to_string(b) + "]";
    step(model.convs[b].weights, grads.conv_weights[b], opt.weight_decay,
         "conv" + tag + ".weights");
    step(model.bns[b].gamma, grads.bn_gamma[b], T{}, "bn" + tag + ".gamma");
    step(model.bns[b].beta, grads.bn_beta[b], T{}, "bn" + tag + ".beta");
  }
  const std::string tag = "[" + std::to_string(depth - 1) + "]";
  step(model.convs[depth - 1].weights, grads.conv_weights[depth - 1],
       opt.weight_decay, "conv" + tag + ".weights");
  step(model.convs[depth - 1].bias, grads.conv_bias[depth - 1], T{},
       "conv" + tag + ".bias");
}

// A training batch of co-located packed patches: degraded inputs y, clean
// targets x, and the packing they came from.
template <typename T>
struct PackedBatch {
  Tensor<T> degraded;
  Tensor<T> clean;
  PackOrigin origin = PackOrigin::PixelPolyphase;
};

// One optimizer step on one batch; returns the pre-step loss
// (1/2N)*sum((f(y)+y) - x)^2, computed on the residual target x - y.
template <typename T>
double branch_train_step(ModelParameters<T>& model, OptimizerState<T>& opt,
                         const PackedBatch<T>& batch) {
  require(batch.degraded.shape() == batch.clean.shape(),
          "branch_train_step: degraded " + batch.degraded.shape().str() +
              " and clean " + batch.clean.shape().str() + " shapes differ");
  require(batch.origin == branch_domain(model.branch),
          std::string("branch_train_step: ") + branch_name(model.branch) +
              "-branch model fed " + origin_name(batch.origin) +
              " packed data");
  ForwardCache<T> cache;
  Tensor<T> pred = forward_network(model, batch.degraded, Mode::Train, &cache);

  Tensor<T> target(batch.clean.shape());
  const T* xp = batch.clean.data();
  const T* yp = batch.degraded.data();
  T* tp = target.data();
  for (std::size_t i = 0; i < target.size(); ++i) tp[i] = xp[i] - yp[i];

  auto [loss, grad] = half_mse_loss(pred, target);
  GradientSet<T> g = network_backward(model, cache, grad);
  apply_gradients(model, g, opt);
  model.iterations += 1;
  return loss;
}

template <typename T>
struct ResidualEstimate {
  Tensor<T> residual;  // network output mapped back to the packed domain
  Tensor<T> estimate;  // input + residual, unclamped
};

namespace detail {
template <typename T, typename Model>
ResidualEstimate<T> residual_on_packed(Model& model, const Tensor<T>& packed,
                                       Mode mode) {
  const T s = static_cast<T>(model.input_scale);
  Tensor<T> scaled(packed.shape());
  const T* ip = packed.data();
  T* sp = scaled.data();
  for (std::size_t i = 0; i < packed.size(); ++i) sp[i] = ip[i] * s;

  Tensor<T> out =
      run_blocks(model, scaled, mode, static_cast<ForwardCache<T>*>(nullptr));
  ResidualEstimate<T> r{Tensor<T>(out.shape()), Tensor<T>(out.shape())};
  T* rp = r.residual.data();
  T* ep = r.estimate.data();
  const T* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    rp[i] = op[i] / s;
    ep[i] = ip[i] + rp[i];
  }
  return r;
}
}  // namespace detail

// Residual prediction on a packed 0-255 tensor; estimate = input + residual.
// Train mode is available on mutable models for BN warm-up experiments.
template <typename T>
ResidualEstimate<T> forward_residual(const ModelParameters<T>& model,
                                     const Tensor<T>& packed_input,
                                     Mode mode = Mode::Eval) {
  require(mode == Mode::Eval,
          "forward_residual: train mode needs a mutable model");
  return detail::residual_on_packed(model, packed_input, Mode::Eval);
}

template <typename T>
ResidualEstimate<T> forward_residual(ModelParameters<T>& model,
                                     const Tensor<T>& packed_input,
                                     Mode mode = Mode::Eval) {
  return detail::residual_on_packed(model, packed_input, mode);
}

struct SoftDecodeResult {
  GrayImage fused;    // 0.5*pixel + 0.5*wavelet, clamped to [0,255]
  GrayImage pixel;    // pixel-branch estimate, unclamped
  GrayImage wavelet;  // wavelet-branch estimate, unclamped
};

// Full dual-branch soft decode of one degraded image. Only the fused output
// is clamped; the branch estimates stay linear so averaging them is exact.
template <typename TP, typename TW>
SoftDecodeResult soft_decode(const ModelParameters<TP>& pixel_model,
                             const ModelParameters<TW>& wavelet_model,
                             const GrayImage& degraded) {
  require(pixel_model.branch == Branch::Pixel,
          std::string("soft_decode: first model is tagged ") +
              branch_name(pixel_model.branch) + ", expected pixel");
  require(wavelet_model.branch == Branch::Wavelet,
          std::string("soft_decode: second model is tagged ") +
              branch_name(wavelet_model.branch) + ", expected wavelet");
  require(degraded.height % 2 == 0 && degraded.width % 2 == 0,
          "soft_decode: image dims must be even, got " +
              std::to_string(degraded.height) + "x" +
              std::to_string(degraded.width));

  PackedQuad<TP> pp = polyphase_pack<TP>(degraded);
  pp.tensor = forward_residual(pixel_model, pp.tensor).estimate;
  GrayImage pixel_est = polyphase_unpack(pp);

  PackedQuad<TW> wp = dwt_pack<TW>(degraded);
  wp.tensor = forward_residual(wavelet_model, wp.tensor).estimate;
  GrayImage wavelet_est = dwt_unpack(wp);

  GrayImage fused(degraded.height, degraded.width);
  for (std::size_t i = 0; i < fused.pix.size(); ++i)
    fused.pix[i] = clamp255(0.5 * pixel_est.pix[i] + 0.5 * wavelet_est.pix[i]);
  return {std::move(fused), std::move(pixel_est), std::move(wavelet_est)};
}

// ---- checkpoint serialization ----------------------------------------------
//
// Little-endian binary, version 1:
//   offset 0   magic "SDNC"
//          4   u32 version
//          8   u8  dtype (0 = float32, 1 = float64)
//          9   u8  branch (0 = pixel, 1 = wavelet)
//         10   i32 qf (0 = blind)
//         14   u32 depth, u32 hidden_channels, u32 in_out_channels
//         26   u64 iterations
//         34   f64 input_scale
//         42   parameters in block order: per hidden block conv weights then
//              BN gamma/beta/running_mean/running_var; final conv weights
//              then bias — each scalar in the dtype's width
//   trailer    u64 FNV-1a hash of every preceding byte

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "checkpoints hold float or double parameters");
  return std::is_same_v<T, float> ? 0 : 1;
}

inline void put_u8(std::string& b, std::uint8_t v) {
  b.push_back(static_cast<char>(v));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_i32(std::string& b, std::int32_t v) {
  put_u32(b, static_cast<std::uint32_t>(v));
}
inline void put_scalar(std::string& b, float v) {
  put_u32(b, std::bit_cast<std::uint32_t>(v));
}
inline void put_scalar(std::string& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

// Byte cursor with offset-bearing diagnostics.
struct ByteReader {
  const std::string& buf;
  std::size_t off = 0;

  void need(std::size_t n, const char* what) const {
    if (off + n > buf.size())
      throw std::runtime_error(
          "truncated checkpoint: need " + std::to_string(n) + " byte(s) for " +
          what + " at byte offset " + std::to_string(off) + ", file has " +
          std::to_string(buf.size()));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[off++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i]))
           << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i]))
           << (8 * i);
    off += 8;
    return v;
  }
  std::int32_t i32(const char* what) {
    return static_cast<std::int32_t>(u32(what));
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  template <typename T>
  T scalar(const char* what) {
    if constexpr (std::is_same_v<T, float>)
      return std::bit_cast<float>(u32(what));
    else
      return std::bit_cast<double>(u64(what));
  }
};

inline void write_file_atomic(const std::string& path,
                              const std::string& data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open " + tmp + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    require(out.good(), "write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot move " + tmp + " into place at " + path);
  }
}

// The parameter arrays in checkpoint payload order.
template <typename T, typename Model, typename Fn>
void visit_payload(Model& model, Fn&& fn) {
  const int depth = model.config.depth;
  for (int b = 0; b < depth - 1; ++b) {
    fn(model.convs[b].weights);
    fn(model.bns[b].gamma);
    fn(model.bns[b].beta);
    fn(model.bns[b].running_mean);
    fn(model.bns[b].running_var);
  }
  fn(model.convs[depth - 1].weights);
  fn(model.convs[depth - 1].bias);
}

}  // namespace detail

// Exact on-disk size of a checkpoint for this configuration and dtype width.
inline std::size_t checkpoint_byte_length(const NetworkConfig& config,
                                          std::size_t dtype_bytes) {
  return 42 + config.scalar_count() * dtype_bytes + 8;
}

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint8_t dtype = 0;  // 0 = float32, 1 = float64
  Branch branch = Branch::Pixel;
  int qf = kBlindQf;
  NetworkConfig config;
  std::uint64_t iterations = 0;
  double input_scale = 0;
};

template <typename T>
void save_checkpoint(const ModelParameters<T>& model, const std::string& path) {
  std::string buf;
  buf.reserve(checkpoint_byte_length(model.config, sizeof(T)));
  buf.append(kCheckpointMagic, 4);
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u8(buf, detail::dtype_tag<T>());
  detail::put_u8(buf, static_cast<std::uint8_t>(model.branch));
  detail::put_i32(buf, model.qf);
  detail::put_u32(buf, static_cast<std::uint32_t>(model.config.depth));
  detail::put_u32(buf, static_cast<std::uint32_t>(model.config.hidden_channels));
  detail::put_u32(buf, static_cast<std::uint32_t>(model.config.in_out_channels));
  detail::put_u64(buf, model.iterations);
  detail::put_scalar(buf, model.input_scale);
  detail::visit_payload<T>(model, [&buf](const std::vector<T>& arr) {
    for (T v : arr) detail::put_scalar(buf, v);
  });
  detail::put_u64(buf, detail::fnv1a(buf.data(), buf.size()));
  detail::write_file_atomic(path, buf);
}

namespace detail {
inline CheckpointInfo parse_header(ByteReader& r, const std::string& path) {
  r.need(4, "magic");
  if (r.buf.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path +
                             " is not a checkpoint file (bad magic at byte "
                             "offset 0)");
  r.off = 4;
  CheckpointInfo info;
  info.version = r.u32("version");
  if (info.version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(info.version) + " in " + path +
                             " (this build reads version " +
                             std::to_string(kCheckpointVersion) + ")");
  info.dtype = r.u8("dtype");
  require(info.dtype <= 1, "checkpoint " + path + " has unknown dtype tag " +
                               std::to_string(info.dtype));
  const std::uint8_t branch = r.u8("branch");
  require(branch <= 1, "checkpoint " + path + " has unknown branch tag " +
                           std::to_string(branch));
  info.branch = static_cast<Branch>(branch);
  info.qf = r.i32("qf");
  info.config.depth = static_cast<int>(r.u32("depth"));
  info.config.hidden_channels = static_cast<int>(r.u32("hidden_channels"));
  info.config.in_out_channels = static_cast<int>(r.u32("in_out_channels"));
  info.config.validate();
  info.iterations = r.u64("iterations");
  info.input_scale = r.f64("input_scale");
  require(info.input_scale > 0,
          "checkpoint " + path + " has non-positive input_scale");
  return info;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return buf;
}
}  // namespace detail

// Header peek, used to pick the parameter type before a full load.
inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf};
  return detail::parse_header(r, path);
}

template <typename T>
ModelParameters<T> load_checkpoint(const std::string& path) {
  const std::string buf = detail::read_file(path);
  detail::ByteReader r{buf};
  const CheckpointInfo info = detail::parse_header(r, path);
  if (info.dtype != detail::dtype_tag<T>())
    throw std::runtime_error(
        "checkpoint " + path + " holds " +
        (info.dtype == 0 ? std::string("float32") : std::string("float64")) +
        " parameters, not the requested type");

  const std::size_t expect =
      checkpoint_byte_length(info.config, info.dtype == 0 ? 4 : 8);
  if (buf.size() != expect)
    throw std::runtime_error(
        "truncated checkpoint " + path + ": this configuration needs " +
        std::to_string(expect) + " bytes, file has " +
        std::to_string(buf.size()));

  const std::uint64_t stored =
      detail::ByteReader{buf, buf.size() - 8}.u64("checksum");
  const std::uint64_t computed = detail::fnv1a(buf.data(), buf.size() - 8);
  if (stored != computed)
    throw std::runtime_error("checkpoint " + path +
                             " is corrupt: stored checksum " +
                             std::to_string(stored) + " != computed " +
                             std::to_string(computed));

  ModelParameters<T> m =
      make_model_shell<T>(info.config, info.branch, info.qf);
  m.iterations = info.iterations;
  m.input_scale = info.input_scale;
  detail::visit_payload<T>(m, [&r](std::vector<T>& arr) {
    for (T& v : arr) v = r.template scalar<T>("parameters");
  });
  return m;
}

}  // namespace sdnet
