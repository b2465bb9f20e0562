#pragma once

// The four layer types of the residual branches (3x3 convolution, batch norm,
// ReLU) plus the half mean-squared-error loss, each with an analytic backward
// pass. Convolutions are stride 1 with zero padding 1, so spatial dims are
// preserved throughout.

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "sdnet/parallel.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

enum class Mode { Train, Eval };

template <typename T>
struct ConvLayer {
  int out_ch = 0;
  int in_ch = 0;
  bool has_bias = true;
  std::vector<T> weights;  // out_ch * in_ch * 3 * 3, row-major taps
  std::vector<T> bias;     // out_ch (present even when has_bias is false)

  ConvLayer() = default;
  ConvLayer(int out, int in, bool with_bias = true)
      : out_ch(out), in_ch(in), has_bias(with_bias),
        weights(static_cast<std::size_t>(out) * in * 9, T{}),
        bias(out, T{}) {}

  const T* kernel(int k, int c) const {
    return weights.data() + (static_cast<std::size_t>(k) * in_ch + c) * 9;
  }
  T* kernel(int k, int c) {
    return weights.data() + (static_cast<std::size_t>(k) * in_ch + c) * 9;
  }
};

template <typename T>
struct BatchNormLayer {
  int ch = 0;
  std::vector<T> gamma, beta, running_mean, running_var;
  T epsilon = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);  // weight of the new batch statistic

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels)
      : ch(channels), gamma(channels, T{1}), beta(channels, T{}),
        running_mean(channels, T{}), running_var(channels, T{1}) {}
};

namespace detail {

// Sum of a[i]*b[i] with four fixed-order partial accumulators; deterministic
// for a given length and vectorizable despite the reduction.
template <typename T>
double dot(const T* a, const T* b, int len) {
  double p0 = 0, p1 = 0, p2 = 0, p3 = 0;
  int i = 0;
  for (; i + 4 <= len; i += 4) {
    p0 += static_cast<double>(a[i]) * b[i];
    p1 += static_cast<double>(a[i + 1]) * b[i + 1];
    p2 += static_cast<double>(a[i + 2]) * b[i + 2];
    p3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < len; ++i) p0 += static_cast<double>(a[i]) * b[i];
  return (p0 + p1) + (p2 + p3);
}

template <typename T>
double sum(const T* a, int len) {
  double p0 = 0, p1 = 0, p2 = 0, p3 = 0;
  int i = 0;
  for (; i + 4 <= len; i += 4) {
    p0 += a[i];
    p1 += a[i + 1];
    p2 += a[i + 2];
    p3 += a[i + 3];
  }
  for (; i < len; ++i) p0 += a[i];
  return (p0 + p1) + (p2 + p3);
}

// Copy with a one-pixel zero border around every plane. The 3x3 stencil loops
// below run over the padded copy, so their inner loops need no edge cases and
// stay straight-line vectorizable.
template <typename T>
Tensor<T> zero_pad1(const Tensor<T>& t) {
  const Shape4 s = t.shape();
  Tensor<T> out({s.n, s.c, s.h + 2, s.w + 2});
  parallel_for(static_cast<std::size_t>(s.n) * s.c,
               [&](std::size_t b, std::size_t e) {
                 for (std::size_t idx = b; idx < e; ++idx) {
                   const int n = static_cast<int>(idx) / s.c;
                   const int c = static_cast<int>(idx) % s.c;
                   const T* src = t.plane(n, c);
                   T* dst = out.plane(n, c) + (s.w + 2) + 1;
                   for (int h = 0; h < s.h; ++h)
                     std::copy(src + static_cast<std::size_t>(h) * s.w,
                               src + static_cast<std::size_t>(h + 1) * s.w,
                               dst + static_cast<std::size_t>(h) * (s.w + 2));
                 }
               });
  return out;
}

}  // namespace detail

// --- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvLayer<T>& layer) {
  const Shape4 s = input.shape();
  require(s.c == layer.in_ch,
          "conv2d_forward: input " + s.str() + " does not match layer (" +
              std::to_string(layer.out_ch) + "<-" + std::to_string(layer.in_ch) +
              " channels)");
  const int N = s.n, C = s.c, H = s.h, W = s.w, K = layer.out_ch;
  const int Wp = W + 2;
  const Tensor<T> padded = detail::zero_pad1(input);
  Tensor<T> out({N, K, H, W});

  parallel_for(static_cast<std::size_t>(N) * K, [&](std::size_t b, std::size_t e) {
    std::vector<T> acc(W);
    for (std::size_t idx = b; idx < e; ++idx) {
      const int n = static_cast<int>(idx) / K;
      const int k = static_cast<int>(idx) % K;
      T* op = out.plane(n, k);
      const T bias = layer.has_bias ? layer.bias[k] : T{};
      for (int h = 0; h < H; ++h) {
        T* a = acc.data();
        for (int i = 0; i < W; ++i) a[i] = bias;
        for (int c = 0; c < C; ++c) {
          // Padded rows h, h+1, h+2 are input rows h-1, h, h+1.
          const T* r0 = padded.plane(n, c) + static_cast<std::size_t>(h) * Wp;
          const T* r1 = r0 + Wp;
          const T* r2 = r1 + Wp;
          const T* wk = layer.kernel(k, c);
          const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
          const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
          const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
          for (int i = 0; i < W; ++i)
            a[i] += w00 * r0[i] + w01 * r0[i + 1] + w02 * r0[i + 2] +
                    w10 * r1[i] + w11 * r1[i + 1] + w12 * r1[i + 2] +
                    w20 * r2[i] + w21 * r2[i + 1] + w22 * r2[i + 2];
        }
        std::copy(a, a + W, op + static_cast<std::size_t>(h) * W);
      }
    }
  });
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;        // dL/dx
  std::vector<T> weights; // dL/dw, same layout as layer.weights
  std::vector<T> bias;    // dL/db
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvLayer<T>& layer,
                             const Tensor<T>& grad_out) {
  const Shape4 s = input.shape();
  require(s.c == layer.in_ch, "conv2d_backward: input " + s.str() +
                                  " does not match layer in_ch " +
                                  std::to_string(layer.in_ch));
  require(grad_out.shape() == Shape4{s.n, layer.out_ch, s.h, s.w},
          "conv2d_backward: grad_out " + grad_out.shape().str() +
              " does not match forward output (" + std::to_string(s.n) + "," +
              std::to_string(layer.out_ch) + "," + std::to_string(s.h) + "," +
              std::to_string(s.w) + ")");
  const int N = s.n, C = s.c, H = s.h, W = s.w, K = layer.out_ch;

  ConvGrads<T> g;
  g.input = Tensor<T>({N, C, H, W});
  g.weights.assign(layer.weights.size(), T{});
  g.bias.assign(static_cast<std::size_t>(K), T{});

  // dL/db[k] = sum of grad_out over (n,h,w).
  parallel_for(K, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      double acc = 0;
      for (int n = 0; n < N; ++n)
        acc += detail::sum(grad_out.plane(n, static_cast<int>(k)), H * W);
      g.bias[k] = static_cast<T>(acc);
    }
  });

  // dL/dw[k,c,p,q] = sum over (n,h,w) of grad_out[n,k,h,w] * x[n,c,h+p-1,w+q-1].
  // Each (k,c) pair keeps nine lane-blocked accumulators so the sweep over the
  // batch stays a straight 9-tap multiply-accumulate; lane sums are folded in a
  // fixed order at the end.
  const int Wp = W + 2;
  const Tensor<T> padded_x = detail::zero_pad1(input);
  parallel_for(static_cast<std::size_t>(K) * C, [&](std::size_t b, std::size_t e) {
    constexpr int kLanes = 8;
    for (std::size_t idx = b; idx < e; ++idx) {
      const int k = static_cast<int>(idx) / C;
      const int c = static_cast<int>(idx) % C;
      T lane[9][kLanes] = {};
      T tail[9] = {};
      for (int n = 0; n < N; ++n) {
        const T* gp = grad_out.plane(n, k);
        const T* xp = padded_x.plane(n, c);
        for (int h = 0; h < H; ++h) {
          const T* grow = gp + static_cast<std::size_t>(h) * W;
          const T* x0 = xp + static_cast<std::size_t>(h) * Wp;
          const T* x1 = x0 + Wp;
          const T* x2 = x1 + Wp;
          int i = 0;
          for (; i + kLanes <= W; i += kLanes) {
            for (int j = 0; j < kLanes; ++j) {
              const T gv = grow[i + j];
              lane[0][j] += gv * x0[i + j];
              lane[1][j] += gv * x0[i + j + 1];
              lane[2][j] += gv * x0[i + j + 2];
              lane[3][j] += gv * x1[i + j];
              lane[4][j] += gv * x1[i + j + 1];
              lane[5][j] += gv * x1[i + j + 2];
              lane[6][j] += gv * x2[i + j];
              lane[7][j] += gv * x2[i + j + 1];
              lane[8][j] += gv * x2[i + j + 2];
            }
          }
          for (; i < W; ++i) {
            const T gv = grow[i];
            tail[0] += gv * x0[i];
            tail[1] += gv * x0[i + 1];
            tail[2] += gv * x0[i + 2];
            tail[3] += gv * x1[i];
            tail[4] += gv * x1[i + 1];
            tail[5] += gv * x1[i + 2];
            tail[6] += gv * x2[i];
            tail[7] += gv * x2[i + 1];
            tail[8] += gv * x2[i + 2];
          }
        }
      }
      T* wg = g.weights.data() + idx * 9;
      for (int t = 0; t < 9; ++t) {
        T total = tail[t];
        for (int j = 0; j < kLanes; ++j) total += lane[t][j];
        wg[t] = total;
      }
    }
  });

  // dL/dx: grad_out correlated with the 180-degree rotated kernels. In padded
  // coordinates, x[ih,iw] collects pg[ih+2-p, iw+2-q] * w[p,q].
  const Tensor<T> padded_g = detail::zero_pad1(grad_out);
  parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t b, std::size_t e) {
    std::vector<T> acc(W);
    for (std::size_t idx = b; idx < e; ++idx) {
      const int n = static_cast<int>(idx) / C;
      const int c = static_cast<int>(idx) % C;
      T* dp = g.input.plane(n, c);
      for (int ih = 0; ih < H; ++ih) {
        T* a = acc.data();
        for (int i = 0; i < W; ++i) a[i] = T{};
        for (int k = 0; k < K; ++k) {
          // Row r0 = ih is tap row p=2, r2 = ih+2 is tap row p=0.
          const T* r0 = padded_g.plane(n, k) + static_cast<std::size_t>(ih) * Wp;
          const T* r1 = r0 + Wp;
          const T* r2 = r1 + Wp;
          const T* wk = layer.kernel(k, c);
          const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
          const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
          const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
          for (int i = 0; i < W; ++i)
            a[i] += w22 * r0[i] + w21 * r0[i + 1] + w20 * r0[i + 2] +
                    w12 * r1[i] + w11 * r1[i + 1] + w10 * r1[i + 2] +
                    w02 * r2[i] + w01 * r2[i + 1] + w00 * r2[i + 2];
        }
        std::copy(a, a + W, dp + static_cast<std::size_t>(ih) * W);
      }
    }
  });
  return g;
}

// --- batch normalization ----------------------------------------------------

template <typename T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel, 1/sqrt(var + eps)
  bool train = false;
};

// Train mode normalizes with batch statistics over (n,h,w) per channel and
// updates the running averages; eval mode is the running-stat affine map.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormLayer<T>& layer,
                            Mode mode, BnCache<T>* cache = nullptr) {
  const Shape4 s = input.shape();
  require(s.c == layer.ch, "batchnorm_forward: input " + s.str() +
                               " does not match layer channels " +
                               std::to_string(layer.ch));
  const int N = s.n, C = s.c, H = s.h, W = s.w;
  const std::size_t m = static_cast<std::size_t>(N) * H * W;
  Tensor<T> out(s);

  if (mode == Mode::Eval) {
    parallel_for(C, [&](std::size_t b, std::size_t e) {
      for (std::size_t c = b; c < e; ++c) {
        const T scale = layer.gamma[c] /
                        static_cast<T>(std::sqrt(static_cast<double>(layer.running_var[c]) +
                                                 static_cast<double>(layer.epsilon)));
        const T shift = layer.beta[c] - scale * layer.running_mean[c];
        for (int n = 0; n < N; ++n) {
          const T* ip = input.plane(n, static_cast<int>(c));
          T* op = out.plane(n, static_cast<int>(c));
          for (int i = 0; i < H * W; ++i) op[i] = scale * ip[i] + shift;
        }
      }
    });
    if (cache) cache->train = false;
    return out;
  }

  require(m >= 2, "batchnorm_forward: train mode needs at least 2 values per "
                  "channel, got " + std::to_string(m));
  if (cache) {
    cache->xhat = Tensor<T>(s);
    cache->inv_std.assign(C, T{});
    cache->train = true;
  }

  parallel_for(C, [&](std::size_t b, std::size_t e) {
    for (std::size_t ci = b; ci < e; ++ci) {
      const int c = static_cast<int>(ci);
      double mean = 0;
      for (int n = 0; n < N; ++n) mean += detail::sum(input.plane(n, c), H * W);
      mean /= static_cast<double>(m);
      double var = 0;
      for (int n = 0; n < N; ++n) {
        const T* ip = input.plane(n, c);
        double p0 = 0, p1 = 0;
        int i = 0;
        for (; i + 2 <= H * W; i += 2) {
          const double d0 = ip[i] - mean, d1 = ip[i + 1] - mean;
          p0 += d0 * d0;
          p1 += d1 * d1;
        }
        for (; i < H * W; ++i) {
          const double d = ip[i] - mean;
          p0 += d * d;
        }
        var += p0 + p1;
      }
      var /= static_cast<double>(m);  // biased, as used for normalization

      const double istd = 1.0 / std::sqrt(var + static_cast<double>(layer.epsilon));
      const T gamma = layer.gamma[c], beta = layer.beta[c];
      for (int n = 0; n < N; ++n) {
        const T* ip = input.plane(n, c);
        T* op = out.plane(n, c);
        T* xh = cache ? cache->xhat.plane(n, c) : nullptr;
        for (int i = 0; i < H * W; ++i) {
          const T x = static_cast<T>((ip[i] - mean) * istd);
          if (xh) xh[i] = x;
          op[i] = gamma * x + beta;
        }
      }
      if (cache) cache->inv_std[ci] = static_cast<T>(istd);

      const T mom = layer.momentum;
      layer.running_mean[c] = (T{1} - mom) * layer.running_mean[c] +
                              mom * static_cast<T>(mean);
      layer.running_var[c] = (T{1} - mom) * layer.running_var[c] +
                             mom * static_cast<T>(var);
    }
  });
  return out;
}

// Eval-only overload for layers shared read-only across threads. Train mode
// must go through the mutable overload (it updates the running statistics).
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input,
                            const BatchNormLayer<T>& layer, Mode mode,
                            BnCache<T>* cache = nullptr) {
  require(mode == Mode::Eval,
          "batchnorm_forward: train mode needs a mutable layer");
  return batchnorm_forward(input, const_cast<BatchNormLayer<T>&>(layer), mode,
                           cache);
}

template <typename T>
struct BnGrads {
  Tensor<T> input;
  std::vector<T> gamma, beta;
};

template <typename T>
BnGrads<T> batchnorm_backward(const BatchNormLayer<T>& layer,
                              const BnCache<T>& cache,
                              const Tensor<T>& grad_out) {
  require(cache.train, "batchnorm_backward: cache was produced in eval mode");
  const Shape4 s = cache.xhat.shape();
  require(grad_out.shape() == s, "batchnorm_backward: grad_out " +
                                     grad_out.shape().str() +
                                     " does not match cached shape " + s.str());
  const int N = s.n, C = s.c, H = s.h, W = s.w;
  const double m = static_cast<double>(N) * H * W;

  BnGrads<T> g;
  g.input = Tensor<T>(s);
  g.gamma.assign(C, T{});
  g.beta.assign(C, T{});

  parallel_for(C, [&](std::size_t b, std::size_t e) {
    for (std::size_t ci = b; ci < e; ++ci) {
      const int c = static_cast<int>(ci);
      double sum_g = 0, sum_gx = 0;
      for (int n = 0; n < N; ++n) {
        sum_g += detail::sum(grad_out.plane(n, c), H * W);
        sum_gx += detail::dot(grad_out.plane(n, c), cache.xhat.plane(n, c), H * W);
      }
      g.beta[ci] = static_cast<T>(sum_g);
      g.gamma[ci] = static_cast<T>(sum_gx);

      // dx = gamma*istd * (go - sum(go)/m - xhat * sum(go*xhat)/m); the two
      // subtracted terms carry the dependence of the batch stats on x.
      const double k = static_cast<double>(layer.gamma[c]) *
                       static_cast<double>(cache.inv_std[ci]);
      const double mg = sum_g / m, mgx = sum_gx / m;
      for (int n = 0; n < N; ++n) {
        const T* gp = grad_out.plane(n, c);
        const T* xh = cache.xhat.plane(n, c);
        T* dp = g.input.plane(n, c);
        for (int i = 0; i < H * W; ++i)
          dp[i] = static_cast<T>(k * (gp[i] - mg - xh[i] * mgx));
      }
    }
  });
  return g;
}

// --- ReLU --------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* ip = input.data();
  T* op = out.data();
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) op[i] = ip[i] > T{} ? ip[i] : T{};
  return out;
}

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require(grad_out.shape() == input.shape(),
          "relu_backward: grad_out " + grad_out.shape().str() +
              " does not match input " + input.shape().str());
  Tensor<T> g(input.shape());
  const T* ip = input.data();
  const T* gp = grad_out.data();
  T* op = g.data();
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) op[i] = ip[i] > T{} ? gp[i] : T{};
  return g;
}

// --- loss ---------------------------------------------------------------------

// loss = 1/(2N) * sum over all elements of (pred - target)^2, N = batch size;
// the gradient wrt pred is (pred - target)/N.
template <typename T>
std::pair<double, Tensor<T>> half_mse_loss(const Tensor<T>& prediction,
                                           const Tensor<T>& target) {
  require(prediction.shape() == target.shape(),
          "half_mse_loss: prediction " + prediction.shape().str() +
              " does not match target " + target.shape().str());
  const double n = static_cast<double>(prediction.shape().n);
  Tensor<T> grad(prediction.shape());
  const T* pp = prediction.data();
  const T* tp = target.data();
  T* gp = grad.data();
  double p0 = 0, p1 = 0;
  const std::size_t total = prediction.size();
  std::size_t i = 0;
  for (; i + 2 <= total; i += 2) {
    const double d0 = static_cast<double>(pp[i]) - tp[i];
    const double d1 = static_cast<double>(pp[i + 1]) - tp[i + 1];
    p0 += d0 * d0;
    p1 += d1 * d1;
    gp[i] = static_cast<T>(d0 / n);
    gp[i + 1] = static_cast<T>(d1 / n);
  }
  for (; i < total; ++i) {
    const double d = static_cast<double>(pp[i]) - tp[i];
    p0 += d * d;
    gp[i] = static_cast<T>(d / n);
  }
  return {(p0 + p1) / (2.0 * n), std::move(grad)};
}

}  // namespace sdnet
