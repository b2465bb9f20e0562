#pragma once

// Training and evaluation workflow: augmentation (rotations x bicubic
// downscales), co-located 31x31x4 patch-pair sampling in either packed
// domain, the LR-scheduled SGD loop with periodic validation and best/final
// checkpoints, and full-corpus evaluation of the JPEG baseline against the
// two branches and their fusion.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sdnet/image.hpp"
#include "sdnet/jpeg.hpp"
#include "sdnet/metrics.hpp"
#include "sdnet/network.hpp"
#include "sdnet/rng.hpp"
#include "sdnet/tensor.hpp"
#include "sdnet/transforms.hpp"

namespace sdnet {

// --- geometry helpers --------------------------------------------------------

// Quarter-turn clockwise: out(i,j) = in(h-1-j, i), dims swap.
inline GrayImage rotate90(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int i = 0; i < out.height; ++i)
    for (int j = 0; j < out.width; ++j)
      out.at(i, j) = img.at(img.height - 1 - j, i);
  return out;
}

inline GrayImage rotate180(const GrayImage& img) {
  GrayImage out(img.height, img.width);
  for (int i = 0; i < out.height; ++i)
    for (int j = 0; j < out.width; ++j)
      out.at(i, j) = img.at(img.height - 1 - i, img.width - 1 - j);
  return out;
}

inline GrayImage rotate270(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int i = 0; i < out.height; ++i)
    for (int j = 0; j < out.width; ++j)
      out.at(i, j) = img.at(j, img.width - 1 - i);
  return out;
}

inline GrayImage rotate_quarters(const GrayImage& img, int quarters) {
  switch (((quarters % 4) + 4) % 4) {
    case 1: return rotate90(img);
    case 2: return rotate180(img);
    case 3: return rotate270(img);
    default: return img;
  }
}

namespace detail {
// Catmull-Rom cubic (a = -0.5), support [-2, 2], weights sum to 1.
inline double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}
}  // namespace detail

// Separable bicubic resample to oh x ow (half-pixel centers, edge clamp),
// rounded back onto the integer [0,255] grid.
inline GrayImage resize_bicubic(const GrayImage& img, int oh, int ow) {
  require(!img.empty(), "resize_bicubic: empty image");
  require(oh >= 1 && ow >= 1, "resize_bicubic: target dims must be >= 1");
  const int h = img.height, w = img.width;

  auto taps = [](int out_size, int in_size) {
    // For each output index: four source columns (clamped) and weights.
    std::vector<std::array<int, 4>> idx(out_size);
    std::vector<std::array<double, 4>> wgt(out_size);
    const double step = static_cast<double>(in_size) / out_size;
    for (int d = 0; d < out_size; ++d) {
      const double src = (d + 0.5) * step - 0.5;
      const int base = static_cast<int>(std::floor(src));
      for (int k = 0; k < 4; ++k) {
        const int s = base - 1 + k;
        idx[d][k] = std::clamp(s, 0, in_size - 1);
        wgt[d][k] = detail::cubic_weight(src - s);
      }
    }
    return std::pair(idx, wgt);
  };

  const auto [cidx, cwgt] = taps(ow, w);
  std::vector<double> mid(static_cast<std::size_t>(h) * ow);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += cwgt[j][k] * img.at(i, cidx[j][k]);
      mid[static_cast<std::size_t>(i) * ow + j] = acc;
    }

  const auto [ridx, rwgt] = taps(oh, h);
  GrayImage out(oh, ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k)
        acc += rwgt[i][k] * mid[static_cast<std::size_t>(ridx[i][k]) * ow + j];
      out.at(i, j) = clamp255(std::round(acc));
    }
  return out;
}

inline GrayImage crop_top_left(const GrayImage& img, int oh, int ow) {
  require(oh <= img.height && ow <= img.width, "crop_top_left: crop exceeds image");
  GrayImage out(oh, ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) out.at(i, j) = img.at(i, j);
  return out;
}

inline GrayImage crop_even(const GrayImage& img) {
  return crop_top_left(img, img.height & ~1, img.width & ~1);
}

// Rotations by 0/90/180/270 crossed with downscales by {1.0, 0.7, 0.5},
// in that nesting order (rotation outer). Target dims are floored to even;
// scale 1.0 crops odd inputs instead of resampling. Variants smaller than
// 62x62 are dropped.
inline std::vector<GrayImage> augment(const GrayImage& img) {
  constexpr double kScales[3] = {1.0, 0.7, 0.5};
  constexpr int kMinDim = 62;
  std::vector<GrayImage> out;
  for (int rot = 0; rot < 4; ++rot) {
    const GrayImage r = rotate_quarters(img, rot);
    for (const double s : kScales) {
      const int oh = static_cast<int>(r.height * s) & ~1;
      const int ow = static_cast<int>(r.width * s) & ~1;
      if (oh < kMinDim || ow < kMinDim) continue;
      out.push_back(s == 1.0 ? crop_top_left(r, oh, ow)
                             : resize_bicubic(r, oh, ow));
    }
  }
  return out;
}

// --- patch sampling ------------------------------------------------------------

template <typename T>
struct PatchPair {
  Tensor<T> y;  // degraded, packed, 1 x 4 x p x p, 0-255 domain
  Tensor<T> x;  // clean, same window
  PackOrigin origin = PackOrigin::PixelPolyphase;
  int qf = 0;
};

enum class SampleMode { Grid, Random };

namespace detail {
template <typename T>
PackedQuad<T> pack_image(const GrayImage& img, PackOrigin domain) {
  return domain == PackOrigin::PixelPolyphase ? polyphase_pack<T>(img)
                                              : dwt_pack<T>(img);
}

template <typename T>
Tensor<T> window4(const Tensor<T>& t, int i0, int j0, int p) {
  const Shape4 s = t.shape();
  Tensor<T> out({1, 4, p, p});
  for (int c = 0; c < 4; ++c) {
    const T* src = t.plane(0, c);
    T* dst = out.plane(0, c);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        dst[i * p + j] = src[(i0 + i) * s.w + (j0 + j)];
  }
  return out;
}
}  // namespace detail

// Packs both images in the requested domain and cuts co-located p x p
// windows. Grid mode walks row-major offsets at the given stride; random mode
// draws `count` offsets from the seeded generator. count <= 0 in grid mode
// means every window.
template <typename T>
std::vector<PatchPair<T>> extract_pairs(const GrayImage& clean,
                                        const GrayImage& degraded,
                                        PackOrigin domain, int count,
                                        SampleMode mode, int stride,
                                        std::uint64_t seed, int qf = 0,
                                        int patch = 31) {
  require(clean.height == degraded.height && clean.width == degraded.width,
          "extract_pairs: clean " + std::to_string(clean.height) + "x" +
              std::to_string(clean.width) + " and degraded " +
              std::to_string(degraded.height) + "x" +
              std::to_string(degraded.width) + " dims differ");
  require(patch >= 1, "extract_pairs: patch size must be >= 1");
  require(stride >= 1 || mode == SampleMode::Random,
          "extract_pairs: grid stride must be >= 1");

  const PackedQuad<T> pc = detail::pack_image<T>(clean, domain);
  const PackedQuad<T> pd = detail::pack_image<T>(degraded, domain);
  const Shape4 s = pc.tensor.shape();
  require(s.h >= patch && s.w >= patch,
          "extract_pairs: packed dims " + std::to_string(s.h) + "x" +
              std::to_string(s.w) + " are smaller than the " +
              std::to_string(patch) + "-pixel patch");

  std::vector<PatchPair<T>> out;
  if (mode == SampleMode::Grid) {
    for (int i = 0; i + patch <= s.h; i += stride)
      for (int j = 0; j + patch <= s.w; j += stride) {
        out.push_back({detail::window4(pd.tensor, i, j, patch),
                       detail::window4(pc.tensor, i, j, patch), domain, qf});
        if (count > 0 && static_cast<int>(out.size()) >= count) return out;
      }
  } else {
    require(count > 0, "extract_pairs: random mode needs a positive count");
    Rng rng(seed);
    for (int k = 0; k < count; ++k) {
      const int i = static_cast<int>(rng.below(s.h - patch + 1));
      const int j = static_cast<int>(rng.below(s.w - patch + 1));
      out.push_back({detail::window4(pd.tensor, i, j, patch),
                     detail::window4(pc.tensor, i, j, patch), domain, qf});
    }
  }
  return out;
}

// --- training loop -------------------------------------------------------------

struct TrainConfig {
  int batch_size = 64;
  double initial_lr = 0.1;
  double lr_decay_factor = 10.0;
  // Iterations between LR drops; 0 derives ceil(pairs/batch)*10, i.e. ten
  // epochs at the actual corpus size.
  std::uint64_t lr_decay_interval = 0;
  std::uint64_t max_iterations = 2000;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int patch_size = 31;
  // Quality factors to train against: one entry = dedicated model, several =
  // blind model, empty = take the distinct values from the manifest.
  std::vector<int> qfs;
  std::uint64_t seed = 1;
  std::size_t max_patches = 2000;      // training-patch cap, 0 = unlimited
  std::size_t max_val_patches = 256;   // validation-patch cap, 0 = unlimited
  std::uint64_t val_interval = 100;    // iterations between validation rows
  double input_scale = 1.0 / 255.0;

  void validate() const {
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(initial_lr > 0 && lr_decay_factor > 0,
            "TrainConfig: learning-rate fields must be positive");
    require(momentum >= 0 && weight_decay >= 0,
            "TrainConfig: momentum and weight_decay must be >= 0");
    require(patch_size >= 3 && patch_size % 2 == 1,
            "TrainConfig: patch_size must be odd and >= 3, got " +
                std::to_string(patch_size));
    require(val_interval >= 1, "TrainConfig: val_interval must be >= 1");
    require(input_scale > 0, "TrainConfig: input_scale must be positive");
    for (int q : qfs)
      require(q >= 1 && q <= 100,
              "TrainConfig: qf must be in [1,100], got " + std::to_string(q));
  }
};

// LR schedule as a pure function of the 0-based iteration counter.
inline double schedule_lr(double initial, double factor,
                          std::uint64_t interval, std::uint64_t t) {
  return initial / std::pow(factor, static_cast<double>(t / interval));
}

struct TrainResult {
  std::uint64_t iterations_run = 0;
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;
  double baseline_val_psnr = 0;  // degraded-vs-clean PSNR on the val patches
  double best_val_psnr = 0;
  std::uint64_t best_iteration = 0;
  double final_val_psnr = 0;
  double first_window_loss = 0;  // mean of the first min(100, n) losses
  double last_window_loss = 0;   // mean of the last  min(100, n) losses
  bool aborted_non_finite = false;
};

namespace detail {

// Mean squared error between estimate (y + unscaled residual) and clean over
// a patch list, evaluated in batches; returns PSNR in the 0-255 domain.
template <typename T>
double validate_patches(const ModelParameters<T>& model,
                        const std::vector<PatchPair<T>>& pairs,
                        int batch_size) {
  require(!pairs.empty(), "validate_patches: empty patch list");
  const Shape4 ps = pairs[0].y.shape();
  const T s = static_cast<T>(model.input_scale);
  double err = 0;
  std::size_t done = 0;
  while (done < pairs.size()) {
    const int bs =
        static_cast<int>(std::min<std::size_t>(batch_size, pairs.size() - done));
    Tensor<T> y({bs, ps.c, ps.h, ps.w});
    for (int b = 0; b < bs; ++b) {
      const T* src = pairs[done + b].y.data();
      T* dst = y.data() + static_cast<std::size_t>(b) * pairs[done + b].y.size();
      for (std::size_t i = 0; i < pairs[done + b].y.size(); ++i)
        dst[i] = src[i] * s;
    }
    const Tensor<T> f = forward_network(model, y);
    for (int b = 0; b < bs; ++b) {
      const std::size_t n = pairs[done + b].x.size();
      const T* fp = f.data() + static_cast<std::size_t>(b) * n;
      const T* yp = pairs[done + b].y.data();
      const T* xp = pairs[done + b].x.data();
      double p0 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double est = static_cast<double>(yp[i]) +
                           static_cast<double>(fp[i]) / static_cast<double>(s);
        const double d = est - static_cast<double>(xp[i]);
        p0 += d * d;
      }
      err += p0;
    }
    done += bs;
  }
  const double n_total =
      static_cast<double>(pairs.size()) * pairs[0].x.size();
  const double mse = err / n_total;
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

template <typename T>
double patchset_baseline_psnr(const std::vector<PatchPair<T>>& pairs) {
  double err = 0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    const T* yp = p.y.data();
    const T* xp = p.x.data();
    for (std::size_t i = 0; i < p.y.size(); ++i) {
      const double d = static_cast<double>(yp[i]) - static_cast<double>(xp[i]);
      err += d * d;
    }
    count += p.y.size();
  }
  const double mse = err / static_cast<double>(count);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// Keep at most `cap` items, every k-th in order (deterministic, spread out).
template <typename V>
void thin_to(std::vector<V>& v, std::size_t cap) {
  if (cap == 0 || v.size() <= cap) return;
  std::vector<V> kept;
  kept.reserve(cap);
  const double step = static_cast<double>(v.size()) / static_cast<double>(cap);
  for (std::size_t k = 0; k < cap; ++k)
    kept.push_back(std::move(v[static_cast<std::size_t>(k * step)]));
  v = std::move(kept);
}

inline std::string format_log_row(std::uint64_t iter, double loss, double lr,
                                  double val_psnr, bool has_val) {
  char buf[128];
  if (has_val)
    std::snprintf(buf, sizeof buf, "%llu\t%.10g\t%.10g\t%.6f",
                  static_cast<unsigned long long>(iter), loss, lr, val_psnr);
  else
    std::snprintf(buf, sizeof buf, "%llu\t%.10g\t%.10g\t-",
                  static_cast<unsigned long long>(iter), loss, lr);
  return buf;
}

}  // namespace detail

// Train/validation split of a manifest: every 7th entry starting at index 3
// is held out (the stride is coprime to common qf round-robin cycle lengths,
// so held-out entries cover the qf mix). Tiny manifests fall back to the
// last entry as validation.
inline void split_manifest(const std::vector<PairEntry>& manifest,
                           std::vector<PairEntry>& train,
                           std::vector<PairEntry>& val) {
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (i % 7 == 3) val.push_back(manifest[i]);
    else train.push_back(manifest[i]);
  }
  if (val.empty() && !manifest.empty()) val.push_back(manifest.back());
  if (train.empty()) train = manifest;
}

// Trains one branch from a pair manifest. Clean train images are augmented
// and re-degraded in memory at the configured quality factors (round-robin
// across variants, so every qf appears each pass); validation patches come
// straight from the manifest's files. Writes the best-validation and final
// checkpoints and streams one `iter<TAB>loss<TAB>lr<TAB>val_psnr` row per
// iteration (val_psnr is "-" between validation points).
template <typename T>
TrainResult train_branch(const std::vector<PairEntry>& manifest, Branch branch,
                         const NetworkConfig& netcfg, const TrainConfig& cfg,
                         const std::string& checkpoint_final,
                         const std::string& checkpoint_best,
                         std::ostream& log) {
  require(!manifest.empty(), "train_branch: empty manifest");
  netcfg.validate();
  cfg.validate();
  const PackOrigin domain = branch_domain(branch);

  // Resolve the qf list.
  std::vector<int> qfs = cfg.qfs;
  if (qfs.empty())
    for (const auto& e : manifest) qfs.push_back(e.qf);
  std::sort(qfs.begin(), qfs.end());
  qfs.erase(std::unique(qfs.begin(), qfs.end()), qfs.end());
  for (int q : qfs)
    require(q >= 1 && q <= 100,
            "train_branch: manifest qf out of range: " + std::to_string(q));
  const bool blind = qfs.size() > 1;
  if (blind)
    for (int q : qfs) {
      const bool present = std::any_of(
          manifest.begin(), manifest.end(),
          [q](const PairEntry& e) { return e.qf == q; });
      require(present, "train_branch: blind qf list includes " +
                           std::to_string(q) +
                           " but the manifest has no pairs at that qf");
    }

  std::vector<PairEntry> train_entries, val_entries;
  split_manifest(manifest, train_entries, val_entries);
  if (!blind) {
    // Dedicated model: validation must measure the target qf.
    std::vector<PairEntry> filtered;
    for (const auto& e : val_entries)
      if (e.qf == qfs[0]) filtered.push_back(e);
    if (filtered.empty())
      for (const auto& e : manifest)
        if (e.qf == qfs[0]) { filtered.push_back(e); break; }
    require(!filtered.empty(),
            "train_branch: no manifest pairs at the dedicated qf " +
                std::to_string(qfs[0]));
    val_entries = std::move(filtered);
  }

  // Training patches: augment each clean image, degrade the variants in
  // memory (round-robin over the qf list), grid-cut everything.
  std::map<int, std::vector<PatchPair<T>>> by_qf;
  std::size_t variant_counter = 0;
  for (const auto& entry : train_entries) {
    const GrayImage clean = read_image(entry.clean_path);
    for (GrayImage& variant : augment(clean)) {
      const int qf = qfs[variant_counter++ % qfs.size()];
      const GrayImage degraded = degrade(variant, build_quant_table(qf));
      auto pairs = extract_pairs<T>(variant, degraded, domain, 0,
                                    SampleMode::Grid, cfg.patch_size, 0, qf,
                                    cfg.patch_size);
      auto& bucket = by_qf[qf];
      std::move(pairs.begin(), pairs.end(), std::back_inserter(bucket));
    }
  }
  // Interleave the per-qf buckets (each pre-shuffled) so a truncation keeps
  // every qf represented, then cap.
  std::vector<PatchPair<T>> train_pairs;
  {
    Rng mix(cfg.seed ^ 0xA5A5A5A5ULL);
    std::vector<std::vector<PatchPair<T>>*> buckets;
    for (auto& [qf, bucket] : by_qf) {
      std::vector<std::size_t> order(bucket.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      mix.shuffle(order);
      std::vector<PatchPair<T>> shuffled;
      shuffled.reserve(bucket.size());
      for (std::size_t i : order) shuffled.push_back(std::move(bucket[i]));
      bucket = std::move(shuffled);
      buckets.push_back(&bucket);
    }
    for (std::size_t k = 0; !buckets.empty(); ++k) {
      bool any = false;
      for (auto* b : buckets)
        if (k < b->size()) {
          train_pairs.push_back(std::move((*b)[k]));
          any = true;
        }
      if (!any) break;
    }
    detail::thin_to(train_pairs, cfg.max_patches);
  }
  require(!train_pairs.empty(),
          "train_branch: no training patches survived augmentation");

  // Validation patches from the manifest's own files.
  std::vector<PatchPair<T>> val_pairs;
  for (const auto& entry : val_entries) {
    const GrayImage clean = crop_even(read_image(entry.clean_path));
    const GrayImage degraded = crop_even(read_image(entry.degraded_path));
    auto pairs = extract_pairs<T>(clean, degraded, domain, 0, SampleMode::Grid,
                                  cfg.patch_size, 0, entry.qf, cfg.patch_size);
    std::move(pairs.begin(), pairs.end(), std::back_inserter(val_pairs));
  }
  detail::thin_to(val_pairs, cfg.max_val_patches);
  require(!val_pairs.empty(), "train_branch: no validation patches");

  TrainResult result;
  result.train_patches = train_pairs.size();
  result.val_patches = val_pairs.size();
  result.baseline_val_psnr = detail::patchset_baseline_psnr(val_pairs);

  const std::uint64_t iters_per_epoch =
      (train_pairs.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t decay_interval =
      cfg.lr_decay_interval ? cfg.lr_decay_interval : iters_per_epoch * 10;

  ModelParameters<T> model = init_model<T>(
      netcfg, branch, blind ? kBlindQf : qfs[0], cfg.seed, cfg.input_scale);
  OptimizerState<T> opt;
  opt.momentum = static_cast<T>(cfg.momentum);
  opt.weight_decay = static_cast<T>(cfg.weight_decay);

  double best = detail::validate_patches(model, val_pairs, cfg.batch_size);
  result.best_val_psnr = best;
  result.best_iteration = 0;
  result.final_val_psnr = best;
  save_checkpoint(model, checkpoint_best);
  ModelParameters<T> last_good = model;

  const Shape4 ps = train_pairs[0].y.shape();
  const T scale = static_cast<T>(cfg.input_scale);
  std::vector<std::size_t> order(train_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.max_iterations));
  std::uint64_t epoch = 0;
  std::size_t cursor = 0;
  Rng shuffler(cfg.seed + 0x9E3779B97F4A7C15ULL);
  shuffler.shuffle(order);

  for (std::uint64_t t = 0; t < cfg.max_iterations; ++t) {
    if (cursor >= order.size()) {
      // Full pass done: fresh permutation from a counter-derived seed.
      ++epoch;
      shuffler = Rng(cfg.seed + 0x9E3779B97F4A7C15ULL * (epoch + 1));
      shuffler.shuffle(order);
      cursor = 0;
    }
    const int bs = static_cast<int>(
        std::min<std::size_t>(cfg.batch_size, order.size() - cursor));
    PackedBatch<T> batch{Tensor<T>({bs, ps.c, ps.h, ps.w}),
                         Tensor<T>({bs, ps.c, ps.h, ps.w}), domain};
    for (int b = 0; b < bs; ++b) {
      const PatchPair<T>& p = train_pairs[order[cursor + b]];
      T* yd = batch.degraded.data() + static_cast<std::size_t>(b) * p.y.size();
      T* xd = batch.clean.data() + static_cast<std::size_t>(b) * p.x.size();
      const T* ys = p.y.data();
      const T* xs = p.x.data();
      for (std::size_t i = 0; i < p.y.size(); ++i) {
        yd[i] = ys[i] * scale;
        xd[i] = xs[i] * scale;
      }
    }
    cursor += bs;

    const double lr = schedule_lr(cfg.initial_lr, cfg.lr_decay_factor,
                                  decay_interval, t);
    opt.learning_rate = static_cast<T>(lr);

    double loss = 0;
    bool bad = false;
    // The pre-step loss vouches for the parameters at entry, not for the
    // updated ones (a step can blow up while its own loss is still finite),
    // so the rollback anchor is the entry state of the last finite step.
    ModelParameters<T> entry = model;
    try {
      loss = branch_train_step(model, opt, batch);
      if (!std::isfinite(loss)) bad = true;
    } catch (const std::runtime_error&) {
      bad = true;  // non-finite gradients rejected by the optimizer
    }
    if (bad) {
      model = last_good;
      result.aborted_non_finite = true;
      log << "# aborted: non-finite loss at iteration " << (t + 1) << "\n";
      break;
    }
    last_good = std::move(entry);
    losses.push_back(loss);
    result.iterations_run = t + 1;

    const bool do_val =
        ((t + 1) % cfg.val_interval == 0) || (t + 1 == cfg.max_iterations);
    double val = 0;
    if (do_val) {
      val = detail::validate_patches(model, val_pairs, cfg.batch_size);
      result.final_val_psnr = val;
      if (val > best) {
        best = val;
        result.best_val_psnr = val;
        result.best_iteration = t + 1;
        save_checkpoint(model, checkpoint_best);
      }
    }
    log << detail::format_log_row(t + 1, loss, lr, val, do_val) << "\n";
  }

  save_checkpoint(model, checkpoint_final);
  if (!losses.empty()) {
    const std::size_t win = std::min<std::size_t>(100, losses.size());
    double a = 0, b = 0;
    for (std::size_t i = 0; i < win; ++i) {
      a += losses[i];
      b += losses[losses.size() - win + i];
    }
    result.first_window_loss = a / static_cast<double>(win);
    result.last_window_loss = b / static_cast<double>(win);
  }
  return result;
}

// --- corpus evaluation ----------------------------------------------------------

struct EvalRow {
  std::string image;  // clean-file stem
  int qf = 0;
  MetricsReport jpeg, pixel, wavelet, fused;
};

struct CorpusEval {
  std::vector<EvalRow> rows;
};

struct MethodMeans {
  MetricsReport jpeg, pixel, wavelet, fused;
  int count = 0;
};

inline MethodMeans corpus_means(const CorpusEval& eval, int qf = -1) {
  MethodMeans m;
  auto add = [](MetricsReport& acc, const MetricsReport& r) {
    acc.psnr += r.psnr;
    acc.ssim += r.ssim;
    acc.psnr_b += r.psnr_b;
    acc.elapsed += r.elapsed;
  };
  for (const EvalRow& row : eval.rows) {
    if (qf >= 0 && row.qf != qf) continue;
    add(m.jpeg, row.jpeg);
    add(m.pixel, row.pixel);
    add(m.wavelet, row.wavelet);
    add(m.fused, row.fused);
    ++m.count;
  }
  if (m.count) {
    for (MetricsReport* r : {&m.jpeg, &m.pixel, &m.wavelet, &m.fused}) {
      r->psnr /= m.count;
      r->ssim /= m.count;
      r->psnr_b /= m.count;
      r->elapsed /= m.count;
    }
  }
  return m;
}

namespace detail {
inline std::string path_stem(const std::string& path) {
  const std::size_t slash = path.find_last_of("/\\");
  const std::size_t start = slash == std::string::npos ? 0 : slash + 1;
  const std::size_t dot = path.find_last_of('.');
  return path.substr(start,
                     dot == std::string::npos || dot < start ? std::string::npos
                                                             : dot - start);
}

inline double seconds_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}
}  // namespace detail

// Scores every manifest pair: the JPEG input, each branch alone, and the
// fusion, with wall-clock decode seconds per method (the fused time covers
// both branches plus the averaging). Branch estimates are clamped before
// scoring, matching what saving them as images would produce.
template <typename TP, typename TW>
CorpusEval evaluate_corpus(const ModelParameters<TP>& pixel_model,
                           const ModelParameters<TW>& wavelet_model,
                           const std::vector<PairEntry>& manifest) {
  require(!manifest.empty(), "evaluate_corpus: empty manifest");
  CorpusEval eval;
  for (const PairEntry& entry : manifest) {
    const GrayImage clean = crop_even(read_image(entry.clean_path));
    const GrayImage degraded = crop_even(read_image(entry.degraded_path));

    EvalRow row;
    row.image = detail::path_stem(entry.clean_path);
    row.qf = entry.qf;

    row.jpeg = {psnr(clean, degraded), ssim(clean, degraded),
                psnr_b(clean, degraded), 0.0};

    auto t0 = std::chrono::steady_clock::now();
    PackedQuad<TP> pp = polyphase_pack<TP>(degraded);
    pp.tensor = forward_residual(pixel_model, pp.tensor).estimate;
    GrayImage pixel_est = clamp_image(polyphase_unpack(pp));
    const double t_pixel = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    PackedQuad<TW> wp = dwt_pack<TW>(degraded);
    wp.tensor = forward_residual(wavelet_model, wp.tensor).estimate;
    GrayImage wavelet_est = clamp_image(dwt_unpack(wp));
    const double t_wavelet = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    SoftDecodeResult fused = soft_decode(pixel_model, wavelet_model, degraded);
    const double t_fused = detail::seconds_since(t0);

    row.pixel = {psnr(clean, pixel_est), ssim(clean, pixel_est),
                 psnr_b(clean, pixel_est), t_pixel};
    row.wavelet = {psnr(clean, wavelet_est), ssim(clean, wavelet_est),
                   psnr_b(clean, wavelet_est), t_wavelet};
    row.fused = {psnr(clean, fused.fused), ssim(clean, fused.fused),
                 psnr_b(clean, fused.fused), t_fused};
    eval.rows.push_back(std::move(row));
  }
  return eval;
}

// Per-image TSV: image, qf, method, psnr, ssim, psnr_b, seconds.
inline std::string format_eval_report(const CorpusEval& eval) {
  std::string out = "image\tqf\tmethod\tpsnr\tssim\tpsnr_b\tseconds\n";
  char buf[256];
  auto emit = [&](const EvalRow& row, const char* method,
                  const MetricsReport& r) {
    std::snprintf(buf, sizeof buf, "%s\t%d\t%s\t%.4f\t%.4f\t%.4f\t%.6f\n",
                  row.image.c_str(), row.qf, method, r.psnr, r.ssim, r.psnr_b,
                  r.elapsed);
    out += buf;
  };
  for (const EvalRow& row : eval.rows) {
    emit(row, "jpeg", row.jpeg);
    emit(row, "pixel", row.pixel);
    emit(row, "wavelet", row.wavelet);
    emit(row, "fused", row.fused);
  }
  return out;
}

// Mean-per-method TSV grouped by qf — one block per quality factor with the
// four method rows, mirroring the shape of a per-qf results table.
inline std::string format_eval_summary(const CorpusEval& eval) {
  std::vector<int> qfs;
  for (const EvalRow& r : eval.rows) qfs.push_back(r.qf);
  std::sort(qfs.begin(), qfs.end());
  qfs.erase(std::unique(qfs.begin(), qfs.end()), qfs.end());

  std::string out = "qf\tmethod\timages\tpsnr\tssim\tpsnr_b\tseconds\n";
  char buf[256];
  for (int qf : qfs) {
    const MethodMeans m = corpus_means(eval, qf);
    auto emit = [&](const char* method, const MetricsReport& r) {
      std::snprintf(buf, sizeof buf, "%d\t%s\t%d\t%.4f\t%.4f\t%.4f\t%.6f\n",
                    qf, method, m.count, r.psnr, r.ssim, r.psnr_b, r.elapsed);
      out += buf;
    };
    emit("jpeg", m.jpeg);
    emit("pixel", m.pixel);
    emit("wavelet", m.wavelet);
    emit("fused", m.fused);
  }
  return out;
}

}  // namespace sdnet
