#pragma once

// Helpers shared by the unit tests and the acceptance runner: deterministic
// random fills, tensor comparison, and a centered finite-difference gradient
// checker.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "sdnet/rng.hpp"
#include "sdnet/tensor.hpp"

namespace testsup {

// Root of the source tree (for tests/data) — exported by CTest, with a
// fallback to the working directory for manual runs.
inline std::filesystem::path source_root() {
  if (const char* env = std::getenv("SDNET_ROOT")) return env;
  return std::filesystem::current_path();
}

template <typename T>
void fill_uniform(sdnet::Tensor<T>& t, sdnet::Rng& rng, double lo = -1.0,
                  double hi = 1.0) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(lo + (hi - lo) * rng.uniform01());
}

template <typename T>
double max_abs_diff(const sdnet::Tensor<T>& a, const sdnet::Tensor<T>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst,
                     std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return worst;
}

// Relative disagreement between an analytic derivative and its centered
// finite-difference estimate, guarded against both being ~0.
inline double rel_err(double analytic, double numeric) {
  const double scale = std::abs(analytic) + std::abs(numeric);
  if (scale < 1e-10) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

// Worst relative error between `analytic[i]` and the centered difference of
// `loss` along each coordinate of `x`. `loss` must be a pure function of the
// current contents of x.
inline double gradcheck(sdnet::TensorD& x, const double* analytic,
                        const std::function<double()>& loss,
                        double step = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + step;
    const double up = loss();
    x.data()[i] = orig - step;
    const double down = loss();
    x.data()[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * step)));
  }
  return worst;
}

// Same, but perturbing a flat parameter vector instead of a tensor.
inline double gradcheck_vec(std::vector<double>& params, const double* analytic,
                            const std::function<double()>& loss,
                            double step = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + step;
    const double up = loss();
    params[i] = orig - step;
    const double down = loss();
    params[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * step)));
  }
  return worst;
}

}  // namespace testsup
