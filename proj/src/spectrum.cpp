#include "fpalign/spectrum.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "fpalign/error.hpp"

namespace fpalign {

namespace {
// The FFTW planner is not thread-safe; execution on distinct buffers is.
std::mutex g_planner_mutex;
}  // namespace

struct RealFft::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
};

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

RealFft::RealFft(std::size_t n) : n_(n), plan_(std::make_unique<Plan>()) {
  if (n < 2) throw Error(ErrorKind::Parameter, "FFT size must be at least 2");
  std::lock_guard lock(g_planner_mutex);
  plan_->in = fftw_alloc_real(n);
  plan_->out = fftw_alloc_complex(n / 2 + 1);
  plan_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), plan_->in, plan_->out, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(g_planner_mutex);
  fftw_destroy_plan(plan_->plan);
  fftw_free(plan_->in);
  fftw_free(plan_->out);
}

void RealFft::magnitude(std::span<const double> in, std::span<float> out) {
  std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n_), plan_->in);
  fftw_execute(plan_->plan);
  for (std::size_t k = 0; k < bins(); ++k) {
    out[k] = static_cast<float>(std::hypot(plan_->out[k][0], plan_->out[k][1]));
  }
}

std::vector<double> fft_convolve(std::span<const float> a, std::span<const float> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  const std::size_t bins = n / 2 + 1;

  double* x = fftw_alloc_real(n);
  double* y = fftw_alloc_real(n);
  fftw_complex* fx = fftw_alloc_complex(bins);
  fftw_complex* fy = fftw_alloc_complex(bins);
  fftw_plan px, py, inv;
  {
    std::lock_guard lock(g_planner_mutex);
    px = fftw_plan_dft_r2c_1d(static_cast<int>(n), x, fx, FFTW_ESTIMATE);
    py = fftw_plan_dft_r2c_1d(static_cast<int>(n), y, fy, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), fx, x, FFTW_ESTIMATE);
  }
  std::fill(x, x + n, 0.0);
  std::fill(y, y + n, 0.0);
  std::copy(a.begin(), a.end(), x);
  std::copy(b.begin(), b.end(), y);
  fftw_execute(px);
  fftw_execute(py);
  for (std::size_t k = 0; k < bins; ++k) {
    const double re = fx[k][0] * fy[k][0] - fx[k][1] * fy[k][1];
    const double im = fx[k][0] * fy[k][1] + fx[k][1] * fy[k][0];
    fx[k][0] = re;
    fx[k][1] = im;
  }
  fftw_execute(inv);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = x[i] / static_cast<double>(n);
  {
    std::lock_guard lock(g_planner_mutex);
    fftw_destroy_plan(px);
    fftw_destroy_plan(py);
    fftw_destroy_plan(inv);
  }
  fftw_free(x);
  fftw_free(y);
  fftw_free(fx);
  fftw_free(fy);
  return out;
}

}  // namespace fpalign
