#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace fpalign {

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Real-input FFT of a fixed size, returning magnitudes of bins [0, n/2].
/// Instances are not shareable across threads; construction is thread-safe.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }
  /// `in` must hold size() samples; `out` receives bins() magnitudes.
  void magnitude(std::span<const double> in, std::span<float> out);

 private:
  struct Plan;
  std::size_t n_;
  std::unique_ptr<Plan> plan_;
};

/// Full linear convolution (length a + b - 1) via FFT.
std::vector<double> fft_convolve(std::span<const float> a, std::span<const float> b);

}  // namespace fpalign
