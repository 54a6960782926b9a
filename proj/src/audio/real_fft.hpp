#pragma once

#include <fftw3.h>

#include <cstddef>
#include <span>

namespace mvp::audio::detail {

// Owns an FFTW r2c plan and its buffers. FFTW planning is not thread-safe,
// so construction and destruction take a process-wide lock; execute() on
// distinct instances may run concurrently.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  std::span<double> input() { return {in_, n_}; }

  // |X[k]| for k in [0, n/2], written to out (size bins()).
  void magnitudes(std::span<double> out);

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Periodic Hann window.
void hann(std::span<double> w);

}  // namespace mvp::audio::detail
