#include "real_fft.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <new>

namespace mvp::audio::detail {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  std::lock_guard lock(planner_mutex());
  in_ = fftw_alloc_real(n_);
  out_ = fftw_alloc_complex(n_ / 2 + 1);
  if (in_ == nullptr || out_ == nullptr) throw std::bad_alloc();
  plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), in_, out_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan_);
  fftw_free(in_);
  fftw_free(out_);
}

void RealFft::magnitudes(std::span<double> out) {
  fftw_execute(plan_);
  for (std::size_t k = 0; k < bins(); ++k) out[k] = std::hypot(out_[k][0], out_[k][1]);
}

void hann(std::span<double> w) {
  const double n = static_cast<double>(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  }
}

}  // namespace mvp::audio::detail
