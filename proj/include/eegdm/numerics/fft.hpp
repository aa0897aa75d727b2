#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace eegdm {

namespace detail {

template <class T>
struct FftwApi;

template <>
struct FftwApi<double> {
  using plan = fftw_plan;
  using complex = fftw_complex;
  static void* malloc(std::size_t n) { return fftw_malloc(n); }
  static void free(void* p) { fftw_free(p); }
  static plan r2c(int n, double* in, complex* out) { return fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE); }
  static plan c2r(int n, complex* in, double* out) { return fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE); }
  static plan c2c(int n, complex* in, complex* out, int sign) {
    return fftw_plan_dft_1d(n, in, out, sign, FFTW_ESTIMATE);
  }
  static void exec_r2c(plan p, double* in, complex* out) { fftw_execute_dft_r2c(p, in, out); }
  static void exec_c2r(plan p, complex* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
  static void exec_c2c(plan p, complex* in, complex* out) { fftw_execute_dft(p, in, out); }
  static void destroy(plan p) { fftw_destroy_plan(p); }
};

template <>
struct FftwApi<float> {
  using plan = fftwf_plan;
  using complex = fftwf_complex;
  static void* malloc(std::size_t n) { return fftwf_malloc(n); }
  static void free(void* p) { fftwf_free(p); }
  static plan r2c(int n, float* in, complex* out) { return fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE); }
  static plan c2r(int n, complex* in, float* out) { return fftwf_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE); }
  static plan c2c(int n, complex* in, complex* out, int sign) {
    return fftwf_plan_dft_1d(n, in, out, sign, FFTW_ESTIMATE);
  }
  static void exec_r2c(plan p, float* in, complex* out) { fftwf_execute_dft_r2c(p, in, out); }
  static void exec_c2r(plan p, complex* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
  static void exec_c2c(plan p, complex* in, complex* out) { fftwf_execute_dft(p, in, out); }
  static void destroy(plan p) { fftwf_destroy_plan(p); }
};

// FFTW's planner is not thread-safe; executing an existing plan on new arrays is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <class T>
struct AlignedBuffer {
  explicit AlignedBuffer(std::size_t bytes) : ptr(FftwApi<T>::malloc(bytes)) {
    if (!ptr) throw std::bad_alloc();
  }
  ~AlignedBuffer() { FftwApi<T>::free(ptr); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  void* ptr;
};

}  // namespace detail

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Real-to-half-complex transform of fixed size n (unnormalized, as FFTW).
// Instances are cached per size and shared; execution is reentrant.
template <class T>
class RealFft {
  using Api = detail::FftwApi<T>;

 public:
  static const RealFft& get(std::size_t n) {
    static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard lock(detail::planner_mutex());
    auto& slot = cache[n];
    if (!slot) slot.reset(new RealFft(n));
    return *slot;
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  // Zero-pads `in` to n samples.
  void forward(std::span<const T> in, std::span<std::complex<T>> out) const {
    auto& ws = workspace();
    T* real = static_cast<T*>(ws.real->ptr);
    std::memcpy(real, in.data(), in.size() * sizeof(T));
    std::memset(real + in.size(), 0, (n_ - in.size()) * sizeof(T));
    auto* spec = static_cast<typename Api::complex*>(ws.spec->ptr);
    Api::exec_r2c(fwd_, real, spec);
    std::memcpy(static_cast<void*>(out.data()), spec, bins() * sizeof(std::complex<T>));
  }

  // Writes the first out.size() samples of the unnormalized inverse.
  void inverse(std::span<const std::complex<T>> in, std::span<T> out) const {
    auto& ws = workspace();
    auto* spec = static_cast<typename Api::complex*>(ws.spec->ptr);
    std::memcpy(spec, in.data(), bins() * sizeof(std::complex<T>));
    T* real = static_cast<T*>(ws.real->ptr);
    Api::exec_c2r(inv_, spec, real);
    std::memcpy(out.data(), real, out.size() * sizeof(T));
  }

  ~RealFft() {
    Api::destroy(fwd_);
    Api::destroy(inv_);
  }

 private:
  struct Workspace {
    std::size_t n = 0;
    std::unique_ptr<detail::AlignedBuffer<T>> real;
    std::unique_ptr<detail::AlignedBuffer<T>> spec;
  };

  explicit RealFft(std::size_t n) : n_(n) {
    detail::AlignedBuffer<T> real(n * sizeof(T));
    detail::AlignedBuffer<T> spec((n / 2 + 1) * sizeof(std::complex<T>));
    fwd_ = Api::r2c(static_cast<int>(n), static_cast<T*>(real.ptr), static_cast<typename Api::complex*>(spec.ptr));
    inv_ = Api::c2r(static_cast<int>(n), static_cast<typename Api::complex*>(spec.ptr), static_cast<T*>(real.ptr));
  }

  Workspace& workspace() const {
    thread_local std::map<std::size_t, Workspace> spaces;
    auto& ws = spaces[n_];
    if (!ws.real) {
      ws.n = n_;
      ws.real = std::make_unique<detail::AlignedBuffer<T>>(n_ * sizeof(T));
      ws.spec = std::make_unique<detail::AlignedBuffer<T>>(bins() * sizeof(std::complex<T>));
    }
    return ws;
  }

  std::size_t n_;
  typename Api::plan fwd_{};
  typename Api::plan inv_{};
};

namespace detail {

template <class T>
std::vector<std::complex<T>> complex_transform(std::span<const std::complex<T>> signal, std::size_t length,
                                               int sign) {
  using Api = FftwApi<T>;
  if (signal.empty() || length == 0) throw std::invalid_argument("fft: zero-length input");
  if (length < signal.size()) throw std::invalid_argument("fft: length shorter than signal");
  AlignedBuffer<T> in(length * sizeof(std::complex<T>));
  AlignedBuffer<T> out(length * sizeof(std::complex<T>));
  auto* cin = static_cast<typename Api::complex*>(in.ptr);
  auto* cout = static_cast<typename Api::complex*>(out.ptr);
  typename Api::plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = Api::c2c(static_cast<int>(length), cin, cout, sign);
  }
  std::memset(in.ptr, 0, length * sizeof(std::complex<T>));
  std::memcpy(in.ptr, signal.data(), signal.size() * sizeof(std::complex<T>));
  Api::exec_c2c(plan, cin, cout);
  {
    std::lock_guard lock(planner_mutex());
    Api::destroy(plan);
  }
  std::vector<std::complex<T>> result(length);
  std::memcpy(result.data(), out.ptr, length * sizeof(std::complex<T>));
  return result;
}

}  // namespace detail

// Discrete Fourier transform of `signal` zero-padded to `length`.
template <class T>
std::vector<std::complex<T>> fft_forward(std::span<const std::complex<T>> signal, std::size_t length) {
  return detail::complex_transform<T>(signal, length, FFTW_FORWARD);
}

template <class T>
std::vector<std::complex<T>> fft_forward(std::span<const std::complex<T>> signal) {
  return fft_forward<T>(signal, signal.size());
}

// Normalized inverse: fft_inverse(fft_forward(x)) == x.
template <class T>
std::vector<std::complex<T>> fft_inverse(std::span<const std::complex<T>> spectrum) {
  auto out = detail::complex_transform<T>(spectrum, spectrum.size(), FFTW_BACKWARD);
  const T scale = T(1) / static_cast<T>(spectrum.size());
  for (auto& v : out) v *= scale;
  return out;
}

}  // namespace eegdm
