#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/fft.hpp"
#include "eegdm/numerics/module.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/parallel.hpp"
#include "eegdm/ssm/s4d.hpp"

namespace eegdm {

// H independent S4D systems stored as batched tensors so a whole layer's
// kernels materialize in one pass. Complex values use a trailing extent of 2.
// Trainable: rho (H, N), c (H, N, 2), log_dt (H), d (H). Fixed: a_imag, b.
template <class T>
struct S4DBank {
  Var<T> rho, c, log_dt, d;
  Tensor<T> a_imag, b;
  RateRatio rate;

  std::size_t channels() const { return rho.dim(0); }
  std::size_t state_dim() const { return rho.dim(1); }

  static S4DBank init(std::size_t channels, std::size_t state_dim, Rng& rng) {
    S4DBank bank;
    Tensor<T> rho(Shape{channels, state_dim}), c(Shape{channels, state_dim, 2}), log_dt(Shape{channels}),
        d(Shape{channels});
    bank.a_imag = Tensor<T>(Shape{channels, state_dim});
    bank.b = Tensor<T>(Shape{channels, state_dim, 2});
    for (std::size_t h = 0; h < channels; ++h) {
      Rng ch_rng = rng.split(h);
      const auto layer = init_diag_lin(state_dim, ch_rng);
      bank.set_channel(h, layer, rho, c, log_dt, d);
    }
    bank.rho = Var<T>::parameter(std::move(rho));
    bank.c = Var<T>::parameter(std::move(c));
    bank.log_dt = Var<T>::parameter(std::move(log_dt));
    bank.d = Var<T>::parameter(std::move(d));
    return bank;
  }

  S4DLayer layer(std::size_t h) const {
    S4DLayer out;
    const std::size_t n = state_dim();
    out.rho.resize(n);
    out.a_imag.resize(n);
    out.b.resize(n);
    out.c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.rho[i] = rho.value()[h * n + i];
      out.a_imag[i] = a_imag[h * n + i];
      out.b[i] = {b[(h * n + i) * 2], b[(h * n + i) * 2 + 1]};
      out.c[i] = {c.value()[(h * n + i) * 2], c.value()[(h * n + i) * 2 + 1]};
    }
    out.d = d.value()[h];
    out.log_dt = log_dt.value()[h];
    out.rate = rate;
    return out;
  }

  void set_layer(std::size_t h, const S4DLayer& layer) {
    set_channel(h, layer, rho.mutable_value(), c.mutable_value(), log_dt.mutable_value(), d.mutable_value());
  }

  ParamList<T> parameters() const { return {{"rho", rho}, {"c", c}, {"log_dt", log_dt}, {"d", d}}; }

 private:
  void set_channel(std::size_t h, const S4DLayer& layer, Tensor<T>& rho_t, Tensor<T>& c_t, Tensor<T>& dt_t,
                   Tensor<T>& d_t) {
    const std::size_t n = layer.state_dim();
    for (std::size_t i = 0; i < n; ++i) {
      rho_t[h * n + i] = static_cast<T>(layer.rho[i]);
      a_imag[h * n + i] = static_cast<T>(layer.a_imag[i]);
      b[(h * n + i) * 2] = static_cast<T>(layer.b[i].real());
      b[(h * n + i) * 2 + 1] = static_cast<T>(layer.b[i].imag());
      c_t[(h * n + i) * 2] = static_cast<T>(layer.c[i].real());
      c_t[(h * n + i) * 2 + 1] = static_cast<T>(layer.c[i].imag());
    }
    dt_t[h] = static_cast<T>(layer.log_dt);
    d_t[h] = static_cast<T>(layer.d);
  }
};

namespace ops {

// Real kernels (H, L) of a bank; computed in double. Differentiable with
// respect to rho, c and log_dt.
template <class T>
Var<T> s4d_kernel(const S4DBank<T>& bank, std::size_t length) {
  const std::size_t hn = bank.channels(), n = bank.state_dim();
  const double rate_scale = static_cast<double>(bank.rate.den) / static_cast<double>(bank.rate.num);
  Tensor<T> k(Shape{hn, length});
  const auto& rho = bank.rho.value();
  const auto& cv = bank.c.value();
  const auto& dtv = bank.log_dt.value();
  const Tensor<T> a_imag = bank.a_imag, b = bank.b;
  auto state = [=, &rho, &cv, &dtv](std::size_t h, std::size_t i) {
    const std::size_t idx = h * n + i;
    const cplx a(-std::exp(static_cast<double>(rho[idx])), static_cast<double>(a_imag[idx]));
    const double dt = std::exp(static_cast<double>(dtv[h])) * rate_scale;
    const cplx bb(b[idx * 2], b[idx * 2 + 1]);
    const cplx cc(cv[idx * 2], cv[idx * 2 + 1]);
    return std::tuple{a, dt, bb, cc};
  };
  parallel_for(hn, [&](std::size_t h) {
    std::vector<double> acc(length, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto [a, dt, bb, cc] = state(h, i);
      const cplx z = std::exp(dt * a);
      cplx w = cc * (z - 1.0) / a * bb;
      for (std::size_t j = 0; j < length; ++j) {
        acc[j] += w.real();
        w *= z;
      }
    }
    for (std::size_t j = 0; j < length; ++j) k[h * length + j] = static_cast<T>(acc[j]);
  });
  return record<T>(std::move(k), {bank.rho, bank.c, bank.log_dt},
                   [hn, n, length, rate_scale, a_imag, b](Node<T>& self) {
                     auto* g_rho = self.parent_grad(0);
                     auto* g_c = self.parent_grad(1);
                     auto* g_dt = self.parent_grad(2);
                     const auto& rho = self.parent_value(0);
                     const auto& cv = self.parent_value(1);
                     const auto& dtv = self.parent_value(2);
                     parallel_for(hn, [&](std::size_t h) {
                       const double dt = std::exp(static_cast<double>(dtv[h])) * rate_scale;
                       const T* g = self.grad.data() + h * length;
                       double d_dt = 0.0;
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t idx = h * n + i;
                         const double er = std::exp(static_cast<double>(rho[idx]));
                         const cplx a(-er, static_cast<double>(a_imag[idx]));
                         const cplx bb(b[idx * 2], b[idx * 2 + 1]);
                         const cplx cc(cv[idx * 2], cv[idx * 2 + 1]);
                         const cplx z = std::exp(dt * a);
                         // S0 = sum_j g_j z^j, S1 = sum_j g_j j z^j
                         cplx s0(0.0), s1(0.0), zj(1.0);
                         for (std::size_t j = 0; j < length; ++j) {
                           const cplx t = static_cast<double>(g[j]) * zj;
                           s0 += t;
                           s1 += static_cast<double>(j) * t;
                           zj *= z;
                         }
                         const cplx b_bar = (z - 1.0) / a * bb;
                         if (g_c) {
                           const cplx q = b_bar * s0;
                           (*g_c)[idx * 2] += static_cast<T>(q.real());
                           (*g_c)[idx * 2 + 1] += static_cast<T>(-q.imag());
                         }
                         if (g_dt) d_dt += (cc * bb * z * s0 + cc * b_bar * a * s1).real();
                         if (g_rho) {
                           const cplx db = (dt * z * a - (z - 1.0)) / (a * a) * bb;
                           const double d_ar = (cc * db * s0 + cc * b_bar * dt * s1).real();
                           (*g_rho)[idx] += static_cast<T>(-er * d_ar);
                         }
                       }
                       if (g_dt) (*g_dt)[h] += static_cast<T>(dt * d_dt);
                     });
                   });
}

// Two-sided convolution of x (B, H, L) with a causal kernel kf (H, L) and an
// anti-causal kernel kb (H, L): y[t] = sum_j kf[j] x[t-j] + sum_j kb[j] x[t+j].
template <class T>
Var<T> bidirectional_conv(const Var<T>& x, const Var<T>& kf, const Var<T>& kb) {
  detail::require(x.value().rank() == 3, "bidirectional_conv", "input must be (B, H, L)");
  const std::size_t batch = x.dim(0), hn = x.dim(1), len = x.dim(2);
  detail::require(kf.shape() == Shape({hn, len}) && kb.shape() == Shape({hn, len}), "bidirectional_conv",
                  "kernels must be (H, L) matching the input");
  const std::size_t n = next_pow2(2 * len);
  auto& fft = RealFft<T>::get(n);
  const std::size_t bins = fft.bins();
  using ct = std::complex<T>;
  auto kspec = std::make_shared<std::vector<ct>>(hn * bins);
  auto xspec = std::make_shared<std::vector<ct>>(batch * hn * bins);
  Tensor<T> y(x.shape());
  const T inv_n = T(1) / static_cast<T>(n);
  parallel_for(hn, [&](std::size_t h) {
    std::vector<T> kk(n, T{});
    const T* f = kf.value().data() + h * len;
    const T* bw = kb.value().data() + h * len;
    for (std::size_t j = 0; j < len; ++j) kk[j] = f[j];
    kk[0] += bw[0];
    for (std::size_t j = 1; j < len; ++j) kk[n - j] += bw[j];
    ct* ks = kspec->data() + h * bins;
    fft.forward(kk, std::span<ct>(ks, bins));
    std::vector<ct> prod(bins);
    std::vector<T> out(len);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const std::size_t row = bi * hn + h;
      ct* xs = xspec->data() + row * bins;
      fft.forward(std::span<const T>(x.value().data() + row * len, len), std::span<ct>(xs, bins));
      for (std::size_t q = 0; q < bins; ++q) prod[q] = xs[q] * ks[q];
      fft.inverse(prod, out);
      for (std::size_t t = 0; t < len; ++t) y[row * len + t] = out[t] * inv_n;
    }
  });
  if (!grad_enabled()) {
    kspec.reset();
    xspec.reset();
  }
  return record<T>(std::move(y), {x, kf, kb}, [batch, hn, len, n, bins, kspec, xspec](Node<T>& self) {
    auto& fft = RealFft<T>::get(n);
    auto* gx = self.parent_grad(0);
    auto* gkf = self.parent_grad(1);
    auto* gkb = self.parent_grad(2);
    const T inv_n = T(1) / static_cast<T>(n);
    parallel_for(hn, [&](std::size_t h) {
      const ct* ks = kspec->data() + h * bins;
      std::vector<ct> gs(bins), prod(bins), acc(bins, ct{});
      std::vector<T> out(len);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const std::size_t row = bi * hn + h;
        fft.forward(std::span<const T>(self.grad.data() + row * len, len), gs);
        if (gx) {
          for (std::size_t q = 0; q < bins; ++q) prod[q] = gs[q] * std::conj(ks[q]);
          fft.inverse(prod, out);
          for (std::size_t t = 0; t < len; ++t) (*gx)[row * len + t] += out[t] * inv_n;
        }
        if (gkf || gkb) {
          const ct* xs = xspec->data() + row * bins;
          for (std::size_t q = 0; q < bins; ++q) acc[q] += gs[q] * std::conj(xs[q]);
        }
      }
      if (gkf || gkb) {
        std::vector<T> dkk(n);
        fft.inverse(acc, dkk);
        if (gkf)
          for (std::size_t j = 0; j < len; ++j) (*gkf)[h * len + j] += dkk[j] * inv_n;
        if (gkb) {
          (*gkb)[h * len] += dkk[0] * inv_n;
          for (std::size_t j = 1; j < len; ++j) (*gkb)[h * len + j] += dkk[n - j] * inv_n;
        }
      }
    });
  });
}

}  // namespace ops

// Per-channel bidirectional S4D over (B, H, L): forward bank on x, backward
// bank on reversed x, each with its own D skip term.
template <class T>
class BidirectionalS4D {
 public:
  BidirectionalS4D() = default;
  BidirectionalS4D(std::size_t channels, std::size_t state_dim, Rng& rng)
      : fwd_(S4DBank<T>::init(channels, state_dim, rng)) {
    Rng brng = rng.split(0xb0b);
    bwd_ = S4DBank<T>::init(channels, state_dim, brng);
  }

  std::size_t channels() const { return fwd_.channels(); }
  S4DBank<T>& forward_bank() { return fwd_; }
  S4DBank<T>& backward_bank() { return bwd_; }
  const S4DBank<T>& forward_bank() const { return fwd_; }
  const S4DBank<T>& backward_bank() const { return bwd_; }

  Var<T> operator()(const Var<T>& x) const {
    const std::size_t len = x.dim(2);
    Var<T> kf, kb;
    if (!grad_enabled()) {
      std::tie(kf, kb) = cached_kernels(len);
    } else {
      kf = ops::s4d_kernel(fwd_, len);
      kb = ops::s4d_kernel(bwd_, len);
    }
    auto y = ops::bidirectional_conv(x, kf, kb);
    return ops::add(y, ops::channel_scale(x, ops::add(fwd_.d, bwd_.d)));
  }

  void retarget(const RateRatio& ratio) {
    fwd_.rate = fwd_.rate * ratio;
    bwd_.rate = bwd_.rate * ratio;
  }
  void set_rate(const RateRatio& rate) {
    fwd_.rate = rate;
    bwd_.rate = rate;
  }
  RateRatio rate() const { return fwd_.rate; }

  ParamList<T> parameters() const {
    ParamList<T> out;
    append(out, "fwd.", fwd_.parameters());
    append(out, "bwd.", bwd_.parameters());
    return out;
  }

 private:
  // Kernel reuse for inference; any change of parameters, rate or length
  // invalidates the entry.
  struct Cache {
    std::vector<T> key;
    std::size_t length = 0;
    RateRatio rate;
    Var<T> kf, kb;
  };

  std::vector<T> snapshot() const {
    std::vector<T> key;
    for (const auto* bank : {&fwd_, &bwd_})
      for (const auto& v : {bank->rho, bank->c, bank->log_dt})
        key.insert(key.end(), v.value().values().begin(), v.value().values().end());
    return key;
  }

  std::pair<Var<T>, Var<T>> cached_kernels(std::size_t len) const {
    auto key = snapshot();
    if (!cache_ || cache_->length != len || !(cache_->rate == fwd_.rate) || cache_->key != key) {
      auto fresh = std::make_shared<Cache>();
      fresh->kf = ops::s4d_kernel(fwd_, len);
      fresh->kb = ops::s4d_kernel(bwd_, len);
      fresh->key = std::move(key);
      fresh->length = len;
      fresh->rate = fwd_.rate;
      cache_ = std::move(fresh);
    }
    return {cache_->kf, cache_->kb};
  }

  S4DBank<T> fwd_, bwd_;
  mutable std::shared_ptr<Cache> cache_;
};

}  // namespace eegdm
