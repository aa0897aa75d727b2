#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/random.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

// A trainable tensor with a stable name. `decay` marks whether decoupled
// weight decay applies to it.
template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
  bool decay = true;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
void append(ParamList<T>& out, const std::string& prefix, const ParamList<T>& more) {
  for (const auto& p : more) out.push_back({prefix + p.name, p.var, p.decay});
}

template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    Var<T> v = p.var;
    v.zero_grad();
  }
}

// Copies parameter values between two lists of the same layout.
template <class T>
void copy_values(const ParamList<T>& dst, const ParamList<T>& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("copy_values: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].var.shape() != src[i].var.shape())
      throw std::invalid_argument("copy_values: layout mismatch at " + src[i].name);
    Var<T> v = dst[i].var;
    v.mutable_value() = src[i].var.value();
  }
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for dense and pointwise weights.
template <class T>
Var<T> uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return Var<T>::parameter(std::move(t));
}

template <class T>
Var<T> constant_param(Shape shape, T value) {
  return Var<T>::parameter(Tensor<T>(std::move(shape), value));
}

}  // namespace eegdm
