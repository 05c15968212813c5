#pragma once

// Independent reference implementations used as test oracles. They work in
// long double with plain loops and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <span>
#include <cstddef>
#include <vector>

#include "iml/data.hpp"
#include "iml/rng.hpp"
#include "iml/tensor.hpp"

namespace oracle {

using Real = long double;

inline std::vector<Real> softmax(const std::vector<double>& v, Real t = 1.0L) {
  Real m = v.front();
  for (double x : v) m = std::max<Real>(m, x);
  std::vector<Real> e;
  Real s = 0;
  for (double x : v) {
    e.push_back(std::exp((x - m) / t));
    s += e.back();
  }
  for (auto& x : e) x /= s;
  return e;
}

inline Real logsumexp(const std::vector<double>& v) {
  Real m = v.front();
  for (double x : v) m = std::max<Real>(m, x);
  Real s = 0;
  for (double x : v) s += std::exp(static_cast<Real>(x) - m);
  return m + std::log(s);
}

inline Real kl(const std::vector<Real>& p, const std::vector<Real>& q) {
  Real s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline Real sqdist(std::span<const double> a, std::span<const double> b) {
  Real s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const Real d = static_cast<Real>(a[j]) - b[j];
    s += d * d;
  }
  return s;
}

// Discriminant row of z against anchors: softmax(-||z - c_k||^2 / T).
inline std::vector<Real> discriminant(std::span<const double> z, const iml::Tensor& anchors, Real t) {
  std::vector<double> logits;
  for (std::size_t k = 0; k < anchors.rows(); ++k) logits.push_back(static_cast<double>(-sqdist(z, anchors.row(k))));
  return softmax(logits, t);
}

// Forward pass of an MLP given as [W0, b0, W1, b1, ...], relu on hidden layers.
inline std::vector<Real> mlp(std::span<const iml::Tensor> params, std::span<const double> x) {
  std::vector<Real> h(x.begin(), x.end());
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& w = params[2 * l];
    const auto& b = params[2 * l + 1];
    std::vector<Real> out(w.cols());
    for (std::size_t o = 0; o < w.cols(); ++o) {
      Real s = b[o];
      for (std::size_t i = 0; i < w.rows(); ++i) s += h[i] * w(i, o);
      out[o] = (l + 1 < layers && s < 0) ? 0 : s;
    }
    h = std::move(out);
  }
  return h;
}

}  // namespace oracle

namespace fixtures {

inline iml::Tensor random_matrix(std::size_t r, std::size_t c, iml::Rng& rng, double lo = -3.0, double hi = 3.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return iml::Tensor::matrix(r, c, std::move(v));
}

// Small Gaussian-cluster dataset with `classes` classes and `per_class` rows each.
inline iml::Dataset clusters(std::size_t classes, std::size_t per_class, std::size_t dim, double std_dev,
                             std::uint64_t seed) {
  iml::Rng rng(seed);
  std::vector<double> data;
  std::vector<iml::ClassId> labels;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> center(dim);
    for (auto& x : center) x = rng.uniform(-1.0, 1.0);
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t j = 0; j < dim; ++j) data.push_back(center[j] + std_dev * rng.normal());
      labels.push_back(static_cast<iml::ClassId>(c));
    }
  }
  iml::Tensor features = iml::Tensor::matrix(labels.size(), dim, std::move(data));
  return iml::Dataset::from_rows(std::move(features), std::move(labels), "clusters");
}

}  // namespace fixtures
