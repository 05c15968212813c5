#include "iml/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "iml/errors.hpp"

namespace iml::kernels {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::size_t row_count(const Tensor& x) { return x.rank() == 2 ? x.rows() : 1; }

Tensor row_result(const Tensor& x) {
  if (x.rank() == 2) return Tensor::zeros({x.rows()});
  return Tensor::zeros({1});
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: operands must be matrices");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  auto o = out.data();
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      double* orow = &o[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  if (kind == ElementwiseKind::Scale) {
    if (b.size() != 1) throw ShapeError("scale: factor must be a scalar");
    return scale(a, b[0]);
  }
  if (b.size() == 1 && a.size() != 1) return elementwise(kind, a, b[0]);
  require_same_shape(a, b, "elementwise");
  Tensor out = a;
  auto o = out.data();
  auto B = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (kind) {
      case ElementwiseKind::Add: o[i] += B[i]; break;
      case ElementwiseKind::Sub: o[i] -= B[i]; break;
      case ElementwiseKind::Mul: o[i] *= B[i]; break;
      case ElementwiseKind::Scale: break;
    }
  }
  return out;
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b) {
  Tensor out = a;
  for (double& v : out.data()) {
    switch (kind) {
      case ElementwiseKind::Add: v += b; break;
      case ElementwiseKind::Sub: v -= b; break;
      case ElementwiseKind::Mul:
      case ElementwiseKind::Scale: v *= b; break;
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Mul, a, b); }
Tensor scale(const Tensor& a, double s) { return elementwise(ElementwiseKind::Scale, a, s); }

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.size() != x.cols()) {
    throw ShapeError("add_bias: bias of " + shape_string(bias.shape()) + " for input " + shape_string(x.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

Tensor pairwise_sqdist(const Tensor& z, const Tensor& c) {
  if (z.rank() != 2 || c.rank() != 2) throw ShapeError("pairwise_sqdist: operands must be matrices");
  if (z.cols() != c.cols()) {
    throw ShapeError("pairwise_sqdist: feature dims differ " + shape_string(z.shape()) + " vs " +
                     shape_string(c.shape()));
  }
  const std::size_t m = z.rows(), k = c.rows(), f = z.cols();
  Tensor out = Tensor::zeros({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    auto zi = z.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      auto cj = c.row(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < f; ++t) {
        const double d = zi[t] - cj[t];
        acc += d * d;
      }
      out(i, j) = acc;
    }
  }
  return out;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double logsumexp(const Tensor& v) { return logsumexp(v.data()); }

Tensor logsumexp_rows(const Tensor& x) {
  Tensor out = row_result(x);
  for (std::size_t i = 0; i < row_count(x); ++i) out[i] = logsumexp(x.row(i));
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < row_count(x); ++i) {
    const double lse = logsumexp(x.row(i));
    for (double& v : out.row(i)) v -= lse;
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < row_count(x); ++i) {
    auto r = out.row(i);
    if (r.empty()) throw std::invalid_argument("softmax: empty row");
    const double m = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - m);
      total += v;
    }
    for (double& v : r) v /= total;
  }
  return out;
}

Tensor softmax(const Tensor& v, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  Tensor out = v;
  for (std::size_t i = 0; i < row_count(v); ++i) {
    auto r = out.row(i);
    if (r.empty()) throw std::invalid_argument("softmax: empty row");
    const double m = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& x : r) {
      x = std::exp((x - m) / temperature);
      total += x;
    }
    for (double& x : r) x /= total;
  }
  return out;
}

Tensor kl_rows(const Tensor& log_p, const Tensor& log_q) {
  require_same_shape(log_p, log_q, "kl_rows");
  Tensor out = row_result(log_p);
  for (std::size_t i = 0; i < row_count(log_p); ++i) {
    auto a = log_p.row(i);
    auto b = log_q.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += std::exp(a[j]) * (a[j] - b[j]);
    out[i] = acc;
  }
  return out;
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ShapeError("kl_div: distributions must have equal, nonzero length");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("kl_div: negative probability");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw std::invalid_argument("kl_div: inputs must each sum to 1");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw std::domain_error("kl_div: q is zero where p is positive");
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

double kl_div(const Tensor& p, const Tensor& q) { return kl_div(p.data(), q.data()); }

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  if (index.size() != row_count(x)) throw ShapeError("pick: one index per row required");
  Tensor out = row_result(x);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.cols()) throw ShapeError("pick: column index out of range");
    out[i] = x.row(i)[index[i]];
  }
  return out;
}

double sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return acc;
}

double mean(const Tensor& x) { return sum(x) / static_cast<double>(x.size()); }

}  // namespace iml::kernels
