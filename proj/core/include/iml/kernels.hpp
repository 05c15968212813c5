#pragma once

#include <cstddef>
#include <span>

#include "iml/tensor.hpp"

// Forward kernels on plain tensors. The tape in autodiff.hpp records these
// same kernels, so untaped evaluation and taped evaluation agree bitwise.
namespace iml::kernels {

enum class ElementwiseKind { Add, Sub, Mul, Scale };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);

// D[i,k] = ||z_i - c_k||^2.
Tensor pairwise_sqdist(const Tensor& z, const Tensor& c);

// Max-shifted log-sum-exp of a flat sequence.
double logsumexp(std::span<const double> v);
double logsumexp(const Tensor& v);

// Row-wise reductions over the last axis; result has one entry per row.
Tensor logsumexp_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

// softmax(v / temperature), computed as exp((v_i - max)/T) / sum.
Tensor softmax(const Tensor& v, double temperature);

// Per-row KL(p || q) given log-probabilities of both sides.
Tensor kl_rows(const Tensor& log_p, const Tensor& log_q);

// KL(p || q) in nats for explicit probability vectors, with 0 log 0 = 0.
// Throws std::domain_error if q_i == 0 where p_i > 0.
double kl_div(std::span<const double> p, std::span<const double> q);
double kl_div(const Tensor& p, const Tensor& q);

// r_i = x[i, index[i]].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

double sum(const Tensor& x);
double mean(const Tensor& x);

}  // namespace iml::kernels
