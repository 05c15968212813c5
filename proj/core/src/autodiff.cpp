#include "iml/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "iml/errors.hpp"
#include "iml/kernels.hpp"

namespace iml {

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Tensor Tape::compute(const Node& node, const Tensor* a, const Tensor* b) {
  namespace k = kernels;
  switch (node.kind) {
    case OpKind::Leaf: return node.value;
    case OpKind::MatMul: return k::matmul(*a, *b);
    case OpKind::Add: return k::add(*a, *b);
    case OpKind::Sub: return k::sub(*a, *b);
    case OpKind::Mul: return k::mul(*a, *b);
    case OpKind::Scale: return k::scale(*a, node.attr);
    case OpKind::AddBias: return k::add_bias(*a, *b);
    case OpKind::Relu: return k::relu(*a);
    case OpKind::Exp: return k::exp(*a);
    case OpKind::PairwiseSqDist: return k::pairwise_sqdist(*a, *b);
    case OpKind::LogSumExpRows: return k::logsumexp_rows(*a);
    case OpKind::LogSoftmaxRows: return k::log_softmax_rows(*a);
    case OpKind::SoftmaxRows: return k::softmax_rows(*a);
    case OpKind::KlRows: return k::kl_rows(*a, *b);
    case OpKind::Pick: return k::pick(*a, node.index);
    case OpKind::Sum: return Tensor::scalar(k::sum(*a));
    case OpKind::Mean: return Tensor::scalar(k::mean(*a));
  }
  throw std::logic_error("unknown op");
}

Tensor Tape::compute(const Node& node, const std::vector<Tensor>& values) {
  const Tensor* a = node.a >= 0 ? &values[node.a] : nullptr;
  const Tensor* b = node.b >= 0 ? &values[node.b] : nullptr;
  return compute(node, a, b);
}

Var record(Tape& tape, OpKind kind, NodeId a, NodeId b, double attr, std::vector<std::size_t> index) {
  Tape::Node n;
  n.kind = kind;
  n.a = a;
  n.b = b;
  n.attr = attr;
  n.index = std::move(index);
  const Tensor* va = a >= 0 ? &tape.nodes_[a].value : nullptr;
  const Tensor* vb = b >= 0 ? &tape.nodes_[b].value : nullptr;
  n.value = Tape::compute(n, va, vb);
  n.requires_grad = (a >= 0 && tape.nodes_[a].requires_grad) || (b >= 0 && tape.nodes_[b].requires_grad);
  tape.nodes_.push_back(std::move(n));
  return Var{&tape, static_cast<NodeId>(tape.nodes_.size() - 1)};
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  for (const auto& n : nodes_) values.push_back(compute(n, values));
  return values;
}

std::vector<bool> Tape::relu_pattern() const {
  std::vector<bool> pattern;
  for (const auto& n : nodes_) {
    if (n.kind != OpKind::Relu) continue;
    for (double v : nodes_[n.a].value.data()) pattern.push_back(v > 0.0);
  }
  return pattern;
}

namespace {

void accumulate(std::vector<Tensor>& adj, std::vector<bool>& has, NodeId id, const Tensor& g) {
  if (!has[id]) {
    adj[id] = g;
    has[id] = true;
    return;
  }
  auto dst = adj[id].data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor transpose(const Tensor& x) {
  Tensor out = Tensor::zeros({x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return out;
}

}  // namespace

Gradients Tape::backward(Var loss, std::span<const Var> wrt) const {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss.id).shape()));
  }
  const auto n_nodes = static_cast<std::size_t>(loss.id) + 1;
  std::vector<Tensor> adj(n_nodes);
  std::vector<bool> has(n_nodes, false);
  adj[loss.id] = Tensor::filled(value(loss.id).shape(), 1.0);
  has[loss.id] = true;

  for (NodeId id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!has[id] || !n.requires_grad || n.kind == OpKind::Leaf) continue;
    const Tensor& g = adj[id];
    const bool ga = n.a >= 0 && nodes_[n.a].requires_grad;
    const bool gb = n.b >= 0 && nodes_[n.b].requires_grad;
    const Tensor* va = n.a >= 0 ? &nodes_[n.a].value : nullptr;
    const Tensor* vb = n.b >= 0 ? &nodes_[n.b].value : nullptr;

    switch (n.kind) {
      case OpKind::Leaf: break;
      case OpKind::MatMul:
        if (ga) accumulate(adj, has, n.a, kernels::matmul(g, transpose(*vb)));
        if (gb) accumulate(adj, has, n.b, kernels::matmul(transpose(*va), g));
        break;
      case OpKind::Add:
      case OpKind::Sub: {
        // Scalar operands receive the summed gradient.
        auto reduce = [&](const Tensor& operand, double sign) {
          if (operand.size() == 1 && g.size() != 1) return Tensor(operand.shape(), {sign * kernels::sum(g)});
          return sign == 1.0 ? g : kernels::scale(g, -1.0);
        };
        if (ga) accumulate(adj, has, n.a, reduce(*va, 1.0));
        if (gb) accumulate(adj, has, n.b, reduce(*vb, n.kind == OpKind::Add ? 1.0 : -1.0));
        break;
      }
      case OpKind::Mul: {
        const bool b_scalar = vb->size() == 1 && va->size() != 1;
        if (ga) accumulate(adj, has, n.a, b_scalar ? kernels::scale(g, (*vb)[0]) : kernels::mul(g, *vb));
        if (gb) {
          if (b_scalar) {
            accumulate(adj, has, n.b, Tensor(vb->shape(), {kernels::sum(kernels::mul(g, *va))}));
          } else {
            accumulate(adj, has, n.b, kernels::mul(g, *va));
          }
        }
        break;
      }
      case OpKind::Scale:
        if (ga) accumulate(adj, has, n.a, kernels::scale(g, n.attr));
        break;
      case OpKind::AddBias:
        if (ga) accumulate(adj, has, n.a, g);
        if (gb) {
          Tensor db = Tensor::zeros(vb->shape());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            auto r = g.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
          }
          accumulate(adj, has, n.b, db);
        }
        break;
      case OpKind::Relu:
        if (ga) {
          Tensor dx = g;
          auto x = va->data();
          auto d = dx.data();
          for (std::size_t i = 0; i < d.size(); ++i)
            if (!(x[i] > 0.0)) d[i] = 0.0;
          accumulate(adj, has, n.a, dx);
        }
        break;
      case OpKind::Exp:
        if (ga) accumulate(adj, has, n.a, kernels::mul(g, n.value));
        break;
      case OpKind::PairwiseSqDist: {
        const std::size_t m = va->rows(), k = vb->rows(), f = va->cols();
        Tensor dz = Tensor::zeros(va->shape());
        Tensor dc = Tensor::zeros(vb->shape());
        for (std::size_t i = 0; i < m; ++i) {
          auto zi = va->row(i);
          for (std::size_t j = 0; j < k; ++j) {
            const double gij = 2.0 * g(i, j);
            if (gij == 0.0) continue;
            auto cj = vb->row(j);
            for (std::size_t t = 0; t < f; ++t) {
              const double d = gij * (zi[t] - cj[t]);
              dz(i, t) += d;
              dc(j, t) -= d;
            }
          }
        }
        if (ga) accumulate(adj, has, n.a, dz);
        if (gb) accumulate(adj, has, n.b, dc);
        break;
      }
      case OpKind::LogSumExpRows:
        if (ga) {
          Tensor dx = kernels::softmax_rows(*va);
          for (std::size_t i = 0; i < dx.rows(); ++i)
            for (double& v : dx.row(i)) v *= g[i];
          accumulate(adj, has, n.a, dx);
        }
        break;
      case OpKind::LogSoftmaxRows:
        if (ga) {
          Tensor dx = g;
          for (std::size_t i = 0; i < dx.rows(); ++i) {
            auto gr = g.row(i);
            auto yr = n.value.row(i);
            double total = 0.0;
            for (double v : gr) total += v;
            auto dr = dx.row(i);
            for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = gr[j] - std::exp(yr[j]) * total;
          }
          accumulate(adj, has, n.a, dx);
        }
        break;
      case OpKind::SoftmaxRows:
        if (ga) {
          Tensor dx = g;
          for (std::size_t i = 0; i < dx.rows(); ++i) {
            auto gr = g.row(i);
            auto yr = n.value.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * yr[j];
            auto dr = dx.row(i);
            for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = yr[j] * (gr[j] - dot);
          }
          accumulate(adj, has, n.a, dx);
        }
        break;
      case OpKind::KlRows: {
        Tensor da = Tensor::zeros(va->shape());
        Tensor db = Tensor::zeros(vb->shape());
        for (std::size_t i = 0; i < va->rows(); ++i) {
          auto a = va->row(i);
          auto b = vb->row(i);
          const double gi = g[i];
          for (std::size_t j = 0; j < a.size(); ++j) {
            const double p = std::exp(a[j]);
            da.row(i)[j] = gi * p * (a[j] - b[j] + 1.0);
            db.row(i)[j] = -gi * p;
          }
        }
        if (ga) accumulate(adj, has, n.a, da);
        if (gb) accumulate(adj, has, n.b, db);
        break;
      }
      case OpKind::Pick:
        if (ga) {
          Tensor dx = Tensor::zeros(va->shape());
          for (std::size_t i = 0; i < n.index.size(); ++i) dx.row(i)[n.index[i]] += g[i];
          accumulate(adj, has, n.a, dx);
        }
        break;
      case OpKind::Sum:
        if (ga) accumulate(adj, has, n.a, Tensor::filled(va->shape(), g[0]));
        break;
      case OpKind::Mean:
        if (ga) accumulate(adj, has, n.a, Tensor::filled(va->shape(), g[0] / static_cast<double>(va->size())));
        break;
    }
  }

  Gradients out;
  for (Var v : wrt) {
    if (v.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
    if (static_cast<std::size_t>(v.id) < n_nodes && has[v.id]) {
      out.grads_[v.id] = adj[v.id];
    } else {
      out.grads_[v.id] = Tensor::zeros(value(v.id).shape());
    }
  }
  return out;
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("operands live on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  return record(*a.tape, OpKind::MatMul, a.id, b.id, 0.0, {});
}
Var add(Var a, Var b) {
  require_same_tape(a, b);
  return record(*a.tape, OpKind::Add, a.id, b.id, 0.0, {});
}
Var sub(Var a, Var b) {
  require_same_tape(a, b);
  return record(*a.tape, OpKind::Sub, a.id, b.id, 0.0, {});
}
Var mul(Var a, Var b) {
  require_same_tape(a, b);
  return record(*a.tape, OpKind::Mul, a.id, b.id, 0.0, {});
}
Var scale(Var a, double s) { return record(*a.tape, OpKind::Scale, a.id, -1, s, {}); }
Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias);
  return record(*x.tape, OpKind::AddBias, x.id, bias.id, 0.0, {});
}
Var relu(Var x) { return record(*x.tape, OpKind::Relu, x.id, -1, 0.0, {}); }
Var exp(Var x) { return record(*x.tape, OpKind::Exp, x.id, -1, 0.0, {}); }
Var pairwise_sqdist(Var z, Var c) {
  require_same_tape(z, c);
  return record(*z.tape, OpKind::PairwiseSqDist, z.id, c.id, 0.0, {});
}
Var logsumexp_rows(Var x) { return record(*x.tape, OpKind::LogSumExpRows, x.id, -1, 0.0, {}); }
Var log_softmax_rows(Var x) { return record(*x.tape, OpKind::LogSoftmaxRows, x.id, -1, 0.0, {}); }
Var softmax_rows(Var x) { return record(*x.tape, OpKind::SoftmaxRows, x.id, -1, 0.0, {}); }
Var kl_rows(Var log_p, Var log_q) {
  require_same_tape(log_p, log_q);
  return record(*log_p.tape, OpKind::KlRows, log_p.id, log_q.id, 0.0, {});
}
Var pick(Var x, std::vector<std::size_t> index) {
  return record(*x.tape, OpKind::Pick, x.id, -1, 0.0, std::move(index));
}
Var sum(Var x) { return record(*x.tape, OpKind::Sum, x.id, -1, 0.0, {}); }
Var mean(Var x) { return record(*x.tape, OpKind::Mean, x.id, -1, 0.0, {}); }

GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  struct Eval {
    double value;
    std::vector<bool> pattern;
  };
  auto evaluate = [&](std::span<const Tensor> ps) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : ps) vars.push_back(tape.variable(p));
    Var loss = f(tape, vars);
    return Eval{loss.value().item(), tape.relu_pattern()};
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.variable(p));
  Var loss = f(tape, vars);
  const Gradients grads = tape.backward(loss, vars);

  GradCheckResult result;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    const Tensor& analytic = grads[vars[p]];
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + h;
      const Eval plus = evaluate(work);
      work[p][i] = orig - h;
      const Eval minus = evaluate(work);
      work[p][i] = orig;
      if (plus.pattern != minus.pattern) {
        ++result.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace iml
