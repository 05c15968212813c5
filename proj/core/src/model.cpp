#include "iml/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "iml/errors.hpp"
#include "iml/kernels.hpp"
#include "iml/rng.hpp"

namespace iml {

void BackboneConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("backbone: input_dim must be > 0");
  if (embed_dim == 0) throw std::invalid_argument("backbone: embed_dim must be > 0");
  for (auto h : hidden_dims)
    if (h == 0) throw std::invalid_argument("backbone: hidden dims must be > 0");
}

ParamStore::ParamStore(std::vector<Tensor> tensors) : tensors_(std::move(tensors)) {
  if (tensors_.size() % 2 != 0) throw ShapeError("param store needs (weight, bias) pairs");
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParamStore::check_against(const BackboneConfig& config) const {
  if (num_layers() != config.num_layers()) {
    throw ShapeError("param store has " + std::to_string(num_layers()) + " layers, config expects " +
                     std::to_string(config.num_layers()));
  }
  std::size_t fan_in = config.input_dim;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t fan_out = l + 1 < num_layers() ? config.hidden_dims[l] : config.embed_dim;
    if (weight(l).shape() != Shape{fan_in, fan_out} || bias(l).shape() != Shape{fan_out}) {
      throw ShapeError("layer " + std::to_string(l) + " shape does not match backbone config");
    }
    fan_in = fan_out;
  }
}

BoundParams bind(Tape& tape, const ParamStore& params, bool trainable) {
  BoundParams out;
  out.vars.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) out.vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  return out;
}

ParamStore init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<Tensor> tensors;
  std::size_t fan_in = config.input_dim;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const std::size_t fan_out = l < config.hidden_dims.size() ? config.hidden_dims[l] : config.embed_dim;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    tensors.push_back(std::move(w));
    tensors.push_back(Tensor::zeros({fan_out}));
    fan_in = fan_out;
  }
  return ParamStore(std::move(tensors));
}

Var embed(const BoundParams& params, Var x) {
  Var h = x;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    h = add_bias(matmul(h, params.vars[2 * l]), params.vars[2 * l + 1]);
    if (l + 1 < params.num_layers()) h = relu(h);
  }
  return h;
}

Tensor embed(const ParamStore& params, const Tensor& x) {
  if (params.num_layers() == 0) throw ShapeError("embed: empty parameter store");
  if (x.rank() != 2 || x.cols() != params.weight(0).rows()) {
    throw ShapeError("embed: input " + shape_string(x.shape()) + " does not match input_dim " +
                     std::to_string(params.weight(0).rows()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    h = kernels::add_bias(kernels::matmul(h, params.weight(l)), params.bias(l));
    if (l + 1 < params.num_layers()) h = kernels::relu(h);
  }
  return h;
}

namespace {

Tensor averaging_matrix(std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y : labels) {
    if (y >= num_classes) throw DegenerateEpisodeError("label " + std::to_string(y) + " out of range");
    ++counts[y];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw DegenerateEpisodeError("class " + std::to_string(k) + " has no support rows");
  }
  Tensor a = Tensor::zeros({num_classes, labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) a(labels[i], i) = 1.0 / static_cast<double>(counts[labels[i]]);
  return a;
}

}  // namespace

Var compute_prototypes(Var z, std::span<const std::size_t> labels, std::size_t num_classes) {
  if (z.value().rows() != labels.size()) throw ShapeError("compute_prototypes: one label per row required");
  return matmul(z.tape->constant(averaging_matrix(labels, num_classes)), z);
}

Tensor compute_prototypes(const Tensor& z, std::span<const std::size_t> labels, std::size_t num_classes) {
  if (z.rows() != labels.size()) throw ShapeError("compute_prototypes: one label per row required");
  return kernels::matmul(averaging_matrix(labels, num_classes), z);
}

double chi(std::span<const double> z, std::span<const double> c) {
  if (z.size() != c.size()) throw ShapeError("chi: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - c[i];
    acc += d * d;
  }
  return -acc;
}

double chi(const Tensor& z, const Tensor& c) { return chi(z.data(), c.data()); }

Var log_discriminant(Var z, Var anchors, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  return log_softmax_rows(scale(pairwise_sqdist(z, anchors), -1.0 / temperature));
}

Tensor discriminant(const Tensor& z, const Tensor& anchors, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  return kernels::softmax_rows(kernels::scale(kernels::pairwise_sqdist(z, anchors), -1.0 / temperature));
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  std::vector<std::size_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

void AnchorSet::validate() const {
  if (centers.rank() != 2 && !class_ids.empty()) throw ShapeError("anchor centers must be a matrix");
  if (!class_ids.empty() && centers.rows() != class_ids.size()) {
    throw ShapeError("anchor set has " + std::to_string(class_ids.size()) + " ids but " +
                     std::to_string(centers.rows()) + " centers");
  }
  if (round_tags.size() != class_ids.size()) throw ShapeError("anchor set needs one round tag per class");
  std::set<std::int64_t> seen(class_ids.begin(), class_ids.end());
  if (seen.size() != class_ids.size()) throw std::invalid_argument("anchor class ids must be unique");
}

AnchorSet AnchorSet::subset(std::span<const std::size_t> rows) const {
  AnchorSet out;
  const std::size_t f = dim();
  std::vector<double> data;
  data.reserve(rows.size() * f);
  for (auto r : rows) {
    if (r >= size()) throw std::out_of_range("anchor row out of range");
    out.class_ids.push_back(class_ids[r]);
    out.round_tags.push_back(round_tags[r]);
    auto c = centers.row(r);
    data.insert(data.end(), c.begin(), c.end());
  }
  out.centers = Tensor::matrix(rows.size(), f, std::move(data));
  return out;
}

AnchorSet merge_anchors(const AnchorSet& a, const AnchorSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.dim() != b.dim()) throw ShapeError("merge_anchors: embedding dims differ");
  AnchorSet out = a;
  out.class_ids.insert(out.class_ids.end(), b.class_ids.begin(), b.class_ids.end());
  out.round_tags.insert(out.round_tags.end(), b.round_tags.begin(), b.round_tags.end());
  std::vector<double> data(a.centers.data().begin(), a.centers.data().end());
  data.insert(data.end(), b.centers.data().begin(), b.centers.data().end());
  out.centers = Tensor::matrix(out.class_ids.size(), a.dim(), std::move(data));
  out.validate();
  return out;
}

ModelSnapshot::ModelSnapshot(BackboneConfig config, ParamStore params, AnchorSet anchors, SnapshotMeta meta)
    : config_(std::move(config)), params_(std::move(params)), anchors_(std::move(anchors)), meta_(std::move(meta)) {
  config_.validate();
  params_.check_against(config_);
  anchors_.validate();
  if (anchors_.size() > 0 && anchors_.dim() != config_.embed_dim) {
    throw ShapeError("anchor dim " + std::to_string(anchors_.dim()) + " != embed_dim " +
                     std::to_string(config_.embed_dim));
  }
}

ModelSnapshot freeze_snapshot(const BackboneConfig& config, const ParamStore& params, const AnchorSet& anchors,
                              const SnapshotMeta& meta) {
  return ModelSnapshot(config, params, anchors, meta);
}

namespace {

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

std::uint64_t snapshot_hash(const ModelSnapshot& snapshot) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : snapshot.params().tensors()) fnv(h, t.data().data(), t.size() * sizeof(double));
  const auto& a = snapshot.anchors();
  fnv(h, a.class_ids.data(), a.class_ids.size() * sizeof(std::int64_t));
  fnv(h, a.round_tags.data(), a.round_tags.size() * sizeof(std::int64_t));
  fnv(h, a.centers.data().data(), a.centers.size() * sizeof(double));
  return h;
}

}  // namespace iml
