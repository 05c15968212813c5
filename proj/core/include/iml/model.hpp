#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iml/autodiff.hpp"
#include "iml/tensor.hpp"

namespace iml {

// MLP backbone: relu after every hidden layer, linear embedding layer.
struct BackboneConfig {
  std::size_t input_dim = 16;
  // Desk default: a narrow hidden layer makes the two domains compete for
  // capacity, which is what produces forgetting on the synthetic benchmark.
  std::vector<std::size_t> hidden_dims{7};
  std::size_t embed_dim = 16;

  void validate() const;
  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// Trainable backbone parameters stored as [W0, b0, W1, b1, ...] with
// W_l of shape [fan_in x fan_out] and b_l of shape [fan_out].
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::vector<Tensor> tensors);

  std::size_t num_layers() const { return tensors_.size() / 2; }
  const Tensor& weight(std::size_t layer) const { return tensors_[2 * layer]; }
  const Tensor& bias(std::size_t layer) const { return tensors_[2 * layer + 1]; }
  std::span<const Tensor> tensors() const { return tensors_; }
  std::span<Tensor> tensors() { return tensors_; }
  std::size_t parameter_count() const;

  // Throws ShapeError if the tensors do not describe `config`.
  void check_against(const BackboneConfig& config) const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

 private:
  std::vector<Tensor> tensors_;
};

// Parameters placed on a tape, either as variables (trainable) or constants.
struct BoundParams {
  std::vector<Var> vars;
  std::size_t num_layers() const { return vars.size() / 2; }
};

BoundParams bind(Tape& tape, const ParamStore& params, bool trainable);

// He-style fan-in scaling: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), so that
// Var[W] = 2/fan_in; biases start at zero.
ParamStore init_backbone(const BackboneConfig& config, std::uint64_t seed);

Var embed(const BoundParams& params, Var x);
Tensor embed(const ParamStore& params, const Tensor& x);

// Row k is the mean of the rows of z labelled k. Labels must cover 0..K-1.
Var compute_prototypes(Var z, std::span<const std::size_t> labels, std::size_t num_classes);
Tensor compute_prototypes(const Tensor& z, std::span<const std::size_t> labels, std::size_t num_classes);

// chi(z, c) = -||z - c||^2.
double chi(std::span<const double> z, std::span<const double> c);
double chi(const Tensor& z, const Tensor& c);

// Row-wise log of the metric discriminant softmax(-||z_i - c_k||^2 / T).
Var log_discriminant(Var z, Var anchors, double temperature);
Tensor discriminant(const Tensor& z, const Tensor& anchors, double temperature);

// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& x);

// Retained class centers in the embedding space of the round that produced them.
struct AnchorSet {
  std::vector<std::int64_t> class_ids;
  Tensor centers;  // [K_total x F]
  std::vector<std::int64_t> round_tags;  // round that produced each center

  std::size_t size() const { return class_ids.size(); }
  std::size_t dim() const { return centers.cols(); }
  void validate() const;
  AnchorSet subset(std::span<const std::size_t> rows) const;
  friend bool operator==(const AnchorSet&, const AnchorSet&) = default;
};

// Union of two anchor sets with disjoint class ids; `a` keeps its rows first.
AnchorSet merge_anchors(const AnchorSet& a, const AnchorSet& b);

struct SnapshotMeta {
  std::uint64_t seed = 0;
  std::int64_t round = 0;
  std::string method;
  friend bool operator==(const SnapshotMeta&, const SnapshotMeta&) = default;
};

// Frozen (config, params, anchors) triple used as the teacher in later rounds.
class ModelSnapshot {
 public:
  ModelSnapshot(BackboneConfig config, ParamStore params, AnchorSet anchors, SnapshotMeta meta);

  const BackboneConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  const AnchorSet& anchors() const { return anchors_; }
  const SnapshotMeta& meta() const { return meta_; }

  friend bool operator==(const ModelSnapshot&, const ModelSnapshot&) = default;

 private:
  BackboneConfig config_;
  ParamStore params_;
  AnchorSet anchors_;
  SnapshotMeta meta_;
};

ModelSnapshot freeze_snapshot(const BackboneConfig& config, const ParamStore& params, const AnchorSet& anchors,
                              const SnapshotMeta& meta);

// FNV-1a over the parameter and anchor payloads.
std::uint64_t snapshot_hash(const ModelSnapshot& snapshot);

}  // namespace iml
