#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "iml/model.hpp"
#include "iml/rng.hpp"
#include "iml/tensor.hpp"

namespace iml {

using ClassId = std::int64_t;

struct Dataset {
  Tensor features;  // [n x input_dim]
  std::vector<ClassId> labels;
  std::map<ClassId, std::vector<std::size_t>> class_index;
  std::string split_name;

  static Dataset from_rows(Tensor features, std::vector<ClassId> labels, std::string split_name);

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const { return class_index.size(); }
  std::vector<ClassId> classes() const;
  Tensor gather(std::span<const std::size_t> rows) const;
};

Dataset subset_classes(const Dataset& ds, std::span<const ClassId> classes, std::string split_name);
Dataset concat_datasets(const Dataset& a, const Dataset& b, std::string split_name);

// Splits every class's rows in order: the first ceil(fraction * n) rows go to
// the first dataset, the rest to the second.
std::pair<Dataset, Dataset> split_samples(const Dataset& ds, double first_fraction);

struct EpisodeSpec {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 15;

  void validate() const;
  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

struct Episode {
  Tensor support_x;
  std::vector<std::size_t> support_y;  // local labels 0..ways-1
  Tensor query_x;
  std::vector<std::size_t> query_y;
  std::vector<ClassId> class_map;  // local -> global
  std::vector<std::size_t> support_rows;
  std::vector<std::size_t> query_rows;

  std::size_t ways() const { return class_map.size(); }
};

// Two Gaussian-cluster domains. Classes [0, C) form domain A with centers
// drawn uniformly in [-1, 1]^dim; classes [C, 2C) form domain B, whose centers
// are drawn the same way and shifted by domain_offset.
struct SyntheticSpec {
  std::size_t classes_per_domain = 32;
  std::size_t dim = 16;
  double cluster_std = 0.5;
  std::vector<double> domain_offset;  // empty means 3.0 in every coordinate
  std::size_t samples_per_class = 100;
  std::uint64_t seed = 0;

  std::vector<double> resolved_offset() const;
  void validate() const;
};

Dataset gen_synthetic(const SyntheticSpec& spec);
// Class centers in id order, [2C x dim].
Tensor synthetic_centers(const SyntheticSpec& spec);
inline std::size_t synthetic_domain(const SyntheticSpec& spec, ClassId c) {
  return static_cast<std::size_t>(c) / spec.classes_per_domain;
}

// CSV with header `label,f0,...,f{d-1}`.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

struct ClassSplit {
  Dataset old_split;
  Dataset new_split;
  Dataset unseen_split;
};

// Class-disjoint (old, new, unseen) partition; any split with a nonzero
// fraction must receive at least two classes.
ClassSplit split_classes(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed);

// Desk-scale domain-shift benchmark built from gen_synthetic(). Domain A
// classes are split into old / unseen, domain B classes into new / unseen.
// Rows of old and new classes are split per class into train / val / test;
// unseen classes keep all of their rows. Test sets are named "old", "new"
// and "unseen".
struct BenchmarkSplits {
  Dataset old_train, old_val, old_test;
  Dataset new_train, new_val, new_test;
  Dataset unseen;
};

struct BenchmarkLayout {
  double old_fraction = 0.5;    // of domain A classes
  double new_fraction = 0.5;    // of domain B classes
  double train_fraction = 0.5;  // of each class's rows
  double val_fraction = 0.25;
  std::uint64_t split_seed = 0;
};

BenchmarkSplits make_domain_shift_benchmark(const SyntheticSpec& spec, const BenchmarkLayout& layout = {});

Episode sample_episode(const Dataset& ds, const EpisodeSpec& spec, Rng& rng);

AnchorSet sample_anchor_subset(const AnchorSet& anchors, std::size_t k, Rng& rng);

// Retained raw rows of old classes, at most per_class rows per class.
struct ExemplarSet {
  Dataset rows;
  std::size_t per_class = 0;
};

ExemplarSet reserve_exemplars(const Dataset& ds, std::size_t per_class, Rng& rng);

// Old-class task drawn from the exemplars: `ways` classes with up to
// max_per_class rows each (all rows when a class holds fewer).
struct ExemplarEpisode {
  Tensor x;
  std::vector<std::size_t> y;
  std::vector<ClassId> class_map;
  std::size_t ways() const { return class_map.size(); }
};

ExemplarEpisode sample_exemplar_episode(const ExemplarSet& exemplars, std::size_t ways, std::size_t max_per_class,
                                        Rng& rng);

}  // namespace iml
