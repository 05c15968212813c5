#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iml/data.hpp"
#include "iml/model.hpp"

namespace iml {

struct EvalReport {
  std::string split;
  std::size_t n_episodes = 0;
  double mean_acc = 0.0;
  double ci_halfwidth = 0.0;
  EpisodeSpec spec;
  std::uint64_t seed = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Normal-approximation 95% interval: (mean, 1.96 * sd / sqrt(n)) with the
// n-1 sample standard deviation. Needs at least two values.
std::pair<double, double> confidence_interval(std::span<const double> values);

// Fraction of query points whose nearest prototype (squared L2, ties to the
// lowest local index) is their own class.
double episode_accuracy(const ParamStore& params, const Episode& episode);

// Per-episode accuracies; episode i is sampled from Rng(derive_seed(seed, i)),
// so the result does not depend on `workers`. workers == 0 picks the
// hardware concurrency.
std::vector<double> episode_accuracies(const ParamStore& params, const Dataset& dataset, const EpisodeSpec& spec,
                                       std::size_t n_episodes, std::uint64_t seed, std::size_t workers = 0);

EvalReport evaluate(const ParamStore& params, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t n_episodes, std::uint64_t seed, std::size_t workers = 0);
EvalReport evaluate(const ModelSnapshot& snapshot, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t n_episodes, std::uint64_t seed, std::size_t workers = 0);

// One row per axis value, one report per evaluated split in each row.
struct SweepTable {
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::vector<EvalReport>> reports;

  const EvalReport& at(std::size_t value_index, std::string_view split) const;
};

// Models (rows) evaluated under every (ways, shots) column, with the
// max - min spread of the mean accuracy per column.
struct WayShotTable {
  std::vector<std::string> models;
  std::vector<EpisodeSpec> columns;
  std::vector<std::vector<EvalReport>> cells;  // [model][column]
  std::vector<double> range;                   // per column
};

struct NamedSnapshot {
  std::string name;
  const ModelSnapshot* snapshot;
};

WayShotTable cross_way_shot(std::span<const NamedSnapshot> models, std::span<const std::size_t> ways,
                            std::span<const std::size_t> shots, std::size_t queries, const Dataset& dataset,
                            std::size_t n_episodes, std::uint64_t seed, std::size_t workers = 0);

// CSV with header `split,n,mean,ci,ways,shots,seed`.
void write_report_csv(std::ostream& out, std::span<const EvalReport> reports);
std::vector<EvalReport> read_report_csv(std::istream& in);

// `axis,value,split,n,mean,ci,ways,shots,seed` rows.
void write_sweep_csv(std::ostream& out, const SweepTable& table);
void write_way_shot_csv(std::ostream& out, const WayShotTable& table);
void write_way_shot_markdown(std::ostream& out, const WayShotTable& table);

// "74.65 ± 0.49": percentages with two decimals.
std::string format_cell(const EvalReport& report);

}  // namespace iml
