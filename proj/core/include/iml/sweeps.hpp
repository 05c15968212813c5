#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "iml/data.hpp"
#include "iml/evaluator.hpp"
#include "iml/model.hpp"
#include "iml/trainer.hpp"

namespace iml {

inline const std::vector<double> kDefaultLambdaGrid{0.0, 0.25, 0.5, 0.75, 1.0, 2.0, 5.0, 10.0};
inline const std::vector<std::size_t> kDefaultExemplarCounts{15, 30, 60, 120};

struct EvalSettings {
  EpisodeSpec spec;
  std::size_t n_episodes = 500;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

// Evaluates one snapshot on every split, in order.
std::vector<EvalReport> evaluate_splits(const ModelSnapshot& snapshot, std::span<const Dataset> splits,
                                        const EvalSettings& eval);

// One IDA incremental run per lambda, all with cfg.seed.
SweepTable sweep_lambda(const ModelSnapshot& base, const Dataset& new_train, const Dataset& new_val,
                        std::span<const Dataset> eval_splits, std::span<const double> values, const TrainConfig& cfg,
                        const EvalSettings& eval);

// One EIML incremental run per exemplar count. Exemplars are reserved from
// old_dataset with the same RNG seed for every count.
SweepTable sweep_exemplars(const ModelSnapshot& base, const Dataset& old_dataset, const Dataset& new_train,
                           const Dataset& new_val, std::span<const Dataset> eval_splits,
                           std::span<const std::size_t> counts, const TrainConfig& cfg, const EvalSettings& eval);

}  // namespace iml
