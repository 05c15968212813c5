#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iml/data.hpp"
#include "iml/losses.hpp"
#include "iml/model.hpp"

namespace iml {

struct TrainConfig {
  BackboneConfig backbone;
  std::size_t epochs = 30;
  std::size_t tasks_per_epoch = 100;
  EpisodeSpec episode;
  double lambda = 1.0;
  // EIML term weights; unset means "same as lambda".
  std::optional<double> lambda_old;
  std::optional<double> lambda_new;
  double temperature = 2.0;
  double lr = 0.001;
  double lr_decay = 0.5;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t exemplars_per_class = 15;
  KlOrder kl_order = KlOrder::StudentFirst;
  std::size_t val_episodes = 20;

  LossWeights weights() const;
  void validate() const;

  // 200 epochs x 800 tasks.
  static TrainConfig paper_scale();
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
  double lr = 0.001;
  double best_metric = -1.0;
  std::size_t epochs_since_improvement = 0;
  bool has_best = false;
};

OptimState make_optim_state(const ParamStore& params, double lr);

// Bias-corrected Adam update with state.lr. Throws DivergenceError if any
// gradient entry is non-finite; params and state are left untouched then.
void adam_step(ParamStore& params, std::span<const Tensor> grads, OptimState& state, const AdamParams& adam = {});

// Plateau schedule: once the metric has failed to improve on the best value
// for more than `patience` consecutive epochs, lr *= decay and the counter resets.
void lr_schedule_update(OptimState& state, double val_metric, std::size_t patience, double decay);

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double acc = 0.0;
  double lr = 0.0;
};

// Called after every optimizer step with the updated live parameters.
using StepObserver = std::function<void(std::size_t step, const ParamStore& params, const LossBreakdown& loss)>;

struct TrainResult {
  ModelSnapshot snapshot;
  std::vector<EpochLog> log;
};

TrainResult train_base(const Dataset& old_dataset, const Dataset& val_dataset, const TrainConfig& cfg,
                       const StepObserver& observer = {});

// Fine-tunes a copy of the old snapshot's parameters on new_dataset. The
// output snapshot carries the old anchors plus anchors of every new class,
// tagged with round old.round + 1.
TrainResult train_incremental(const ModelSnapshot& old, const Dataset& new_dataset, const Dataset& val_dataset,
                              MethodKind method, const TrainConfig& cfg, const ExemplarSet* exemplars = nullptr,
                              const StepObserver& observer = {});

TrainResult train_paragon(const Dataset& union_dataset, const Dataset& val_dataset, const TrainConfig& cfg,
                          const StepObserver& observer = {});

struct RoundData {
  Dataset train;
  Dataset val;
};

// Chains train_incremental; round r's output is round r+1's teacher. For
// EIML, exemplars are reserved from `old_dataset` and then from each finished
// round's training data.
std::vector<TrainResult> run_rounds(const ModelSnapshot& base, std::span<const RoundData> rounds, MethodKind method,
                                    const TrainConfig& cfg, const Dataset* old_dataset = nullptr);

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace iml
