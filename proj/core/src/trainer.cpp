#include "iml/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "iml/anchorstore.hpp"
#include "iml/errors.hpp"
#include "iml/evaluator.hpp"
#include "iml/kernels.hpp"

namespace iml {

namespace {

// Independent RNG streams derived from the run seed. Keeping episode and
// auxiliary sampling apart makes runs that differ only in their alignment
// term see the same sequence of episodes.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kEpisodeStream = 1;
constexpr std::uint64_t kAuxStream = 2;
constexpr std::uint64_t kValStream = 3;

using ObjectiveFn = std::function<ObjectiveTerms(const BoundParams& live, Rng& episodes, Rng& aux)>;

std::vector<EpochLog> optimize(ParamStore& params, const Dataset& val, const TrainConfig& cfg,
                               const ObjectiveFn& objective, const StepObserver& observer) {
  OptimState state = make_optim_state(params, cfg.lr);
  Rng episodes(derive_seed(cfg.seed, kEpisodeStream));
  Rng aux(derive_seed(cfg.seed, kAuxStream));
  std::vector<EpochLog> log;
  std::size_t step = 0;
  std::vector<Tensor> grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_total = 0.0;
    for (std::size_t t = 0; t < cfg.tasks_per_epoch; ++t) {
      Tape tape;
      const BoundParams live = bind(tape, params, true);
      const ObjectiveTerms obj = objective(live, episodes, aux);
      const double loss = obj.total.value().item();
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (meta_ce=" + std::to_string(obj.breakdown.meta_ce) +
                              ", align=" + std::to_string(obj.breakdown.align) + ")");
      }
      const Gradients g = tape.backward(obj.total, live.vars);
      grads.clear();
      for (const Var& v : live.vars) grads.push_back(g[v]);
      adam_step(params, grads, state);
      loss_total += loss;
      ++step;
      if (observer) observer(step, params, obj.breakdown);
    }
    const double acc =
        kernels::mean(Tensor::vector(episode_accuracies(params, val, cfg.episode, cfg.val_episodes,
                                                        derive_seed(cfg.seed, kValStream), 1)));
    log.push_back(EpochLog{epoch + 1, val.split_name, loss_total / static_cast<double>(cfg.tasks_per_epoch), acc,
                           state.lr});
    lr_schedule_update(state, acc, cfg.patience, cfg.lr_decay);
  }
  return log;
}

Tensor episode_inputs(const Episode& ep) {
  std::vector<double> data(ep.support_x.data().begin(), ep.support_x.data().end());
  data.insert(data.end(), ep.query_x.data().begin(), ep.query_x.data().end());
  return Tensor::matrix(ep.support_x.rows() + ep.query_x.rows(), ep.support_x.cols(), std::move(data));
}

TrainResult train_from_scratch(const Dataset& dataset, const Dataset& val, const TrainConfig& cfg,
                               const std::string& method, const StepObserver& observer) {
  cfg.validate();
  ParamStore params = init_backbone(cfg.backbone, derive_seed(cfg.seed, kInitStream));
  ObjectiveFn objective = [&](const BoundParams& live, Rng& episodes, Rng&) {
    const Episode ep = sample_episode(dataset, cfg.episode, episodes);
    Var ce = meta_xent_loss(live, ep, cfg.temperature);
    LossBreakdown b;
    b.meta_ce = b.total = ce.value().item();
    return ObjectiveTerms{ce, b};
  };
  auto log = optimize(params, val, cfg, objective, observer);
  AnchorSet anchors = extract_anchors(params, dataset, 0);
  return TrainResult{freeze_snapshot(cfg.backbone, params, anchors, SnapshotMeta{cfg.seed, 0, method}),
                     std::move(log)};
}

}  // namespace

LossWeights TrainConfig::weights() const {
  return LossWeights{lambda, lambda_old.value_or(lambda), lambda_new.value_or(lambda)};
}

void TrainConfig::validate() const {
  backbone.validate();
  episode.validate();
  if (epochs == 0) throw ConfigError("epochs", "must be >= 1");
  if (tasks_per_epoch == 0) throw ConfigError("tasks_per_epoch", "must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must satisfy lambda >= 0");
  if (lambda_old && !(*lambda_old >= 0.0)) throw ConfigError("lambda_old", "must satisfy lambda_old >= 0");
  if (lambda_new && !(*lambda_new >= 0.0)) throw ConfigError("lambda_new", "must satisfy lambda_new >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be > 0");
  if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw ConfigError("lr_decay", "must lie in (0, 1)");
  if (exemplars_per_class == 0) throw ConfigError("exemplars_per_class", "must be >= 1");
  if (val_episodes < 1) throw ConfigError("val_episodes", "must be >= 1");
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.tasks_per_epoch = 800;
  return cfg;
}

OptimState make_optim_state(const ParamStore& params, double lr) {
  OptimState s;
  for (const auto& t : params.tensors()) {
    s.m.push_back(Tensor::zeros(t.shape()));
    s.v.push_back(Tensor::zeros(t.shape()));
  }
  s.lr = lr;
  return s;
}

void adam_step(ParamStore& params, std::span<const Tensor> grads, OptimState& state, const AdamParams& adam) {
  auto tensors = params.tensors();
  if (grads.size() != tensors.size()) throw std::invalid_argument("adam_step: one gradient per parameter required");
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (grads[p].shape() != tensors[p].shape()) throw ShapeError("adam_step: gradient shape mismatch");
    if (!grads[p].all_finite()) {
      throw DivergenceError("adam_step: non-finite gradient in parameter " + std::to_string(p) + " at step " +
                            std::to_string(state.step));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto w = tensors[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    auto g = grads[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
      v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
}

void lr_schedule_update(OptimState& state, double val_metric, std::size_t patience, double decay) {
  if (!state.has_best || val_metric > state.best_metric) {
    state.best_metric = val_metric;
    state.has_best = true;
    state.epochs_since_improvement = 0;
    return;
  }
  if (++state.epochs_since_improvement > patience) {
    state.lr *= decay;
    state.epochs_since_improvement = 0;
  }
}

TrainResult train_base(const Dataset& old_dataset, const Dataset& val_dataset, const TrainConfig& cfg,
                       const StepObserver& observer) {
  return train_from_scratch(old_dataset, val_dataset, cfg, std::string(method_name(MethodKind::NU)), observer);
}

TrainResult train_paragon(const Dataset& union_dataset, const Dataset& val_dataset, const TrainConfig& cfg,
                          const StepObserver& observer) {
  return train_from_scratch(union_dataset, val_dataset, cfg, std::string(method_name(MethodKind::PAR)), observer);
}

TrainResult train_incremental(const ModelSnapshot& old, const Dataset& new_dataset, const Dataset& val_dataset,
                              MethodKind method, const TrainConfig& cfg, const ExemplarSet* exemplars,
                              const StepObserver& observer) {
  cfg.validate();
  if (method == MethodKind::NU || method == MethodKind::PAR) {
    throw std::invalid_argument(std::string(method_name(method)) + " is not an incremental method");
  }
  if (old.anchors().size() == 0) throw std::invalid_argument("train_incremental: old snapshot has no anchors");
  if (method == MethodKind::EIML && (exemplars == nullptr || exemplars->rows.size() == 0)) {
    throw std::invalid_argument("train_incremental: EIML requires reserved exemplars");
  }
  if (!(old.config() == cfg.backbone)) throw std::invalid_argument("train_incremental: backbone config differs");

  const LossWeights weights = cfg.weights();
  const std::size_t anchor_k = std::min(cfg.episode.ways, old.anchors().size());
  ParamStore params = old.params();

  ObjectiveFn objective = [&](const BoundParams& live, Rng& episodes, Rng& aux_rng) {
    const Episode ep = sample_episode(new_dataset, cfg.episode, episodes);
    IncrementalAux aux;
    if (method == MethodKind::IDA || method == MethodKind::DFA || method == MethodKind::EIML) {
      aux.batch_x = episode_inputs(ep);
    }
    if (method == MethodKind::IDA || method == MethodKind::EIML) {
      aux.anchors = sample_anchor_subset(old.anchors(), anchor_k, aux_rng);
    }
    if (method == MethodKind::EIML) {
      const std::size_t ways = std::min(cfg.episode.ways, exemplars->rows.num_classes());
      aux.exemplars =
          sample_exemplar_episode(*exemplars, ways, cfg.episode.shots + cfg.episode.queries, aux_rng);
    }
    return incremental_objective(method, old, live, ep, aux, weights, cfg.temperature, cfg.kl_order);
  };
  auto log = optimize(params, val_dataset, cfg, objective, observer);

  const std::int64_t round = old.meta().round + 1;
  AnchorSet anchors = merge_anchors(old.anchors(), extract_anchors(params, new_dataset, round));
  return TrainResult{
      freeze_snapshot(cfg.backbone, params, anchors, SnapshotMeta{cfg.seed, round, std::string(method_name(method))}),
      std::move(log)};
}

std::vector<TrainResult> run_rounds(const ModelSnapshot& base, std::span<const RoundData> rounds, MethodKind method,
                                    const TrainConfig& cfg, const Dataset* old_dataset) {
  if (rounds.empty()) throw std::invalid_argument("run_rounds: need at least one round");
  if (method == MethodKind::EIML && old_dataset == nullptr) {
    throw std::invalid_argument("run_rounds: EIML needs the old dataset to reserve exemplars");
  }
  std::vector<TrainResult> out;
  out.reserve(rounds.size());
  const ModelSnapshot* teacher = &base;
  Dataset seen;
  if (old_dataset) seen = *old_dataset;
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    std::optional<ExemplarSet> exemplars;
    if (method == MethodKind::EIML) {
      Rng rng(derive_seed(cfg.seed, 100 + r));
      exemplars = reserve_exemplars(seen, cfg.exemplars_per_class, rng);
    }
    out.push_back(train_incremental(*teacher, rounds[r].train, rounds[r].val, method, cfg,
                                    exemplars ? &*exemplars : nullptr));
    teacher = &out.back().snapshot;
    if (method == MethodKind::EIML) seen = concat_datasets(seen, rounds[r].train, "seen");
  }
  return out;
}

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log " + path.string());
  out << "epoch,split,loss,acc,lr\n";
  for (const auto& e : log) {
    std::ostringstream row;
    row.precision(17);
    row << e.epoch << ',' << e.split << ',' << e.loss << ',' << e.acc << ',' << e.lr;
    out << row.str() << '\n';
  }
}

}  // namespace iml
