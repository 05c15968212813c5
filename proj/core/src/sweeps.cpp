#include "iml/sweeps.hpp"

#include <charconv>
#include <stdexcept>
#include <string>

namespace iml {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

constexpr std::uint64_t kExemplarStream = 100;

}  // namespace

std::vector<EvalReport> evaluate_splits(const ModelSnapshot& snapshot, std::span<const Dataset> splits,
                                        const EvalSettings& eval) {
  std::vector<EvalReport> out;
  out.reserve(splits.size());
  for (const auto& ds : splits) out.push_back(evaluate(snapshot, ds, eval.spec, eval.n_episodes, eval.seed, eval.workers));
  return out;
}

SweepTable sweep_lambda(const ModelSnapshot& base, const Dataset& new_train, const Dataset& new_val,
                        std::span<const Dataset> eval_splits, std::span<const double> values, const TrainConfig& cfg,
                        const EvalSettings& eval) {
  if (values.empty()) throw std::invalid_argument("sweep_lambda: no values");
  SweepTable table;
  table.axis = "lambda";
  for (double lambda : values) {
    TrainConfig run = cfg;
    run.lambda = lambda;
    const auto result = train_incremental(base, new_train, new_val, MethodKind::IDA, run);
    table.values.push_back(shortest(lambda));
    table.reports.push_back(evaluate_splits(result.snapshot, eval_splits, eval));
  }
  return table;
}

SweepTable sweep_exemplars(const ModelSnapshot& base, const Dataset& old_dataset, const Dataset& new_train,
                           const Dataset& new_val, std::span<const Dataset> eval_splits,
                           std::span<const std::size_t> counts, const TrainConfig& cfg, const EvalSettings& eval) {
  if (counts.empty()) throw std::invalid_argument("sweep_exemplars: no counts");
  SweepTable table;
  table.axis = "exemplars";
  for (std::size_t count : counts) {
    TrainConfig run = cfg;
    run.exemplars_per_class = count;
    Rng rng(derive_seed(cfg.seed, kExemplarStream));
    const ExemplarSet exemplars = reserve_exemplars(old_dataset, count, rng);
    const auto result = train_incremental(base, new_train, new_val, MethodKind::EIML, run, &exemplars);
    table.values.push_back(std::to_string(count));
    table.reports.push_back(evaluate_splits(result.snapshot, eval_splits, eval));
  }
  return table;
}

}  // namespace iml
