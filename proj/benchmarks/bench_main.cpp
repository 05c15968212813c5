#include <benchmark/benchmark.h>

#include "iml/autodiff.hpp"
#include "iml/evaluator.hpp"
#include "iml/kernels.hpp"
#include "iml/losses.hpp"
#include "iml/trainer.hpp"

using namespace iml;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::matrix(r, c, std::move(v));
}

const BenchmarkSplits& splits() {
  static const BenchmarkSplits b = make_domain_shift_benchmark(SyntheticSpec{});
  return b;
}

const ModelSnapshot& base_snapshot() {
  static const ModelSnapshot s = [] {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.tasks_per_epoch = 50;
    return train_base(splits().old_train, splits().old_val, cfg).snapshot;
  }();
  return s;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MetaXentForwardBackward(benchmark::State& state) {
  const BackboneConfig cfg{16, {7}, 16};
  const ParamStore p = init_backbone(cfg, 1);
  Rng rng(2);
  const Episode ep = sample_episode(splits().old_train, EpisodeSpec{5, 5, 15}, rng);
  for (auto _ : state) {
    Tape tape;
    const BoundParams b = bind(tape, p, true);
    const Var loss = meta_xent_loss(b, ep, 2.0);
    benchmark::DoNotOptimize(tape.backward(loss, b.vars));
  }
}
BENCHMARK(BM_MetaXentForwardBackward);

void BM_IncrementalStep(benchmark::State& state) {
  const auto method = static_cast<MethodKind>(state.range(0));
  const ModelSnapshot& old = base_snapshot();
  Rng rng(3);
  const Episode ep = sample_episode(splits().new_train, EpisodeSpec{5, 5, 15}, rng);
  std::vector<double> rows(ep.support_x.data().begin(), ep.support_x.data().end());
  rows.insert(rows.end(), ep.query_x.data().begin(), ep.query_x.data().end());
  IncrementalAux aux;
  aux.batch_x = Tensor::matrix(ep.support_x.rows() + ep.query_x.rows(), ep.support_x.cols(), rows);
  aux.anchors = sample_anchor_subset(old.anchors(), 5, rng);
  ParamStore params = old.params();
  OptimState opt = make_optim_state(params, 1e-3);
  std::vector<Tensor> grads;
  for (auto _ : state) {
    Tape tape;
    const BoundParams live = bind(tape, params, true);
    const ObjectiveTerms obj = incremental_objective(method, old, live, ep, aux, LossWeights{}, 2.0);
    const Gradients g = tape.backward(obj.total, live.vars);
    grads.clear();
    for (const Var& v : live.vars) grads.push_back(g[v]);
    adam_step(params, grads, opt);
  }
  state.SetLabel(std::string(method_name(method)));
}
BENCHMARK(BM_IncrementalStep)
    ->Arg(static_cast<int>(MethodKind::FT))
    ->Arg(static_cast<int>(MethodKind::DFA))
    ->Arg(static_cast<int>(MethodKind::IDA));

void BM_Evaluate(benchmark::State& state) {
  const ModelSnapshot& s = base_snapshot();
  const auto workers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(s, splits().unseen, EpisodeSpec{5, 5, 15}, 100, 1, workers));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_Evaluate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
