// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "cli/commands.hpp"
#include "helpers.hpp"
#include "iml/anchorstore.hpp"
#include "iml/evaluator.hpp"
#include "iml/kernels.hpp"
#include "iml/losses.hpp"
#include "iml/sweeps.hpp"
#include "iml/trainer.hpp"

using namespace iml;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("criterion %d %s: %s (%s; %.1f s)\n", id, name, pass ? "PASS" : "FAIL", detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

ParamStore perturbed(const ParamStore& p, double scale, std::uint64_t seed) {
  ParamStore q = p;
  Rng rng(seed);
  for (auto& t : q.tensors())
    for (auto& x : t.data()) x += scale * rng.uniform(-1.0, 1.0);
  return q;
}

BoundParams as_bound(std::span<const Var> vars) { return BoundParams{std::vector<Var>(vars.begin(), vars.end())}; }

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto start = Clock::now();
  const BackboneConfig cfg{8, {8}, 8};
  const ParamStore teacher = init_backbone(cfg, 1);
  const ParamStore live = perturbed(teacher, 0.1, 2);
  const Dataset ds = fixtures::clusters(8, 10, 8, 0.5, 3);
  Rng rng(4);
  const Episode ep = sample_episode(ds, EpisodeSpec{5, 2, 3}, rng);
  const AnchorSet anchors = extract_anchors(teacher, ds, 0).subset(std::vector<std::size_t>{0, 1, 2, 3, 4});
  const ModelSnapshot old = freeze_snapshot(cfg, teacher, anchors, SnapshotMeta{1, 0, "NU"});
  std::vector<double> rows(ep.support_x.data().begin(), ep.support_x.data().end());
  rows.insert(rows.end(), ep.query_x.data().begin(), ep.query_x.data().end());
  const Tensor batch = Tensor::matrix(ep.support_x.rows() + ep.query_x.rows(), 8, rows);
  ExemplarEpisode ex;
  ex.x = ep.support_x;
  ex.y = ep.support_y;
  ex.class_map = ep.class_map;

  const std::vector<std::pair<const char*, ScalarFn>> losses{
      {"meta_xent", [&](Tape&, std::span<const Var> v) { return meta_xent_loss(as_bound(v), ep, 2.0); }},
      {"ida", [&](Tape&, std::span<const Var> v) { return ida_loss(old, as_bound(v), batch, anchors, 2.0); }},
      {"dfa", [&](Tape&, std::span<const Var> v) { return dfa_loss(old, as_bound(v), batch); }},
      {"eiml", [&](Tape&, std::span<const Var> v) {
         const auto [a_old, a_new] = eiml_loss(old, as_bound(v), ex, batch, anchors, 2.0);
         return add(a_old, a_new);
       }},
  };
  double worst = 0.0;
  std::string detail;
  for (const auto& [name, fn] : losses) {
    const GradCheckResult r = grad_check(fn, live.tensors(), 1e-4);
    worst = std::max(worst, r.max_rel_error);
    detail += fmt("%s %.1e/%zu ", name, r.max_rel_error, r.checked);
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  report(1, "gradient correctness", worst <= 1e-5 && secs < 30.0, detail + fmt("max %.2e <= 1e-5", worst), start);
}

void oracle_equivalence() {
  const auto start = Clock::now();
  Rng rng(11);
  auto rel = [](double x, long double o) {
    return static_cast<double>(std::fabs(static_cast<long double>(x) - o) / std::max<long double>(1.0L, std::fabs(o)));
  };
  auto random_vec = [&](std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  double e_soft = 0, e_lse = 0, e_kl = 0, e_dist = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.index(20);
    const auto v = random_vec(n, -20, 20);
    const double t = rng.uniform(0.1, 5.0);
    const Tensor s = kernels::softmax(Tensor::vector(v), t);
    const auto so = oracle::softmax(v, t);
    for (std::size_t k = 0; k < n; ++k) e_soft = std::max(e_soft, rel(s[k], so[k]));

    e_lse = std::max(e_lse, rel(kernels::logsumexp(std::span<const double>(v)), oracle::logsumexp(v)));

    auto p = random_vec(n, 0.01, 1.0), q = random_vec(n, 0.01, 1.0);
    double sp = 0, sq = 0;
    for (std::size_t k = 0; k < n; ++k) sp += p[k], sq += q[k];
    for (std::size_t k = 0; k < n; ++k) p[k] /= sp, q[k] /= sq;
    const std::vector<long double> pl(p.begin(), p.end()), ql(q.begin(), q.end());
    e_kl = std::max(e_kl, rel(kernels::kl_div(p, q), oracle::kl(pl, ql)));

    const std::size_t r = 1 + rng.index(6), c = 1 + rng.index(6), d = 1 + rng.index(16);
    const Tensor z = fixtures::random_matrix(r, d, rng, -5, 5), cs = fixtures::random_matrix(c, d, rng, -5, 5);
    const Tensor dist = kernels::pairwise_sqdist(z, cs);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < c; ++b) e_dist = std::max(e_dist, rel(dist(a, b), oracle::sqdist(z.row(a), cs.row(b))));
  }
  const double worst = std::max({e_soft, e_lse, e_kl, e_dist});
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  report(2, "oracle equivalence", worst <= 1e-10 && secs < 10.0,
         fmt("softmax %.1e, logsumexp %.1e, kl %.1e, sqdist %.1e <= 1e-10", e_soft, e_lse, e_kl, e_dist), start);
}

void lambda_zero_collapse() {
  const auto start = Clock::now();
  SyntheticSpec spec;
  const BenchmarkSplits b = make_domain_shift_benchmark(spec);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.tasks_per_epoch = 25;
  cfg.val_episodes = 5;
  const ModelSnapshot base = train_base(b.old_train, b.old_val, cfg).snapshot;
  cfg.lambda = 0.0;
  std::vector<ParamStore> ft, ida;
  train_incremental(base, b.new_train, b.new_val, MethodKind::FT, cfg, nullptr,
                    [&](std::size_t, const ParamStore& p, const LossBreakdown&) { ft.push_back(p); });
  train_incremental(base, b.new_train, b.new_val, MethodKind::IDA, cfg, nullptr,
                    [&](std::size_t, const ParamStore& p, const LossBreakdown&) { ida.push_back(p); });
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(ft.size(), ida.size()); ++i) same += ft[i] == ida[i];
  report(3, "lambda=0 collapse", ft.size() == 50 && ida.size() == 50 && same == 50,
         fmt("%zu/50 steps bitwise identical", same), start);
}

// ---------------------------------------------------------------------------
// Criteria 4-7 share one base model per seed.

constexpr int kSeeds = 5;
enum Split { kOld, kNew, kUnseen };

struct SeedResult {
  double methods[6][3] = {};  // NU FT DFA IDA EIML PAR x old/new/unseen
  double lambda[2][3] = {};   // lambda 0, lambda 10
  double exemplars[4][3] = {};
  double rounds[2][3] = {};   // FT, IDA after round 2
  std::size_t base_anchors = 0, final_anchors = 0;
};

SeedResult run_seed(int s) {
  SeedResult out;
  SyntheticSpec spec;
  spec.seed = static_cast<std::uint64_t>(s);
  BenchmarkLayout layout;
  layout.split_seed = static_cast<std::uint64_t>(s);
  const BenchmarkSplits b = make_domain_shift_benchmark(spec, layout);
  TrainConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(s);
  cfg.val_episodes = 20;
  const std::vector<Dataset> splits{b.old_test, b.new_test, b.unseen};
  EvalSettings ev;
  ev.seed = 1000 + static_cast<std::uint64_t>(s);
  ev.n_episodes = 500;
  ev.workers = 1;
  auto record = [&](double (&row)[3], const ModelSnapshot& snap) {
    const auto r = evaluate_splits(snap, splits, ev);
    for (int k = 0; k < 3; ++k) row[k] = r[k].mean_acc;
  };

  const ModelSnapshot base = train_base(b.old_train, b.old_val, cfg).snapshot;
  out.base_anchors = base.anchors().size();
  record(out.methods[0], base);
  Rng rng(derive_seed(cfg.seed, 100));
  const ExemplarSet ex = reserve_exemplars(b.old_train, cfg.exemplars_per_class, rng);
  const MethodKind incremental[] = {MethodKind::FT, MethodKind::DFA, MethodKind::IDA, MethodKind::EIML};
  for (int i = 0; i < 4; ++i)
    record(out.methods[i + 1], train_incremental(base, b.new_train, b.new_val, incremental[i], cfg, &ex).snapshot);
  record(out.methods[5], train_paragon(concat_datasets(b.old_train, b.new_train, "union"),
                                       concat_datasets(b.old_val, b.new_val, "union_val"), cfg)
                             .snapshot);

  const std::vector<double> lambdas{0.0, 10.0};
  const SweepTable lt = sweep_lambda(base, b.new_train, b.new_val, splits, lambdas, cfg, ev);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) out.lambda[i][k] = lt.reports[i][k].mean_acc;
  const SweepTable et =
      sweep_exemplars(base, b.old_train, b.new_train, b.new_val, splits, kDefaultExemplarCounts, cfg, ev);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) out.exemplars[i][k] = et.reports[i][k].mean_acc;

  const auto cls = b.new_train.classes();
  const std::vector<ClassId> c1(cls.begin(), cls.begin() + 8), c2(cls.begin() + 8, cls.end());
  const std::vector<RoundData> rounds{{subset_classes(b.new_train, c1, "r1"), subset_classes(b.new_val, c1, "r1v")},
                                      {subset_classes(b.new_train, c2, "r2"), subset_classes(b.new_val, c2, "r2v")}};
  const MethodKind chained[] = {MethodKind::FT, MethodKind::IDA};
  for (int m = 0; m < 2; ++m) {
    const auto res = run_rounds(base, rounds, chained[m], cfg, &b.old_train);
    record(out.rounds[m], res.back().snapshot);
    out.final_anchors = res.back().snapshot.anchors().size();
  }
  return out;
}

void benchmark_criteria() {
  const auto start = Clock::now();
  std::vector<std::future<SeedResult>> jobs;
  for (int s = 0; s < kSeeds; ++s) jobs.push_back(std::async(std::launch::async, run_seed, s));
  SeedResult mean;
  bool anchors_ok = true;
  for (auto& j : jobs) {
    const SeedResult r = j.get();
    auto acc = [](auto& dst, const auto& src, std::size_t rows) {
      for (std::size_t i = 0; i < rows; ++i)
        for (int k = 0; k < 3; ++k) dst[i][k] += 100.0 * src[i][k] / kSeeds;
    };
    acc(mean.methods, r.methods, 6);
    acc(mean.lambda, r.lambda, 2);
    acc(mean.exemplars, r.exemplars, 4);
    acc(mean.rounds, r.rounds, 2);
    anchors_ok = anchors_ok && r.final_anchors == r.base_anchors + 8 + 8;
    mean.base_anchors = r.base_anchors;
    mean.final_anchors = r.final_anchors;
  }
  const auto& m = mean.methods;
  const double gap_old = m[3][kOld] - m[1][kOld];
  const double gain_unseen = m[3][kUnseen] - m[0][kUnseen];
  double best_unseen = 0;
  for (int i = 0; i < 5; ++i) best_unseen = std::max(best_unseen, m[i][kUnseen]);
  const double par_margin = m[5][kUnseen] - best_unseen;
  std::printf("  5-seed means (old / new / unseen):\n");
  const char* names[] = {"NU", "FT", "DFA", "IDA", "EIML", "PAR"};
  for (int i = 0; i < 6; ++i)
    std::printf("    %-4s %6.2f %6.2f %6.2f\n", names[i], m[i][kOld], m[i][kNew], m[i][kUnseen]);
  report(4, "forgetting ordering", gap_old >= 5.0 && gain_unseen >= 3.0 && par_margin >= -1.0,
         fmt("IDA-FT old %+.2f >= 5, IDA-NU unseen %+.2f >= 3, PAR-best unseen %+.2f >= -1", gap_old, gain_unseen,
             par_margin),
         start);

  const auto& l = mean.lambda;
  const double old_up = l[1][kOld] - l[0][kOld], new_down = l[0][kNew] - l[1][kNew];
  report(5, "lambda trend", old_up >= 3.0 && new_down >= 2.0,
         fmt("old %.2f -> %.2f (%+.2f >= 3), new %.2f -> %.2f (%+.2f >= 2)", l[0][kOld], l[1][kOld], old_up,
             l[0][kNew], l[1][kNew], new_down),
         start);

  double spread[3];
  for (int k = 0; k < 3; ++k) {
    double lo = 101, hi = -1;
    for (int i = 0; i < 4; ++i) lo = std::min(lo, mean.exemplars[i][k]), hi = std::max(hi, mean.exemplars[i][k]);
    spread[k] = hi - lo;
  }
  report(6, "exemplar flatness", spread[0] <= 2.0 && spread[1] <= 2.0 && spread[2] <= 2.0,
         fmt("spread old %.2f, new %.2f, unseen %.2f <= 2", spread[0], spread[1], spread[2]), start);

  const double round_gap = mean.rounds[1][kOld] - mean.rounds[0][kOld];
  report(7, "multi-round", anchors_ok && round_gap >= 3.0,
         fmt("anchors %zu = %zu+8+8, round-2 old IDA %.2f vs FT %.2f (%+.2f >= 3)", mean.final_anchors,
             mean.base_anchors, mean.rounds[1][kOld], mean.rounds[0][kOld], round_gap),
         start);
}

// ---------------------------------------------------------------------------

void protocol_invariants() {
  const auto start = Clock::now();
  Rng rng(21);
  std::vector<std::string> broken;

  double row_err = 0;
  for (int i = 0; i < 200; ++i) {
    const Tensor z = fixtures::random_matrix(4, 6, rng), c = fixtures::random_matrix(5, 6, rng);
    const Tensor p = discriminant(z, c, rng.uniform(0.5, 5.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0;
      for (double v : p.row(r)) s += v;
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
  }
  if (row_err > 1e-12) broken.push_back("discriminant rows");

  double min_kl = 0;
  for (int i = 0; i < 1000; ++i) {
    const Tensor p = kernels::softmax(fixtures::random_matrix(1, 6, rng), 1.0);
    const Tensor q = kernels::softmax(fixtures::random_matrix(1, 6, rng), 1.0);
    min_kl = std::min(min_kl, kernels::kl_div(p, q));
  }
  if (min_kl < 0) broken.push_back("kl sign");

  double proto_err = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor z = fixtures::random_matrix(12, 5, rng);
    std::vector<std::size_t> labels(12);
    for (std::size_t k = 0; k < 12; ++k) labels[k] = k % 4;
    const Tensor c = compute_prototypes(z, labels, 4);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 5; ++j) {
        long double m = 0;
        for (std::size_t r = k; r < 12; r += 4) m += z(r, j);
        proto_err = std::max(proto_err, static_cast<double>(std::fabs(c(k, j) - m / 3)));
      }
  }
  if (proto_err > 1e-12) broken.push_back("prototype means");

  const BenchmarkSplits b = make_domain_shift_benchmark(SyntheticSpec{});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.tasks_per_epoch = 20;
  cfg.val_episodes = 5;
  const ModelSnapshot base = train_base(b.old_train, b.old_val, cfg).snapshot;
  const std::uint64_t hash = snapshot_hash(base);
  Rng ex_rng(5);
  const ExemplarSet ex = reserve_exemplars(b.old_train, 15, ex_rng);
  for (MethodKind m : {MethodKind::FT, MethodKind::DFA, MethodKind::IDA, MethodKind::EIML})
    (void)train_incremental(base, b.new_train, b.new_val, m, cfg, &ex);
  if (snapshot_hash(base) != hash) broken.push_back("teacher hash");

  const EpisodeSpec spec{5, 5, 15};
  const EvalReport e1 = evaluate(base, b.unseen, spec, 200, 7, 1);
  const EvalReport e2 = evaluate(base, b.unseen, spec, 200, 7, 1);
  const EvalReport e4 = evaluate(base, b.unseen, spec, 200, 7, 4);
  if (!(e1 == e2) || !(e1 == e4)) broken.push_back("evaluate determinism");

  const std::vector<double> zero_one{0.0, 1.0};
  const double ci = confidence_interval(zero_one).second;
  if (std::abs(ci - 0.98) > 1e-12) broken.push_back("ci closed form");

  std::string detail = fmt("row sum err %.1e, min kl %.1e, prototype err %.1e, ci %.6f, eval %.4f", row_err, min_kl,
                           proto_err, ci, e1.mean_acc);
  for (const auto& b2 : broken) detail += ", broken: " + b2;
  report(8, "protocol invariants", broken.empty(), detail, start);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void end_to_end_reproducibility() {
  const auto start = Clock::now();
  const fs::path root = fs::temp_directory_path() / "iml_acceptance_e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path conf = root / "run.conf";
  std::ofstream(conf) << "profile = desk\nseed = 3\nmethods = [ida]\n";

  std::vector<std::map<std::string, std::string>> reports;
  int bad_exit = 0;
  for (const char* name : {"a", "b"}) {
    const std::string dir = (root / name).string();
    const std::vector<std::vector<std::string>> steps{
        {"gen-data"}, {"train-base"}, {"train-incr", "--method", "ida"}, {"eval"}, {"report"}};
    for (const auto& step : steps) {
      std::vector<std::string> args{"iml", "-c", conf.string(), "-r", dir};
      args.insert(args.end(), step.begin(), step.end());
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      std::ostringstream out, err;
      if (cli::cmd_dispatch(static_cast<int>(argv.size()), argv.data(), out, err) != 0) {
        std::fprintf(stderr, "%s", err.str().c_str());
        ++bad_exit;
      }
    }
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / "reports"))
      files[e.path().filename().string()] = slurp(e.path());
    reports.push_back(std::move(files));
  }
  const bool same = reports[0] == reports[1];
  report(9, "end-to-end reproducibility", bad_exit == 0 && same && reports[0].contains("summary.md"),
         fmt("%zu report files, %s", reports[0].size(), same ? "byte-identical" : "differ"), start);
  fs::remove_all(root);
}

}  // namespace

int main() {
  gradient_correctness();
  oracle_equivalence();
  lambda_zero_collapse();
  benchmark_criteria();
  protocol_invariants();
  end_to_end_reproducibility();
  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
