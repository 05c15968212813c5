#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "iml/evaluator.hpp"

using namespace iml;

namespace {

ModelSnapshot random_snapshot(std::size_t dim, std::uint64_t seed) {
  const BackboneConfig cfg{dim, {8}, 6};
  return freeze_snapshot(cfg, init_backbone(cfg, seed), AnchorSet{}, SnapshotMeta{seed, 0, "NU"});
}

}  // namespace

TEST_CASE("confidence_interval") {
  const std::vector<double> a{0.8, 0.8, 0.8, 0.8};
  auto [m, ci] = confidence_interval(a);
  CHECK(m == doctest::Approx(0.8));
  CHECK(ci == 0.0);

  const std::vector<double> b{0.0, 1.0};
  auto [m2, ci2] = confidence_interval(b);
  CHECK(m2 == 0.5);
  CHECK(ci2 == doctest::Approx(1.96 * std::sqrt(0.5) / std::sqrt(2.0)).epsilon(1e-14));

  Rng rng(1);
  std::vector<double> v(200);
  for (auto& x : v) x = rng.uniform();
  long double s = 0, ss = 0;
  for (double x : v) s += x;
  const long double mean = s / v.size();
  for (double x : v) ss += (x - mean) * (x - mean);
  const long double sd = std::sqrt(ss / (v.size() - 1));
  auto [m3, ci3] = confidence_interval(v);
  CHECK(std::abs(m3 - static_cast<double>(mean)) <= 1e-14);
  CHECK(std::abs(ci3 - static_cast<double>(1.96L * sd / std::sqrt(200.0L))) <= 1e-14);

  const std::vector<double> one{0.3};
  CHECK_THROWS(confidence_interval(one));
}

TEST_CASE("episode_accuracy on a hand-built episode") {
  const ParamStore id({Tensor::matrix({{1, 0}, {0, 1}}), Tensor::zeros({2})});
  Episode e;
  e.support_x = Tensor::matrix({{0, 0}, {4, 0}});
  e.support_y = {0, 1};
  e.query_x = Tensor::matrix({{1, 0}, {3, 0}, {2.5, 0}, {1.5, 0}});
  e.query_y = {0, 1, 0, 0};
  e.class_map = {0, 1};
  CHECK(episode_accuracy(id, e) == 0.75);
  // Equidistant query goes to the lowest local index.
  e.query_x = Tensor::matrix({{2, 0}});
  e.query_y = {0};
  CHECK(episode_accuracy(id, e) == 1.0);
}

TEST_CASE("evaluate") {
  const Dataset tight = fixtures::clusters(10, 25, 8, 1e-6, 2);
  const ModelSnapshot s = random_snapshot(8, 3);
  const EpisodeSpec spec{5, 5, 15};
  const EvalReport r = evaluate(s, tight, spec, 50, 7);
  CHECK(r.n_episodes == 50);
  CHECK(r.seed == 7);
  CHECK(r.spec == spec);
  CHECK(r.split == "clusters");
  CHECK(r.mean_acc == 1.0);
  CHECK(r.ci_halfwidth == 0.0);

  // Pure noise: one shared center for every class.
  Rng rng(4);
  std::vector<double> data;
  std::vector<ClassId> labels;
  for (ClassId c = 0; c < 10; ++c)
    for (int i = 0; i < 25; ++i) {
      for (int j = 0; j < 8; ++j) data.push_back(rng.normal());
      labels.push_back(c);
    }
  const Dataset noise = Dataset::from_rows(Tensor::matrix(250, 8, data), labels, "noise");
  const EvalReport chance = evaluate(s, noise, spec, 400, 1);
  CHECK(chance.mean_acc >= 0.1);
  CHECK(chance.mean_acc <= 0.35);

  const Dataset ds = fixtures::clusters(10, 25, 8, 0.8, 5);
  const auto serial = episode_accuracies(s.params(), ds, spec, 64, 9, 1);
  CHECK(episode_accuracies(s.params(), ds, spec, 64, 9, 4) == serial);
  CHECK(episode_accuracies(s.params(), ds, spec, 64, 9, 0) == serial);
  // A prefix of a longer run matches the shorter run.
  const auto longer = episode_accuracies(s.params(), ds, spec, 100, 9, 3);
  CHECK(std::equal(serial.begin(), serial.end(), longer.begin()));

  const std::uint64_t h = snapshot_hash(s);
  (void)evaluate(s, ds, spec, 20, 1);
  CHECK(snapshot_hash(s) == h);
}

TEST_CASE("cross_way_shot") {
  const Dataset ds = fixtures::clusters(12, 30, 8, 0.8, 6);
  const ModelSnapshot a = random_snapshot(8, 1), b = random_snapshot(8, 2);
  const std::vector<NamedSnapshot> models{{"A", &a}, {"B", &b}};
  const std::vector<std::size_t> ways{5, 10}, shots{1, 5};
  const WayShotTable t = cross_way_shot(models, ways, shots, 15, ds, 30, 3);
  REQUIRE(t.columns.size() == 4);
  REQUIRE(t.cells.size() == 2);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t c = 0; c < 4; ++c) {
      const EvalReport direct = evaluate(*models[m].snapshot, ds, t.columns[c], 30, 3);
      CHECK(t.cells[m][c] == direct);
    }
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(t.range[c] == std::abs(t.cells[0][c].mean_acc - t.cells[1][c].mean_acc));

  std::ostringstream md;
  write_way_shot_markdown(md, t);
  CHECK(md.str().find("| Range |") != std::string::npos);
  CHECK(md.str().find("1-shot 5-way") != std::string::npos);
}

TEST_CASE("report CSV round trip and formatting") {
  std::vector<EvalReport> reports{{"old", 500, 0.74651234567, 0.0049, EpisodeSpec{5, 5, 15}, 1000},
                                  {"unseen", 10, 1.0 / 3.0, 0.1, EpisodeSpec{10, 1, 15}, 2}};
  std::ostringstream out;
  write_report_csv(out, reports);
  CHECK(out.str().rfind("split,n,mean,ci,ways,shots,seed\n", 0) == 0);
  std::istringstream in(out.str());
  const auto back = read_report_csv(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].split == "old");
  CHECK(back[0].mean_acc == reports[0].mean_acc);
  CHECK(back[1].ci_halfwidth == reports[1].ci_halfwidth);
  CHECK(back[1].spec.ways == 10);
  CHECK(back[1].spec.shots == 1);
  CHECK(back[1].seed == 2);

  CHECK(format_cell(reports[0]) == "74.65 \xC2\xB1 0.49");
  CHECK(format_cell(EvalReport{"x", 2, 1.0, 0.0, {}, 0}) == "100.00 \xC2\xB1 0.00");
}
