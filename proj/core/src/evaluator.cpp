#include "iml/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "iml/errors.hpp"
#include "iml/kernels.hpp"

namespace iml {

std::pair<double, double> confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("confidence_interval: need at least two values");
  const auto n = static_cast<double>(values.size());
  double total = 0.0;
  for (double v : values) total += v;
  const double mean = total / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

double episode_accuracy(const ParamStore& params, const Episode& episode) {
  const Tensor protos = compute_prototypes(embed(params, episode.support_x), episode.support_y, episode.ways());
  const Tensor dist = kernels::pairwise_sqdist(embed(params, episode.query_x), protos);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dist.rows(); ++i) {
    auto r = dist.row(i);
    const auto pred = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
    if (pred == episode.query_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dist.rows());
}

std::vector<double> episode_accuracies(const ParamStore& params, const Dataset& dataset, const EpisodeSpec& spec,
                                       std::size_t n_episodes, std::uint64_t seed, std::size_t workers) {
  spec.validate();
  std::vector<double> accs(n_episodes, 0.0);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(derive_seed(seed, i));
      accs[i] = episode_accuracy(params, sample_episode(dataset, spec, rng));
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, n_episodes));
  if (workers == 1) {
    run(0, n_episodes);
    return accs;
  }
  // Validate up front so workers do not throw.
  {
    Rng probe(derive_seed(seed, 0));
    (void)sample_episode(dataset, spec, probe);
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n_episodes + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n_episodes, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run, begin, end);
  }
  for (auto& t : pool) t.join();
  return accs;
}

EvalReport evaluate(const ParamStore& params, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t n_episodes, std::uint64_t seed, std::size_t workers) {
  if (n_episodes < 2) throw std::invalid_argument("evaluate: need at least two episodes");
  const auto accs = episode_accuracies(params, dataset, spec, n_episodes, seed, workers);
  const auto [mean, half] = confidence_interval(accs);
  return EvalReport{dataset.split_name, n_episodes, mean, half, spec, seed};
}

EvalReport evaluate(const ModelSnapshot& snapshot, const Dataset& dataset, const EpisodeSpec& spec,
                    std::size_t n_episodes, std::uint64_t seed, std::size_t workers) {
  return evaluate(snapshot.params(), dataset, spec, n_episodes, seed, workers);
}

const EvalReport& SweepTable::at(std::size_t value_index, std::string_view split) const {
  for (const auto& r : reports.at(value_index))
    if (r.split == split) return r;
  throw std::out_of_range("sweep table has no split '" + std::string(split) + "'");
}

WayShotTable cross_way_shot(std::span<const NamedSnapshot> models, std::span<const std::size_t> ways,
                            std::span<const std::size_t> shots, std::size_t queries, const Dataset& dataset,
                            std::size_t n_episodes, std::uint64_t seed, std::size_t workers) {
  if (models.empty() || ways.empty() || shots.empty()) throw std::invalid_argument("cross_way_shot: empty axis");
  const std::size_t max_ways = *std::max_element(ways.begin(), ways.end());
  if (max_ways > dataset.num_classes()) {
    throw DegenerateEpisodeError("cross_way_shot: " + std::to_string(max_ways) + "-way needs more than the " +
                                 std::to_string(dataset.num_classes()) + " classes available");
  }
  WayShotTable table;
  for (auto s : shots)
    for (auto w : ways) table.columns.push_back(EpisodeSpec{w, s, queries});
  for (const auto& m : models) {
    table.models.push_back(m.name);
    auto& row = table.cells.emplace_back();
    for (const auto& spec : table.columns) row.push_back(evaluate(*m.snapshot, dataset, spec, n_episodes, seed, workers));
  }
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    double lo = 1.0, hi = 0.0;
    for (const auto& row : table.cells) {
      lo = std::min(lo, row[c].mean_acc);
      hi = std::max(hi, row[c].mean_acc);
    }
    table.range.push_back(hi - lo);
  }
  return table;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_report_fields(std::ostream& out, const EvalReport& r) {
  out << r.split << ',' << r.n_episodes << ',' << shortest(r.mean_acc) << ',' << shortest(r.ci_halfwidth) << ','
      << r.spec.ways << ',' << r.spec.shots << ',' << r.seed;
}

template <typename T>
T parse_field(const std::string& s, std::size_t line) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad report field '" + s + "'", line);
  return v;
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "split,n,mean,ci,ways,shots,seed\n";
  for (const auto& r : reports) {
    write_report_fields(out, r);
    out << '\n';
  }
}

std::vector<EvalReport> read_report_csv(std::istream& in) {
  std::vector<EvalReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "split,n,mean,ci,ways,shots,seed") throw ParseError("unexpected report header", line_no);
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 7) throw ParseError("expected 7 report fields", line_no);
    EvalReport r;
    r.split = f[0];
    r.n_episodes = parse_field<std::size_t>(f[1], line_no);
    r.mean_acc = parse_field<double>(f[2], line_no);
    r.ci_halfwidth = parse_field<double>(f[3], line_no);
    r.spec.ways = parse_field<std::size_t>(f[4], line_no);
    r.spec.shots = parse_field<std::size_t>(f[5], line_no);
    r.seed = parse_field<std::uint64_t>(f[6], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const SweepTable& table) {
  out << "axis,value,split,n,mean,ci,ways,shots,seed\n";
  for (std::size_t v = 0; v < table.values.size(); ++v) {
    for (const auto& r : table.reports[v]) {
      out << table.axis << ',' << table.values[v] << ',';
      write_report_fields(out, r);
      out << '\n';
    }
  }
}

void write_way_shot_csv(std::ostream& out, const WayShotTable& table) {
  out << "model,split,n,mean,ci,ways,shots,seed\n";
  for (std::size_t m = 0; m < table.models.size(); ++m) {
    for (const auto& r : table.cells[m]) {
      out << table.models[m] << ',';
      write_report_fields(out, r);
      out << '\n';
    }
  }
}

std::string format_cell(const EvalReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1 %.2f", 100.0 * report.mean_acc, 100.0 * report.ci_halfwidth);
  return buf;
}

void write_way_shot_markdown(std::ostream& out, const WayShotTable& table) {
  out << "| Model |";
  for (const auto& c : table.columns) out << ' ' << c.shots << "-shot " << c.ways << "-way |";
  out << "\n|---|";
  for (std::size_t c = 0; c < table.columns.size(); ++c) out << "---|";
  out << '\n';
  for (std::size_t m = 0; m < table.models.size(); ++m) {
    out << "| " << table.models[m] << " |";
    for (const auto& r : table.cells[m]) out << ' ' << format_cell(r) << " |";
    out << '\n';
  }
  out << "| Range |";
  char buf[32];
  for (double r : table.range) {
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * r);
    out << ' ' << buf << " |";
  }
  out << '\n';
}

}  // namespace iml
