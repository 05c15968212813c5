#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "config.hpp"
#include "iml/anchorstore.hpp"
#include "iml/errors.hpp"
#include "iml/evaluator.hpp"
#include "iml/sweeps.hpp"
#include "iml/trainer.hpp"

namespace iml::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kExemplarStream = 100;

const char* const kSplitFiles[] = {"old_train", "old_val", "old_test", "new_train", "new_val", "new_test", "unseen"};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct Run {
  RunConfig cfg;
  fs::path dir;

  fs::path snapshots() const { return dir / "snapshots"; }
  fs::path logs() const { return dir / "logs"; }
  fs::path reports() const { return dir / "reports"; }
  fs::path data_dir() const { return cfg.data.source == "csv" ? cfg.data.csv_dir : dir / "data"; }
  fs::path snapshot_path(std::string_view name) const { return snapshots() / (std::string(name) + ".imlsnap"); }
};

Run open_run(const std::optional<fs::path>& config, const std::optional<fs::path>& run_dir,
             const std::vector<std::string>& overrides) {
  Run run{parse_config(config, overrides), {}};
  if (run_dir) run.cfg.output_dir = *run_dir;
  run.dir = run.cfg.output_dir;
  for (const auto& d : {run.dir, run.snapshots(), run.logs(), run.reports()}) fs::create_directories(d);
  std::ofstream out(run.dir / "config.resolved");
  write_resolved(out, run.cfg);
  return run;
}

void generate_data(const Run& run) {
  SyntheticSpec spec = run.cfg.data.synthetic;
  spec.seed = run.cfg.seed;
  BenchmarkLayout layout = run.cfg.data.layout;
  layout.split_seed = run.cfg.seed;
  const BenchmarkSplits b = make_domain_shift_benchmark(spec, layout);
  const Dataset* parts[] = {&b.old_train, &b.old_val, &b.old_test, &b.new_train, &b.new_val, &b.new_test, &b.unseen};
  fs::create_directories(run.data_dir());
  for (std::size_t i = 0; i < std::size(kSplitFiles); ++i) {
    save_dataset(*parts[i], run.data_dir() / (std::string(kSplitFiles[i]) + ".csv"));
  }
}

bool data_present(const Run& run) {
  for (const char* name : kSplitFiles)
    if (!fs::exists(run.data_dir() / (std::string(name) + ".csv"))) return false;
  return true;
}

// Loads the benchmark splits, generating synthetic data first if needed.
// Also fixes the backbone input width to the data's feature count.
BenchmarkSplits load_data(Run& run) {
  if (!data_present(run)) {
    if (run.cfg.data.source == "csv") throw std::runtime_error("missing CSV splits in " + run.data_dir().string());
    generate_data(run);
  }
  auto load = [&](const char* file, const char* name) {
    Dataset ds = load_dataset(run.data_dir() / (std::string(file) + ".csv"));
    ds.split_name = name;
    return ds;
  };
  BenchmarkSplits b{load("old_train", "old_train"), load("old_val", "old_val"), load("old_test", "old"),
                    load("new_train", "new_train"), load("new_val", "new_val"), load("new_test", "new"),
                    load("unseen", "unseen")};
  run.cfg.train.backbone.input_dim = b.old_train.dim();
  return b;
}

std::vector<Dataset> test_splits(const BenchmarkSplits& b, const std::string& which) {
  if (which == "old") return {b.old_test};
  if (which == "new") return {b.new_test};
  if (which == "unseen") return {b.unseen};
  if (which == "all") return {b.old_test, b.new_test, b.unseen};
  throw UsageError("--split must be one of old, new, unseen, all");
}

EvalSettings eval_settings(const Run& run) {
  return EvalSettings{run.cfg.eval.spec, run.cfg.eval.episodes, run.cfg.eval_seed(), run.cfg.eval.workers};
}

ModelSnapshot load_required(const Run& run, std::string_view name, std::string_view produced_by) {
  const fs::path p = run.snapshot_path(name);
  if (!fs::exists(p)) {
    throw std::runtime_error("missing snapshot " + p.string() + " (run `" + std::string(produced_by) + "` first)");
  }
  return load_snapshot(p);
}

void save_trained(const Run& run, std::string_view name, const TrainResult& result, std::ostream& out) {
  save_snapshot(result.snapshot, run.snapshot_path(name));
  write_train_log(run.logs() / (std::string(name) + ".csv"), result.log);
  out << "wrote " << run.snapshot_path(name).string() << '\n';
}

ExemplarSet exemplars_for(const Run& run, const Dataset& old_train, std::size_t per_class) {
  Rng rng(derive_seed(run.cfg.seed, kExemplarStream));
  return reserve_exemplars(old_train, per_class, rng);
}

std::string report_file_name(std::string_view method, const EvalReport& r) {
  return std::string(method) + "_" + r.split + "_" + std::to_string(r.spec.ways) + "w" + std::to_string(r.spec.shots) +
         "s.csv";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Snapshots present in the run directory, in table order.
std::vector<std::pair<std::string, ModelSnapshot>> available_models(const Run& run) {
  std::vector<std::pair<std::string, ModelSnapshot>> out;
  const std::pair<const char*, const char*> names[] = {{"NU", "base"}, {"FT", "ft"},    {"DFA", "dfa"},
                                                       {"EIML", "eiml"}, {"IDA", "ida"}, {"PAR", "par"}};
  for (const auto& [label, file] : names) {
    const fs::path p = run.snapshot_path(file);
    if (fs::exists(p)) out.emplace_back(label, load_snapshot(p));
  }
  return out;
}

// --- subcommands --------------------------------------------------------

void cmd_gen_data(Run& run, std::ostream& out) {
  if (run.cfg.data.source != "synthetic") throw std::runtime_error("gen-data needs data.source = \"synthetic\"");
  generate_data(run);
  out << "wrote " << std::size(kSplitFiles) << " splits to " << run.data_dir().string() << '\n';
}

void cmd_train_base(Run& run, std::ostream& out) {
  const auto b = load_data(run);
  save_trained(run, "base", train_base(b.old_train, b.old_val, run.cfg.train), out);
}

void cmd_train_paragon(Run& run, std::ostream& out) {
  const auto b = load_data(run);
  const Dataset train = concat_datasets(b.old_train, b.new_train, "union_train");
  const Dataset val = concat_datasets(b.old_val, b.new_val, "union_val");
  save_trained(run, "par", train_paragon(train, val, run.cfg.train), out);
}

std::vector<MethodKind> incremental_methods(const Run& run, const std::string& method) {
  if (method.empty()) return run.cfg.methods;
  MethodKind m;
  try {
    m = parse_method(method);
  } catch (const std::invalid_argument&) {
    throw UsageError("unknown method '" + method + "' (expected ft, dfa, ida or eiml)");
  }
  if (m == MethodKind::NU) throw UsageError("--method nu: the no-update baseline trains nothing (use train-base)");
  if (m == MethodKind::PAR) throw UsageError("--method par: use train-paragon");
  return {m};
}

void cmd_train_incr(Run& run, const std::string& method, std::ostream& out) {
  const auto methods = incremental_methods(run, method);
  const auto b = load_data(run);
  const ModelSnapshot base = load_required(run, "base", "train-base");
  for (MethodKind m : methods) {
    std::optional<ExemplarSet> ex;
    if (m == MethodKind::EIML) ex = exemplars_for(run, b.old_train, run.cfg.train.exemplars_per_class);
    const auto result = train_incremental(base, b.new_train, b.new_val, m, run.cfg.train, ex ? &*ex : nullptr);
    save_trained(run, lower(method_name(m)), result, out);
  }
}

void cmd_eval(Run& run, const std::string& snapshot, const std::string& split, std::ostream& out) {
  const auto splits_wanted = split.empty() ? std::string("all") : split;
  const auto b = load_data(run);
  const auto splits = test_splits(b, splits_wanted);
  std::vector<std::pair<std::string, ModelSnapshot>> models;
  if (!snapshot.empty()) {
    if (!fs::exists(snapshot)) throw std::runtime_error("snapshot not found: " + snapshot);
    ModelSnapshot s = load_snapshot(snapshot);
    models.emplace_back(s.meta().method, std::move(s));
  } else {
    models = available_models(run);
    if (models.empty()) throw std::runtime_error("no snapshots in " + run.snapshots().string());
  }
  for (const auto& [label, snap] : models) {
    for (const auto& r : evaluate_splits(snap, splits, eval_settings(run))) {
      std::ostringstream csv;
      write_report_csv(csv, std::span<const EvalReport>(&r, 1));
      const fs::path p = run.reports() / report_file_name(label, r);
      write_file(p, csv.str());
      out << label << ' ' << r.split << ' ' << format_cell(r) << "  -> " << p.string() << '\n';
    }
  }
}

void cmd_sweep_lambda(Run& run, std::ostream& out) {
  const auto b = load_data(run);
  const ModelSnapshot base = load_required(run, "base", "train-base");
  const auto table = sweep_lambda(base, b.new_train, b.new_val, test_splits(b, "all"), run.cfg.eval.lambda_values,
                                  run.cfg.train, eval_settings(run));
  std::ostringstream csv;
  write_sweep_csv(csv, table);
  write_file(run.reports() / "sweep_lambda.csv", csv.str());
  out << csv.str();
}

void cmd_sweep_exemplars(Run& run, std::ostream& out) {
  const auto b = load_data(run);
  const ModelSnapshot base = load_required(run, "base", "train-base");
  const auto table = sweep_exemplars(base, b.old_train, b.new_train, b.new_val, test_splits(b, "all"),
                                     run.cfg.eval.exemplar_counts, run.cfg.train, eval_settings(run));
  std::ostringstream csv;
  write_sweep_csv(csv, table);
  write_file(run.reports() / "sweep_exemplars.csv", csv.str());
  out << csv.str();
}

void cmd_cross_way_shot(Run& run, const std::string& split, std::ostream& out) {
  const auto b = load_data(run);
  const auto splits = test_splits(b, split.empty() ? "unseen" : split);
  if (splits.size() != 1) throw UsageError("cross-way-shot evaluates a single split");
  const auto models = available_models(run);
  if (models.empty()) throw std::runtime_error("no snapshots in " + run.snapshots().string());
  std::vector<NamedSnapshot> named;
  for (const auto& [label, snap] : models) named.push_back({label, &snap});
  const auto table = cross_way_shot(named, run.cfg.eval.cross_ways, run.cfg.eval.cross_shots,
                                    run.cfg.eval.spec.queries, splits.front(), run.cfg.eval.episodes,
                                    run.cfg.eval_seed(), run.cfg.eval.workers);
  std::ostringstream csv, md;
  write_way_shot_csv(csv, table);
  write_way_shot_markdown(md, table);
  write_file(run.reports() / "cross_way_shot.csv", csv.str());
  write_file(run.reports() / "cross_way_shot.md", md.str());
  out << md.str();
}

void cmd_rounds(Run& run, const std::string& method, std::ostream& out) {
  const auto methods = incremental_methods(run, method.empty() ? "ida" : method);
  const MethodKind m = methods.front();
  const auto b = load_data(run);
  const ModelSnapshot base = load_required(run, "base", "train-base");
  const auto classes = b.new_train.classes();
  const std::size_t n_rounds = run.cfg.rounds;
  if (classes.size() < 2 * n_rounds) {
    throw std::runtime_error("rounds: " + std::to_string(classes.size()) + " new classes cannot fill " +
                             std::to_string(n_rounds) + " rounds of at least two classes");
  }
  std::vector<RoundData> rounds;
  for (std::size_t r = 0; r < n_rounds; ++r) {
    const std::size_t lo = r * classes.size() / n_rounds, hi = (r + 1) * classes.size() / n_rounds;
    const std::vector<ClassId> part(classes.begin() + static_cast<std::ptrdiff_t>(lo),
                                    classes.begin() + static_cast<std::ptrdiff_t>(hi));
    rounds.push_back({subset_classes(b.new_train, part, "new_train"), subset_classes(b.new_val, part, "new_val")});
  }
  const auto results = run_rounds(base, rounds, m, run.cfg.train, &b.old_train);
  fs::create_directories(run.snapshots() / "rounds");
  SweepTable table;
  table.axis = "round";
  const std::string name = lower(method_name(m));
  for (std::size_t r = 0; r < results.size(); ++r) {
    const std::string stem = name + "_r" + std::to_string(r + 1);
    save_snapshot(results[r].snapshot, run.snapshots() / "rounds" / (stem + ".imlsnap"));
    write_train_log(run.logs() / ("rounds_" + stem + ".csv"), results[r].log);
    table.values.push_back(std::to_string(r + 1));
    table.reports.push_back(evaluate_splits(results[r].snapshot, test_splits(b, "all"), eval_settings(run)));
  }
  std::ostringstream csv;
  write_sweep_csv(csv, table);
  write_file(run.reports() / ("rounds_" + name + ".csv"), csv.str());
  out << csv.str() << "anchors after round " << results.size() << ": " << results.back().snapshot.anchors().size()
      << '\n';
}

}  // namespace

// --- report ---------------------------------------------------------------

std::string emit_report(const fs::path& run_dir) {
  const fs::path reports = run_dir / "reports";
  if (!fs::is_directory(reports)) throw std::runtime_error("no reports directory in " + run_dir.string());

  // (ways, shots) -> method -> split -> report
  std::map<std::pair<std::size_t, std::size_t>, std::map<std::string, std::map<std::string, EvalReport>>> tables;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(reports))
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const std::string stem = path.stem().string();
    const std::string label = stem.substr(0, stem.find('_'));
    try {
      (void)parse_method(label);
    } catch (const std::invalid_argument&) {
      continue;  // sweep, rounds and way/shot files
    }
    std::ifstream in(path);
    for (auto& r : read_report_csv(in)) {
      tables[{r.spec.ways, r.spec.shots}][std::string(method_name(parse_method(label)))][r.split] = r;
    }
  }
  if (tables.empty()) throw std::runtime_error("no evaluation reports in " + reports.string());

  const std::vector<std::string> order{"NU", "FT", "DFA", "EIML", "IDA", "PAR"};
  const std::vector<std::string> preferred_splits{"old", "new", "unseen"};
  std::ostringstream md;
  bool first = true;
  for (const auto& [ws, rows] : tables) {
    std::vector<std::string> splits;
    std::set<std::string> seen;
    for (const auto& [m, by_split] : rows)
      for (const auto& [s, r] : by_split) seen.insert(s);
    for (const auto& s : preferred_splits)
      if (seen.erase(s)) splits.push_back(s);
    splits.insert(splits.end(), seen.begin(), seen.end());

    std::map<std::string, double> best;
    for (const auto& s : splits) {
      for (const auto& [m, by_split] : rows) {
        if (m == "NU" || m == "PAR" || !by_split.contains(s)) continue;
        const double v = by_split.at(s).mean_acc;
        if (!best.contains(s) || v > best[s]) best[s] = v;
      }
    }

    if (!first) md << '\n';
    first = false;
    md << "### " << ws.second << "-shot " << ws.first << "-way\n\n| Method |";
    for (const auto& s : splits) md << ' ' << s << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < splits.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& m : order) {
      if (!rows.contains(m)) continue;
      const auto& by_split = rows.at(m);
      md << "| " << m << " |";
      for (const auto& s : splits) {
        if (!by_split.contains(s)) {
          md << " - |";
          continue;
        }
        const auto& r = by_split.at(s);
        const bool bold = m != "NU" && m != "PAR" && best.contains(s) && r.mean_acc == best.at(s);
        md << ' ' << (bold ? "**" : "") << format_cell(r) << (bold ? "**" : "") << " |";
      }
      md << '\n';
    }
  }
  write_file(reports / "summary.md", md.str());
  return md.str();
}

// --- dispatch -------------------------------------------------------------

int cmd_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Incremental meta-learning with indirect discriminant alignment", "iml"};
  app.require_subcommand(1);
  std::optional<fs::path> config_path;
  std::optional<fs::path> run_dir;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "Run configuration file");
  app.add_option("-r,--run-dir", run_dir, "Run directory (default: output_dir from the config)");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.lambda=0.5");
  app.fallthrough();

  std::string method, snapshot, split;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark CSVs");
  auto* base = app.add_subcommand("train-base", "Meta-train the base model on old classes");
  auto* incr = app.add_subcommand("train-incr", "Incrementally train the base model on new classes");
  incr->add_option("-m,--method", method, "ft, dfa, ida or eiml (default: every method in the config)");
  auto* par = app.add_subcommand("train-paragon", "Train from scratch on old and new classes");
  auto* ev = app.add_subcommand("eval", "Evaluate snapshots and write report CSVs");
  ev->add_option("-s,--snapshot", snapshot, "Snapshot file (default: every snapshot in the run)");
  ev->add_option("--split", split, "old, new, unseen or all (default all)");
  auto* sl = app.add_subcommand("sweep-lambda", "IDA runs over the lambda grid");
  auto* se = app.add_subcommand("sweep-exemplars", "EIML runs over exemplar counts");
  auto* cws = app.add_subcommand("cross-way-shot", "Evaluate every snapshot under each (ways, shots) pair");
  cws->add_option("--split", split, "old, new or unseen (default unseen)");
  auto* rounds = app.add_subcommand("rounds", "Chain incremental rounds over chunks of the new classes");
  rounds->add_option("-m,--method", method, "ft, dfa, ida or eiml (default ida)");
  auto* rep = app.add_subcommand("report", "Write markdown tables from the report CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (argc > 1) err << "error: " << e.what() << "\n\n";
    err << app.help();
    return 1;
  }

  try {
    Run run = open_run(config_path, run_dir, overrides);
    if (gen->parsed()) cmd_gen_data(run, out);
    else if (base->parsed()) cmd_train_base(run, out);
    else if (incr->parsed()) cmd_train_incr(run, method, out);
    else if (par->parsed()) cmd_train_paragon(run, out);
    else if (ev->parsed()) cmd_eval(run, snapshot, split, out);
    else if (sl->parsed()) cmd_sweep_lambda(run, out);
    else if (se->parsed()) cmd_sweep_exemplars(run, out);
    else if (cws->parsed()) cmd_cross_way_shot(run, split, out);
    else if (rounds->parsed()) cmd_rounds(run, method, out);
    else if (rep->parsed()) out << emit_report(run.dir);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace iml::cli
