#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iml/data.hpp"
#include "iml/losses.hpp"
#include "iml/trainer.hpp"

namespace iml::cli {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::filesystem::path csv_dir;     // holds the split CSVs when source = csv
  SyntheticSpec synthetic;
  BenchmarkLayout layout;
};

struct EvalConfig {
  std::size_t episodes = 500;
  EpisodeSpec spec;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  std::size_t workers = 0;
  std::vector<double> lambda_values{0.0, 0.25, 0.5, 0.75, 1.0, 2.0, 5.0, 10.0};
  std::vector<std::size_t> exemplar_counts{15, 30, 60, 120};
  std::vector<std::size_t> cross_ways{5, 10, 20};
  std::vector<std::size_t> cross_shots{1, 5};
};

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::vector<MethodKind> methods{MethodKind::FT, MethodKind::DFA, MethodKind::EIML, MethodKind::IDA};
  DataConfig data;
  TrainConfig train;
  std::size_t rounds = 2;
  EvalConfig eval;

  std::uint64_t eval_seed() const { return eval.seed.value_or(seed); }
};

// One `key = value` assignment; keys inside a section are qualified as
// "section.key".
struct Assignment {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Structured text: `[data]`, `[train]`, `[eval]` sections of `key = value`
// lines, `#` comments, quoted strings, `[a, b]` lists. Throws ConfigError
// naming the key for unknown keys, type errors and constraint violations.
std::vector<Assignment> parse_assignments(std::istream& in);
RunConfig build_config(const std::vector<Assignment>& assignments);

// Parses the file and applies, in order: the profile, the file's keys, the
// IML_SEED environment variable, then `overrides` ("key=value").
RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const std::vector<std::string>& overrides = {});

// Every key with its resolved value, in the same format parse_config reads.
void write_resolved(std::ostream& out, const RunConfig& cfg);

}  // namespace iml::cli
