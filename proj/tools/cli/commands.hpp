#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace iml::cli {

// Bad command-line usage; reported with exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Exit codes: 0 success, 1 usage error, 2 runtime error.
int cmd_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Collects reports/<METHOD>_<split>_<W>w<S>s.csv files and writes one markdown
// table per (ways, shots) to reports/summary.md. Returns the markdown.
std::string emit_report(const std::filesystem::path& run_dir);

}  // namespace iml::cli
