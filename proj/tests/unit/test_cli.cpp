#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "iml/errors.hpp"
#include "iml/evaluator.hpp"

using namespace iml;
using namespace iml::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "iml_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.conf";
  std::ofstream(p) << text;
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "iml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cmd_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

RunConfig from_text(const std::string& text) {
  std::istringstream in(text);
  return build_config(parse_assignments(in));
}

void write_report(const fs::path& dir, const std::string& name, std::vector<EvalReport> reports) {
  std::ofstream out(dir / name);
  write_report_csv(out, reports);
}

EvalReport rep(const std::string& split, double mean) { return EvalReport{split, 100, mean, 0.01, {5, 5, 15}, 0}; }

}  // namespace

TEST_CASE("empty config gives the desk defaults") {
  const RunConfig c = from_text("");
  CHECK(c.profile == "desk");
  CHECK(c.train.epochs == 30);
  CHECK(c.train.tasks_per_epoch == 100);
  CHECK(c.train.lambda == 1.0);
  CHECK(c.train.temperature == 2.0);
  CHECK(c.train.lr == 0.001);
  CHECK(c.train.episode == EpisodeSpec{5, 5, 15});
  CHECK(c.eval.episodes == 500);
  CHECK(c.methods.size() == 4);
  CHECK(c.train.backbone.input_dim == c.data.synthetic.dim);
}

TEST_CASE("config parsing") {
  const RunConfig c = from_text(
      "# comment\nseed = 7\nmethods = [ida, ft]\n\n[data]\ndomain_offset = 2.5\n"
      "[train]\nlambda = 0.5\nhidden_dims = [4, 5]\nkl_order = \"teacher_first\"\n[eval]\nways = 10\n");
  CHECK(c.seed == 7);
  CHECK(c.train.seed == 7);
  CHECK(c.methods == std::vector<MethodKind>{MethodKind::IDA, MethodKind::FT});
  CHECK(c.data.synthetic.resolved_offset() == std::vector<double>(16, 2.5));
  CHECK(c.train.lambda == 0.5);
  CHECK(c.train.backbone.hidden_dims == std::vector<std::size_t>{4, 5});
  CHECK(c.train.kl_order == KlOrder::TeacherFirst);
  CHECK(c.eval.spec.ways == 10);

  const RunConfig big = from_text("profile = paper-scale\n");
  CHECK(big.train.epochs == 200);
  CHECK(big.train.tasks_per_epoch == 800);
  CHECK(big.eval.episodes == 2000);
  CHECK(from_text("profile = paper-scale\n[train]\nepochs = 3\n").train.epochs == 3);

  try {
    from_text("[train]\nlambda = -1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.lambda");
  }
  try {
    from_text("[train]\nlamda = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.lamda");
  }
  CHECK_THROWS_AS(from_text("[model]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(from_text("[train]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(from_text("[train]\ntemperature = 0\n"), ConfigError);
  CHECK_THROWS_AS(from_text("profile = huge\n"), ConfigError);
}

TEST_CASE("resolved config parses back to the same values") {
  const RunConfig c = from_text("seed = 3\n[train]\nlambda = 0.125\nlr = 0.002\n[eval]\nlambda_values = [0, 1e-3]\n");
  std::ostringstream out;
  write_resolved(out, c);
  const RunConfig back = from_text(out.str());
  std::ostringstream again;
  write_resolved(again, back);
  CHECK(again.str() == out.str());
  CHECK(back.train.lambda == 0.125);
  CHECK(back.eval.lambda_values == std::vector<double>{0.0, 1e-3});
}

TEST_CASE("override order: file, IML_SEED, --set") {
  const fs::path dir = fresh_dir("order");
  const fs::path p = write_config(dir, "seed = 1\n[train]\nlambda = 2\n");
  ::unsetenv("IML_SEED");
  CHECK(parse_config(p).seed == 1);
  ::setenv("IML_SEED", "5", 1);
  CHECK(parse_config(p).seed == 5);
  CHECK(parse_config(p, {"seed=9"}).seed == 9);
  ::unsetenv("IML_SEED");
  CHECK(parse_config(p, {"train.lambda=0.5"}).train.lambda == 0.5);
  CHECK(parse_config(std::nullopt).seed == 0);
  CHECK_THROWS_AS(parse_config(p, {"train.nope=1"}), ConfigError);
  CHECK_THROWS(parse_config(dir / "missing.conf"));
}

TEST_CASE("dispatch exit codes") {
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"frobnicate"}).code == 1);
  const fs::path dir = fresh_dir("codes");
  const Result bad = run({"-r", dir.string(), "--set", "train.lambda=-1", "gen-data"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("train.lambda") != std::string::npos);
  CHECK(run({"-r", dir.string(), "train-incr", "-m", "nu"}).code == 1);
  // No reports yet.
  CHECK(run({"-r", dir.string(), "report"}).code == 2);
}

TEST_CASE("end-to-end pipeline on a fresh run directory") {
  const fs::path dir = fresh_dir("pipeline");
  const std::vector<std::string> common{"-r",    dir.string(), "--set", "train.epochs=1", "--set",
                                        "train.tasks_per_epoch=5", "--set", "train.val_episodes=2",
                                        "--set", "eval.episodes=10"};
  auto cmd = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    const Result r = run(args);
    INFO(r.err);
    CHECK(r.code == 0);
    return r;
  };
  std::vector<std::string> early = common;
  early.push_back("eval");
  CHECK(run(early).code == 2);  // nothing trained yet
  cmd({"gen-data"});
  CHECK(fs::exists(dir / "data" / "old_train.csv"));
  CHECK(fs::exists(dir / "data" / "unseen.csv"));
  cmd({"train-base"});
  cmd({"train-incr", "-m", "ida"});
  cmd({"eval", "--split", "old"});
  CHECK(fs::exists(dir / "config.resolved"));
  CHECK(fs::exists(dir / "snapshots" / "base.imlsnap"));
  CHECK(fs::exists(dir / "snapshots" / "ida.imlsnap"));
  CHECK(fs::exists(dir / "reports" / "IDA_old_5w5s.csv"));
  const Result rep = cmd({"report"});
  CHECK(fs::exists(dir / "reports" / "summary.md"));
  CHECK(rep.out.find("IDA") != std::string::npos);
}

TEST_CASE("emit_report layout") {
  const fs::path dir = fresh_dir("report");
  fs::create_directories(dir / "reports");
  const fs::path r = dir / "reports";
  write_report(r, "IDA_all_5w5s.csv", {rep("old", 0.9), rep("new", 0.8), rep("unseen", 0.7)});
  write_report(r, "FT_all_5w5s.csv", {rep("old", 0.6), rep("new", 0.85), rep("unseen", 0.7)});
  write_report(r, "NU_all_5w5s.csv", {rep("old", 0.95), rep("new", 0.5), rep("unseen", 0.6)});
  write_report(r, "PAR_all_5w5s.csv", {rep("old", 0.99), rep("new", 0.99), rep("unseen", 0.99)});
  write_report(r, "sweep_lambda.csv", {});

  const std::string md = emit_report(dir);
  CHECK(md.rfind("### 5-shot 5-way\n", 0) == 0);
  CHECK(md.find("| Method | old | new | unseen |") != std::string::npos);
  const auto nu = md.find("| NU |"), ft = md.find("| FT |"), ida = md.find("| IDA |"), par = md.find("| PAR |");
  CHECK(nu < ft);
  CHECK(ft < ida);
  CHECK(ida < par);
  CHECK(md.find("| IDA | **90.00 \xC2\xB1 1.00** |") != std::string::npos);
  CHECK(md.find("| FT | 60.00 \xC2\xB1 1.00 | **85.00 \xC2\xB1 1.00** | **70.00 \xC2\xB1 1.00** |") != std::string::npos);
  // NU and PAR are references, never bolded.
  CHECK(md.find("| NU | 95.00 \xC2\xB1 1.00 |") != std::string::npos);
  CHECK(md.find("| PAR | 99.00") != std::string::npos);

  std::ifstream in(r / "summary.md");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == md);
}
