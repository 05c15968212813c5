#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "iml/errors.hpp"

namespace iml::cli {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& key, const std::string& raw) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return raw.substr(1, raw.size() - 2);
  if (raw.find('"') != std::string::npos) throw ConfigError(key, "unbalanced quotes in '" + raw + "'");
  return raw;
}

std::vector<std::string> split_list(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError(key, "expected a list like [a, b]");
  std::vector<std::string> items;
  const std::string body = trim(std::string_view(v).substr(1, v.size() - 2));
  if (body.empty()) return items;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(unquote(key, trim(item)));
  return items;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = unquote(key, trim(raw));
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if constexpr (std::is_unsigned_v<T>) {
    if (!s.empty() && s.front() == '-') throw ConfigError(key, "must be a non-negative integer, got '" + s + "'");
  }
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last) {
    throw ConfigError(key, std::string(std::is_floating_point_v<T> ? "expected a number" : "expected an integer") +
                               ", got '" + s + "'");
  }
  return v;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  for (const auto& item : split_list(key, raw)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_list(const std::vector<T>& values, const std::function<std::string(const T&)>& f) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += f(values[i]);
  }
  return out + "]";
}

std::string quote(const std::string& s) { return '"' + s + '"'; }

struct Key {
  std::function<void(RunConfig&, const std::string& key, const std::string& raw)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_value(double v) { return fmt(v); }
template <typename T>
  requires std::is_integral_v<T>
std::string fmt_value(T v) {
  return std::to_string(v);
}

// Accessor-based keys keep the table below compact.
template <typename T, typename Access>
Key field(Access access) {
  return {[access](RunConfig& c, const std::string& k, const std::string& v) { access(c) = parse_number<T>(k, v); },
          [access](const RunConfig& c) { return fmt_value(access(const_cast<RunConfig&>(c))); }};
}

template <typename T, typename Access>
Key list_field(Access access) {
  return {[access](RunConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_number_list<T>(k, v);
          },
          [access](const RunConfig& c) {
            return fmt_list<T>(access(const_cast<RunConfig&>(c)), [](const T& x) { return fmt_value(x); });
          }};
}

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    t["profile"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                      const auto p = unquote(k, trim(v));
                      if (p != "desk" && p != "paper-scale") throw ConfigError(k, "must be \"desk\" or \"paper-scale\"");
                      c.profile = p;
                    },
                    [](const RunConfig& c) { return quote(c.profile); }};
    t["seed"] = field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; });
    t["output_dir"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         c.output_dir = unquote(k, trim(v));
                       },
                       [](const RunConfig& c) { return quote(c.output_dir.string()); }};
    t["methods"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                      c.methods.clear();
                      for (const auto& item : split_list(k, v)) {
                        MethodKind m;
                        try {
                          m = parse_method(item);
                        } catch (const std::invalid_argument&) {
                          throw ConfigError(k, "unknown method '" + item + "'");
                        }
                        if (m == MethodKind::NU || m == MethodKind::PAR) {
                          throw ConfigError(k, "only incremental methods (ft, dfa, eiml, ida) may be listed");
                        }
                        c.methods.push_back(m);
                      }
                    },
                    [](const RunConfig& c) {
                      return fmt_list<MethodKind>(c.methods, [](const MethodKind& m) {
                        std::string s(method_name(m));
                        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
                        return s;
                      });
                    }};

    t["data.source"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                          const auto s = unquote(k, trim(v));
                          if (s != "synthetic" && s != "csv") throw ConfigError(k, "must be \"synthetic\" or \"csv\"");
                          c.data.source = s;
                        },
                        [](const RunConfig& c) { return quote(c.data.source); }};
    t["data.csv_dir"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.data.csv_dir = unquote(k, trim(v));
                         },
                         [](const RunConfig& c) { return quote(c.data.csv_dir.string()); }};
    t["data.classes_per_domain"] =
        field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.data.synthetic.classes_per_domain; });
    t["data.dim"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.data.synthetic.dim; });
    t["data.cluster_std"] = field<double>([](RunConfig& c) -> double& { return c.data.synthetic.cluster_std; });
    t["data.domain_offset"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          const auto s = trim(v);
          if (!s.empty() && s.front() == '[') {
            c.data.synthetic.domain_offset = parse_number_list<double>(k, s);
          } else {
            // A scalar applies to every coordinate; resolved once dim is known.
            c.data.synthetic.domain_offset = {parse_number<double>(k, s)};
          }
        },
        [](const RunConfig& c) {
          return fmt_list<double>(c.data.synthetic.resolved_offset(), [](const double& x) { return fmt(x); });
        }};
    t["data.samples_per_class"] =
        field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.data.synthetic.samples_per_class; });
    t["data.old_fraction"] = field<double>([](RunConfig& c) -> double& { return c.data.layout.old_fraction; });
    t["data.new_fraction"] = field<double>([](RunConfig& c) -> double& { return c.data.layout.new_fraction; });
    t["data.train_fraction"] = field<double>([](RunConfig& c) -> double& { return c.data.layout.train_fraction; });
    t["data.val_fraction"] = field<double>([](RunConfig& c) -> double& { return c.data.layout.val_fraction; });

    t["train.hidden_dims"] =
        list_field<std::size_t>([](RunConfig& c) -> std::vector<std::size_t>& { return c.train.backbone.hidden_dims; });
    t["train.embed_dim"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.backbone.embed_dim; });
    t["train.epochs"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    t["train.tasks_per_epoch"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.tasks_per_epoch; });
    t["train.ways"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.episode.ways; });
    t["train.shots"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.episode.shots; });
    t["train.queries"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.episode.queries; });
    t["train.lambda"] = field<double>([](RunConfig& c) -> double& { return c.train.lambda; });
    t["train.lambda_old"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                               c.train.lambda_old = parse_number<double>(k, v);
                             },
                             [](const RunConfig& c) { return fmt(c.train.weights().lambda_old); }};
    t["train.lambda_new"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                               c.train.lambda_new = parse_number<double>(k, v);
                             },
                             [](const RunConfig& c) { return fmt(c.train.weights().lambda_new); }};
    t["train.temperature"] = field<double>([](RunConfig& c) -> double& { return c.train.temperature; });
    t["train.lr"] = field<double>([](RunConfig& c) -> double& { return c.train.lr; });
    t["train.lr_decay"] = field<double>([](RunConfig& c) -> double& { return c.train.lr_decay; });
    t["train.patience"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.patience; });
    t["train.exemplars_per_class"] =
        field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.exemplars_per_class; });
    t["train.kl_order"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                             try {
                               c.train.kl_order = parse_kl_order(unquote(k, trim(v)));
                             } catch (const std::invalid_argument&) {
                               throw ConfigError(k, "must be \"student_first\" or \"teacher_first\"");
                             }
                           },
                           [](const RunConfig& c) { return quote(std::string(kl_order_name(c.train.kl_order))); }};
    t["train.val_episodes"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.train.val_episodes; });
    t["train.rounds"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.rounds; });

    t["eval.episodes"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.episodes; });
    t["eval.ways"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.spec.ways; });
    t["eval.shots"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.spec.shots; });
    t["eval.queries"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.spec.queries; });
    t["eval.seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                        c.eval.seed = parse_number<std::uint64_t>(k, v);
                      },
                      [](const RunConfig& c) { return std::to_string(c.eval_seed()); }};
    t["eval.workers"] = field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.eval.workers; });
    t["eval.lambda_values"] =
        list_field<double>([](RunConfig& c) -> std::vector<double>& { return c.eval.lambda_values; });
    t["eval.exemplar_counts"] =
        list_field<std::size_t>([](RunConfig& c) -> std::vector<std::size_t>& { return c.eval.exemplar_counts; });
    t["eval.cross_ways"] =
        list_field<std::size_t>([](RunConfig& c) -> std::vector<std::size_t>& { return c.eval.cross_ways; });
    t["eval.cross_shots"] =
        list_field<std::size_t>([](RunConfig& c) -> std::vector<std::size_t>& { return c.eval.cross_shots; });
    return t;
  }();
  return table;
}

void apply_profile(RunConfig& c, const std::string& profile) {
  if (profile == "paper-scale") {
    const TrainConfig scaled = TrainConfig::paper_scale();
    c.train.epochs = scaled.epochs;
    c.train.tasks_per_epoch = scaled.tasks_per_epoch;
    c.eval.episodes = 2000;
  } else {
    c.train.epochs = 30;
    c.train.tasks_per_epoch = 100;
    c.eval.episodes = 500;
  }
  c.profile = profile;
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

void validate(RunConfig& c) {
  auto& syn = c.data.synthetic;
  if (syn.domain_offset.size() == 1 && syn.dim != 1) syn.domain_offset.assign(syn.dim, syn.domain_offset.front());
  check(syn.classes_per_domain >= 2, "data.classes_per_domain", "must be >= 2");
  check(syn.dim >= 1, "data.dim", "must be >= 1");
  check(syn.cluster_std > 0.0, "data.cluster_std", "must be > 0");
  check(syn.domain_offset.empty() || syn.domain_offset.size() == syn.dim, "data.domain_offset",
        "must be a scalar or a list of length data.dim");
  check(syn.samples_per_class >= 1, "data.samples_per_class", "must be >= 1");
  const auto& lay = c.data.layout;
  check(lay.old_fraction > 0.0 && lay.old_fraction <= 1.0, "data.old_fraction", "must lie in (0, 1]");
  check(lay.new_fraction > 0.0 && lay.new_fraction <= 1.0, "data.new_fraction", "must lie in (0, 1]");
  check(lay.train_fraction > 0.0 && lay.train_fraction < 1.0, "data.train_fraction", "must lie in (0, 1)");
  check(lay.val_fraction > 0.0 && lay.train_fraction + lay.val_fraction < 1.0, "data.val_fraction",
        "must be > 0 and leave rows for the test split");
  check(c.data.source != "csv" || !c.data.csv_dir.empty(), "data.csv_dir", "required when data.source = \"csv\"");

  for (auto h : c.train.backbone.hidden_dims) check(h >= 1, "train.hidden_dims", "widths must be >= 1");
  check(c.train.backbone.embed_dim >= 1, "train.embed_dim", "must be >= 1");
  check(c.train.episode.ways >= 2, "train.ways", "must be >= 2");
  check(c.train.episode.shots >= 1, "train.shots", "must be >= 1");
  check(c.train.episode.queries >= 1, "train.queries", "must be >= 1");
  check(c.rounds >= 1, "train.rounds", "must be >= 1");
  c.train.backbone.input_dim = syn.dim;
  c.train.seed = c.seed;
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("train." + e.key(), std::string(e.what()).substr(e.key().size() + 2));
  }

  check(c.eval.episodes >= 2, "eval.episodes", "must be >= 2");
  check(c.eval.spec.ways >= 2, "eval.ways", "must be >= 2");
  check(c.eval.spec.shots >= 1, "eval.shots", "must be >= 1");
  check(c.eval.spec.queries >= 1, "eval.queries", "must be >= 1");
  check(!c.eval.lambda_values.empty(), "eval.lambda_values", "must not be empty");
  for (double l : c.eval.lambda_values) check(l >= 0.0, "eval.lambda_values", "values must satisfy lambda >= 0");
  check(!c.eval.exemplar_counts.empty(), "eval.exemplar_counts", "must not be empty");
  for (auto n : c.eval.exemplar_counts) check(n >= 1, "eval.exemplar_counts", "counts must be >= 1");
  check(!c.eval.cross_ways.empty(), "eval.cross_ways", "must not be empty");
  for (auto w : c.eval.cross_ways) check(w >= 2, "eval.cross_ways", "ways must be >= 2");
  check(!c.eval.cross_shots.empty(), "eval.cross_shots", "must not be empty");
  for (auto s : c.eval.cross_shots) check(s >= 1, "eval.cross_shots", "shots must be >= 1");
}

}  // namespace

std::vector<Assignment> parse_assignments(std::istream& in) {
  std::vector<Assignment> out;
  std::string section;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no), "malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "data" && section != "train" && section != "eval") {
        throw ConfigError(section, "unknown section (expected data, train or eval)");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected `key = value`, got '" + line + "'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    out.push_back({section.empty() ? key : section + "." + key, trim(std::string_view(line).substr(eq + 1)), line_no});
  }
  return out;
}

RunConfig build_config(const std::vector<Assignment>& assignments) {
  const auto& table = key_table();
  RunConfig cfg;
  std::string profile = "desk";
  for (const auto& a : assignments) {
    if (!table.contains(a.key)) throw ConfigError(a.key, "unknown key");
    if (a.key == "profile") table.at(a.key).set(cfg, a.key, a.value), profile = cfg.profile;
  }
  apply_profile(cfg, profile);
  for (const auto& a : assignments) table.at(a.key).set(cfg, a.key, a.value);
  validate(cfg);
  return cfg;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  std::vector<Assignment> assignments;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw std::runtime_error("cannot read config " + path->string());
    assignments = parse_assignments(in);
  }
  if (const char* env = std::getenv("IML_SEED"); env && *env) assignments.push_back({"seed", env, 0});
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, "override must look like key=value");
    assignments.push_back({trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)), 0});
  }
  return build_config(assignments);
}

void write_resolved(std::ostream& out, const RunConfig& cfg) {
  const auto& table = key_table();
  for (const char* k : {"profile", "seed", "output_dir", "methods"}) out << k << " = " << table.at(k).get(cfg) << '\n';
  for (const std::string section : {"data", "train", "eval"}) {
    out << "\n[" << section << "]\n";
    for (const auto& [key, entry] : table) {
      if (key.rfind(section + ".", 0) != 0) continue;
      out << key.substr(section.size() + 1) << " = " << entry.get(cfg) << '\n';
    }
  }
}

}  // namespace iml::cli
