#include "iml/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "iml/errors.hpp"

namespace iml {

Dataset Dataset::from_rows(Tensor features, std::vector<ClassId> labels, std::string split_name) {
  if (!labels.empty() && (features.rank() != 2 || features.rows() != labels.size())) {
    throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for features " +
                     shape_string(features.shape()));
  }
  Dataset ds;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.split_name = std::move(split_name);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) ds.class_index[ds.labels[i]].push_back(i);
  return ds;
}

std::vector<ClassId> Dataset::classes() const {
  std::vector<ClassId> out;
  out.reserve(class_index.size());
  for (const auto& [c, rows] : class_index) out.push_back(c);
  return out;
}

Tensor Dataset::gather(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (auto r : rows) {
    auto src = features.row(r);
    data.insert(data.end(), src.begin(), src.end());
  }
  return Tensor::matrix(rows.size(), d, std::move(data));
}

namespace {

Dataset build(const Dataset& src, const std::vector<std::size_t>& rows, std::string name) {
  std::vector<ClassId> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(src.labels[r]);
  return Dataset::from_rows(src.gather(rows), std::move(labels), std::move(name));
}

}  // namespace

Dataset subset_classes(const Dataset& ds, std::span<const ClassId> classes, std::string split_name) {
  std::vector<std::size_t> rows;
  for (auto c : classes) {
    auto it = ds.class_index.find(c);
    if (it == ds.class_index.end()) throw std::invalid_argument("class " + std::to_string(c) + " not in dataset");
    rows.insert(rows.end(), it->second.begin(), it->second.end());
  }
  return build(ds, rows, std::move(split_name));
}

Dataset concat_datasets(const Dataset& a, const Dataset& b, std::string split_name) {
  if (a.size() == 0) return Dataset::from_rows(b.features, b.labels, std::move(split_name));
  if (b.size() == 0) return Dataset::from_rows(a.features, a.labels, std::move(split_name));
  if (a.dim() != b.dim()) throw ShapeError("concat_datasets: feature widths differ");
  std::vector<double> data(a.features.data().begin(), a.features.data().end());
  data.insert(data.end(), b.features.data().begin(), b.features.data().end());
  std::vector<ClassId> labels = a.labels;
  labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  Tensor features = Tensor::matrix(labels.size(), a.dim(), std::move(data));
  return Dataset::from_rows(std::move(features), std::move(labels),
                            std::move(split_name));
}

std::pair<Dataset, Dataset> split_samples(const Dataset& ds, double first_fraction) {
  if (first_fraction < 0.0 || first_fraction > 1.0) throw std::invalid_argument("split_samples: fraction in [0,1]");
  std::vector<std::size_t> first, second;
  for (const auto& [c, rows] : ds.class_index) {
    const auto n = static_cast<std::size_t>(std::ceil(first_fraction * static_cast<double>(rows.size())));
    first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
    second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(n), rows.end());
  }
  return {build(ds, first, ds.split_name), build(ds, second, ds.split_name)};
}

void EpisodeSpec::validate() const {
  if (ways < 2) throw std::invalid_argument("episode: ways must be > 1");
  if (shots < 1) throw std::invalid_argument("episode: shots must be >= 1");
  if (queries < 1) throw std::invalid_argument("episode: queries must be >= 1");
}

std::vector<double> SyntheticSpec::resolved_offset() const {
  if (domain_offset.empty()) return std::vector<double>(dim, 3.0);
  return domain_offset;
}

void SyntheticSpec::validate() const {
  if (classes_per_domain == 0 || dim == 0 || samples_per_class == 0) {
    throw std::invalid_argument("synthetic: classes, dim and samples must be positive");
  }
  if (!(cluster_std >= 0.0)) throw std::invalid_argument("synthetic: cluster_std must be >= 0");
  if (!domain_offset.empty() && domain_offset.size() != dim) {
    throw std::invalid_argument("synthetic: domain_offset must have length dim");
  }
}

Tensor synthetic_centers(const SyntheticSpec& spec) {
  spec.validate();
  const auto offset = spec.resolved_offset();
  const std::size_t n_classes = 2 * spec.classes_per_domain;
  Rng rng(derive_seed(spec.seed, 0));
  Tensor centers = Tensor::zeros({n_classes, spec.dim});
  for (std::size_t c = 0; c < n_classes; ++c) {
    const bool domain_b = c >= spec.classes_per_domain;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      centers(c, j) = rng.uniform(-1.0, 1.0) + (domain_b ? offset[j] : 0.0);
    }
  }
  return centers;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  const Tensor centers = synthetic_centers(spec);
  const std::size_t n_classes = centers.rows();
  Rng rng(derive_seed(spec.seed, 1));
  std::vector<double> data;
  std::vector<ClassId> labels;
  data.reserve(n_classes * spec.samples_per_class * spec.dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      for (std::size_t j = 0; j < spec.dim; ++j) data.push_back(centers(c, j) + spec.cluster_std * rng.normal());
      labels.push_back(static_cast<ClassId>(c));
    }
  }
  Tensor features = Tensor::matrix(labels.size(), spec.dim, std::move(data));
  return Dataset::from_rows(std::move(features), std::move(labels), "synthetic");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool header_seen = false;
  std::vector<double> data;
  std::vector<ClassId> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!header_seen) {
      if (trim(fields[0]) != "label" || fields.size() < 2) throw ParseError("expected header label,f0,...", line_no);
      width = fields.size() - 1;
      header_seen = true;
      continue;
    }
    if (fields.size() != width + 1) {
      throw ParseError("expected " + std::to_string(width + 1) + " fields, found " + std::to_string(fields.size()),
                       line_no);
    }
    ClassId label = 0;
    if (!parse_number(fields[0], label)) throw ParseError("label is not an integer", line_no);
    labels.push_back(label);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_number(fields[j], v)) {
        throw ParseError("non-numeric value '" + std::string(trim(fields[j])) + "' in column " + std::to_string(j),
                         line_no);
      }
      data.push_back(v);
    }
  }
  if (!header_seen) throw ParseError("empty dataset file", line_no);
  if (labels.empty()) throw ParseError("dataset has no rows", line_no);
  Tensor features = Tensor::matrix(labels.size(), width, std::move(data));
  return Dataset::from_rows(std::move(features), std::move(labels),
                            path.stem().string());
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  out << "label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset " + path.string());
}

ClassSplit split_classes(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_classes: fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw std::invalid_argument("split_classes: fractions must be non-negative");

  auto classes = ds.classes();
  Rng rng(seed);
  const auto order = rng.sample_without_replacement(classes.size(), classes.size());
  const auto n = static_cast<double>(classes.size());
  const auto n_old = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_new = std::min(classes.size() - n_old, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  const std::array<std::size_t, 3> counts{n_old, n_new, classes.size() - n_old - n_new};
  static constexpr std::array<const char*, 3> names{"old", "new", "unseen"};

  std::array<std::vector<ClassId>, 3> parts;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (fractions[s] > 0.0 && counts[s] < 2) {
      throw std::invalid_argument(std::string("split_classes: ") + names[s] + " split receives fewer than 2 classes");
    }
    for (std::size_t i = 0; i < counts[s]; ++i) parts[s].push_back(classes[order[pos++]]);
    std::sort(parts[s].begin(), parts[s].end());
  }
  return ClassSplit{subset_classes(ds, parts[0], names[0]), subset_classes(ds, parts[1], names[1]),
                    subset_classes(ds, parts[2], names[2])};
}

BenchmarkSplits make_domain_shift_benchmark(const SyntheticSpec& spec, const BenchmarkLayout& layout) {
  const double rest = 1.0 - layout.train_fraction;
  if (layout.train_fraction <= 0.0 || layout.val_fraction <= 0.0 || layout.val_fraction >= rest) {
    throw std::invalid_argument("benchmark: need 0 < train, 0 < val < 1 - train");
  }
  const Dataset all = gen_synthetic(spec);
  std::vector<ClassId> domain_a, domain_b;
  for (auto c : all.classes()) (synthetic_domain(spec, c) == 0 ? domain_a : domain_b).push_back(c);

  const auto a = split_classes(subset_classes(all, domain_a, "domain_a"),
                               {layout.old_fraction, 0.0, 1.0 - layout.old_fraction}, derive_seed(layout.split_seed, 0));
  const auto b = split_classes(subset_classes(all, domain_b, "domain_b"),
                               {0.0, layout.new_fraction, 1.0 - layout.new_fraction}, derive_seed(layout.split_seed, 1));

  auto three_way = [&](const Dataset& ds, const std::string& name, Dataset& train, Dataset& val, Dataset& test) {
    auto [tr, remainder] = split_samples(ds, layout.train_fraction);
    auto [va, te] = split_samples(remainder, layout.val_fraction / rest);
    train = Dataset::from_rows(std::move(tr.features), std::move(tr.labels), name + "_train");
    val = Dataset::from_rows(std::move(va.features), std::move(va.labels), name + "_val");
    test = Dataset::from_rows(std::move(te.features), std::move(te.labels), name);
  };

  BenchmarkSplits out;
  three_way(a.old_split, "old", out.old_train, out.old_val, out.old_test);
  three_way(b.new_split, "new", out.new_train, out.new_val, out.new_test);
  out.unseen = concat_datasets(a.unseen_split, b.unseen_split, "unseen");
  return out;
}

Episode sample_episode(const Dataset& ds, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.ways > ds.num_classes()) {
    throw DegenerateEpisodeError("episode needs " + std::to_string(spec.ways) + " classes, dataset '" +
                                 ds.split_name + "' has " + std::to_string(ds.num_classes()));
  }
  const auto classes = ds.classes();
  const auto picked = rng.sample_without_replacement(classes.size(), spec.ways);
  const std::size_t need = spec.shots + spec.queries;

  Episode ep;
  for (std::size_t local = 0; local < picked.size(); ++local) {
    const ClassId c = classes[picked[local]];
    const auto& rows = ds.class_index.at(c);
    if (rows.size() < need) {
      throw DegenerateEpisodeError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                                   " rows, episode needs " + std::to_string(need));
    }
    const auto draw = rng.sample_without_replacement(rows.size(), need);
    for (std::size_t i = 0; i < need; ++i) {
      if (i < spec.shots) {
        ep.support_rows.push_back(rows[draw[i]]);
        ep.support_y.push_back(local);
      } else {
        ep.query_rows.push_back(rows[draw[i]]);
        ep.query_y.push_back(local);
      }
    }
    ep.class_map.push_back(c);
  }
  ep.support_x = ds.gather(ep.support_rows);
  ep.query_x = ds.gather(ep.query_rows);
  return ep;
}

AnchorSet sample_anchor_subset(const AnchorSet& anchors, std::size_t k, Rng& rng) {
  if (k == 0) throw std::invalid_argument("sample_anchor_subset: k must be >= 1");
  if (k > anchors.size()) {
    throw std::invalid_argument("sample_anchor_subset: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(anchors.size()) + " anchors");
  }
  const auto rows = rng.sample_without_replacement(anchors.size(), k);
  return anchors.subset(rows);
}

ExemplarSet reserve_exemplars(const Dataset& ds, std::size_t per_class, Rng& rng) {
  if (per_class < 1) throw std::invalid_argument("reserve_exemplars: per_class must be >= 1");
  std::vector<std::size_t> keep;
  for (const auto& [c, rows] : ds.class_index) {
    const std::size_t take = std::min(per_class, rows.size());
    for (auto i : rng.sample_without_replacement(rows.size(), take)) keep.push_back(rows[i]);
  }
  return ExemplarSet{build(ds, keep, "exemplars"), per_class};
}

ExemplarEpisode sample_exemplar_episode(const ExemplarSet& exemplars, std::size_t ways, std::size_t max_per_class,
                                        Rng& rng) {
  const Dataset& ds = exemplars.rows;
  if (ways == 0 || ways > ds.num_classes()) {
    throw DegenerateEpisodeError("exemplar episode needs " + std::to_string(ways) + " classes, have " +
                                 std::to_string(ds.num_classes()));
  }
  const auto classes = ds.classes();
  const auto picked = rng.sample_without_replacement(classes.size(), ways);
  ExemplarEpisode ep;
  std::vector<std::size_t> rows;
  for (std::size_t local = 0; local < picked.size(); ++local) {
    const ClassId c = classes[picked[local]];
    const auto& class_rows = ds.class_index.at(c);
    if (class_rows.empty()) throw DegenerateEpisodeError("class " + std::to_string(c) + " has no exemplars");
    const std::size_t take = std::min(max_per_class, class_rows.size());
    for (auto i : rng.sample_without_replacement(class_rows.size(), take)) {
      rows.push_back(class_rows[i]);
      ep.y.push_back(local);
    }
    ep.class_map.push_back(c);
  }
  ep.x = ds.gather(rows);
  return ep;
}

}  // namespace iml
