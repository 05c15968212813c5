#include "iml/anchorstore.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "iml/errors.hpp"

namespace iml {

using nlohmann::json;

AnchorSet extract_anchors(const ParamStore& params, const Dataset& dataset, std::int64_t round_tag) {
  if (dataset.size() == 0) throw std::invalid_argument("extract_anchors: empty dataset");
  AnchorSet out;
  std::vector<double> centers;
  std::size_t dim = 0;
  for (const auto& [c, rows] : dataset.class_index) {
    if (rows.empty()) throw DegenerateEpisodeError("extract_anchors: class " + std::to_string(c) + " is empty");
    const Tensor z = embed(params, dataset.gather(rows));
    dim = z.cols();
    const std::vector<std::size_t> labels(rows.size(), 0);
    const Tensor mean = compute_prototypes(z, labels, 1);
    centers.insert(centers.end(), mean.data().begin(), mean.data().end());
    out.class_ids.push_back(c);
    out.round_tags.push_back(round_tag);
  }
  out.centers = Tensor::matrix(out.class_ids.size(), dim, std::move(centers));
  return out;
}

namespace {

constexpr char kHex[] = "0123456789abcdef";

void append_hex(std::string& out, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      const auto byte = static_cast<unsigned>(bits & 0xffu);
      out.push_back(kHex[byte >> 4]);
      out.push_back(kHex[byte & 0xfu]);
      bits >>= 8;
    }
  }
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[v & 0xfu];
    v >>= 4;
  }
  return out;
}

json config_to_json(const BackboneConfig& c) {
  return json{{"input_dim", c.input_dim}, {"hidden_dims", c.hidden_dims}, {"embed_dim", c.embed_dim}};
}

}  // namespace

std::string serialize_snapshot(const ModelSnapshot& snapshot) {
  std::string payload;
  json shapes = json::array();
  for (const auto& t : snapshot.params().tensors()) {
    shapes.push_back(t.shape());
    append_hex(payload, t.data());
  }
  const auto& anchors = snapshot.anchors();
  if (anchors.size() > 0) append_hex(payload, anchors.centers.data());

  json header{
      {"format", "imlsnap"},
      {"version", kSnapshotVersion},
      {"config", config_to_json(snapshot.config())},
      {"meta",
       {{"seed", snapshot.meta().seed}, {"round", snapshot.meta().round}, {"method", snapshot.meta().method}}},
      {"param_shapes", shapes},
      {"anchors",
       {{"class_ids", anchors.class_ids},
        {"round_tags", anchors.round_tags},
        {"rows", anchors.size()},
        {"dim", anchors.size() > 0 ? anchors.dim() : snapshot.config().embed_dim}}},
      {"payload_chars", payload.size()},
      {"checksum", hex64(fnv1a(payload))},
  };
  return header.dump() + "\n" + payload + "\n";
}

ModelSnapshot deserialize_snapshot(const std::string& text) {
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw CorruptFileError("snapshot: missing header terminator");
  json header;
  try {
    header = json::parse(text.substr(0, nl));
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("snapshot: malformed header: ") + e.what());
  }

  try {
    if (header.value("format", "") != "imlsnap") throw CorruptFileError("snapshot: not an imlsnap file");
    const int version = header.at("version").get<int>();
    if (version != kSnapshotVersion) {
      throw VersionMismatchError("snapshot version " + std::to_string(version) + ", expected " +
                                 std::to_string(kSnapshotVersion));
    }

    std::string_view payload(text);
    payload.remove_prefix(nl + 1);
    if (!payload.empty() && payload.back() == '\n') payload.remove_suffix(1);
    const auto expected_chars = header.at("payload_chars").get<std::size_t>();
    if (payload.size() != expected_chars) {
      throw CorruptFileError("snapshot: payload has " + std::to_string(payload.size()) + " chars, header says " +
                             std::to_string(expected_chars));
    }
    if (hex64(fnv1a(payload)) != header.at("checksum").get<std::string>()) {
      throw CorruptFileError("snapshot: checksum mismatch");
    }
    if (payload.size() % 16 != 0) throw CorruptFileError("snapshot: payload is not a whole number of floats");

    std::size_t pos = 0;
    auto read_values = [&](std::size_t n) {
      if (pos + n * 16 > payload.size()) throw ShapeError("snapshot: shapes exceed payload");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
          const int hi = hex_value(payload[pos]);
          const int lo = hex_value(payload[pos + 1]);
          if (hi < 0 || lo < 0) throw CorruptFileError("snapshot: invalid hex digit");
          bits |= static_cast<std::uint64_t>(hi * 16 + lo) << (8 * b);
          pos += 2;
        }
        values[i] = std::bit_cast<double>(bits);
      }
      return values;
    };

    BackboneConfig config;
    const auto& jc = header.at("config");
    config.input_dim = jc.at("input_dim").get<std::size_t>();
    config.hidden_dims = jc.at("hidden_dims").get<std::vector<std::size_t>>();
    config.embed_dim = jc.at("embed_dim").get<std::size_t>();

    std::vector<Tensor> tensors;
    for (const auto& js : header.at("param_shapes")) {
      auto shape = js.get<Shape>();
      const auto n = shape_size(shape);
      tensors.emplace_back(std::move(shape), read_values(n));
    }

    AnchorSet anchors;
    const auto& ja = header.at("anchors");
    anchors.class_ids = ja.at("class_ids").get<std::vector<std::int64_t>>();
    anchors.round_tags = ja.at("round_tags").get<std::vector<std::int64_t>>();
    const auto rows = ja.at("rows").get<std::size_t>();
    const auto dim = ja.at("dim").get<std::size_t>();
    if (rows != anchors.class_ids.size()) throw ShapeError("snapshot: anchor row count mismatch");
    if (rows > 0) anchors.centers = Tensor::matrix(rows, dim, read_values(rows * dim));
    if (pos != payload.size()) throw ShapeError("snapshot: trailing payload after declared tensors");

    SnapshotMeta meta;
    const auto& jm = header.at("meta");
    meta.seed = jm.at("seed").get<std::uint64_t>();
    meta.round = jm.at("round").get<std::int64_t>();
    meta.method = jm.at("method").get<std::string>();

    return ModelSnapshot(std::move(config), ParamStore(std::move(tensors)), std::move(anchors), std::move(meta));
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("snapshot: malformed header: ") + e.what());
  }
}

void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& path) {
  const std::string text = serialize_snapshot(snapshot);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write snapshot " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing snapshot " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open snapshot " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_snapshot(buf.str());
}

}  // namespace iml
