#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "iml/data.hpp"
#include "iml/model.hpp"

namespace iml {

inline constexpr int kSnapshotVersion = 1;

// One center per class: the mean embedding of all of that class's rows.
AnchorSet extract_anchors(const ParamStore& params, const Dataset& dataset, std::int64_t round_tag);

// `.imlsnap` layout: a single-line JSON header (config, meta, shapes, payload
// size, FNV-1a checksum), a newline, then the payload as lowercase hex of
// little-endian 64-bit floats (all parameter tensors in order, then the
// anchor centers), then a newline. Written to a temporary file and renamed.
void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& path);

// Throws VersionMismatchError, CorruptFileError (truncation, bad checksum,
// malformed header) or ShapeError.
ModelSnapshot load_snapshot(const std::filesystem::path& path);

std::string serialize_snapshot(const ModelSnapshot& snapshot);
ModelSnapshot deserialize_snapshot(const std::string& text);

}  // namespace iml
