#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omnistereo/geometry.hpp"
#include "omnistereo/grid.hpp"

namespace omnistereo {

// On-disk layout of one split:
//
//   <root>/<split>/manifest.json
//   <root>/<split>/images_top/NNNN.png          8-bit RGB
//   <root>/<split>/images_bottom/NNNN.png       8-bit RGB
//   <root>/<split>/disparity_sparse/NNNN.png    16-bit gray, fixed point
//   <root>/<split>/disparity_completed/NNNN.png 16-bit gray, fixed point
//
// Disparity pixels store round(d_deg * scale); 0 marks an invalid pixel. The
// scale comes from the manifest's "disparity_encoding" block.

enum class Split { train, val, test };
enum class SceneTag { indoor, outdoor_day, outdoor_night, synthetic };

std::string to_string(Split s);
std::string to_string(SceneTag t);
Split parse_split(const std::string& s);
SceneTag parse_scene_tag(const std::string& s);

struct DisparityEncoding {
  double scale = 1000.0;
  int bit_depth = 16;
  bool operator==(const DisparityEncoding&) const = default;
};

struct DisparityStats {
  double d_deg_min = 0.0;
  double d_deg_max = 0.0;
  bool operator==(const DisparityStats&) const = default;
};

struct ManifestEntry {
  std::string top;
  std::string bottom;
  std::string disparity_sparse;
  std::string disparity_completed;
  SceneTag tag = SceneTag::synthetic;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  /// Directory the entry paths are relative to. Not serialized.
  std::string base_dir;
  Split split = Split::train;
  CameraRig rig;
  DisparityEncoding encoding;
  std::optional<DisparityStats> stats;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
};

/// Accepts either the manifest file or the split directory containing it.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);
std::string manifest_to_json(const DatasetManifest& manifest);

struct LoadedPair {
  Image top;
  Image bottom;
  DisparityMap sparse;
  DisparityMap completed;
  SceneTag tag = SceneTag::synthetic;
};

/// Decodes entry `index`. Throws DataError naming the entry when a file is
/// missing or corrupt, when sizes disagree with the rig, or when the sparse
/// mask is not contained in the completed one.
LoadedPair load_pair(const DatasetManifest& manifest, std::size_t index);

/// Min/max over valid pixels of the completed ground truth.
DisparityStats compute_stats(const DatasetManifest& manifest);

/// SHA-256 over the manifest JSON and the bytes of every referenced file.
std::string fingerprint(const DatasetManifest& manifest);

Image read_image(const std::string& path);
/// Quantizes to 8 bits per channel.
void write_image(const Image& img, const std::string& path);

Grid<std::uint16_t> encode_disparity(const DisparityMap& disparity, const DisparityEncoding& enc);
DisparityMap decode_disparity(const Grid<std::uint16_t>& raw, const DisparityEncoding& enc);
DisparityMap read_disparity(const std::string& path, const DisparityEncoding& enc);
void write_disparity(const DisparityMap& disparity, const std::string& path,
                     const DisparityEncoding& enc);

/// Depth as 16-bit PNG of round(meters * scale), 0 = invalid.
void write_depth(const DepthMap& depth, const std::string& path, double scale = 256.0);
DepthMap read_depth(const std::string& path, double scale = 256.0);

}  // namespace omnistereo
