#pragma once

// Procedural road scenes: a clothoid-like road with lane dividers, flanking
// boundaries, optional crossings and traffic islands, observed from an ego
// vehicle driving along one lane. Observations are degraded BEV rasters.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "augmap/map_core.hpp"
#include "augmap/map_io.hpp"

namespace augmap {

struct SceneParams {
  std::uint64_t seed = 0;
  int min_lanes = 1;
  int max_lanes = 3;
  double lane_width = 3.2;
  double min_curvature = -0.015;  // 1/m
  double max_curvature = 0.015;
  double p_crossing = 0.5;
  double p_island = 0.2;
  int frames = 4;
  double min_speed = 2.0;  // m/s
  double max_speed = 6.0;
  double dt = 0.5;  // s between frames
  /// Extra road length generated beyond the perception range on each side.
  double generation_margin = 30.0;
  GridSpec grid = GridSpec::desk();

  void validate() const;
};

json to_json(const SceneParams& p);
SceneParams scene_params_from_json(const json& j);

struct Scene {
  SceneParams params;
  /// Ground truth per frame, in that frame's ego coordinates, clipped to
  /// the perception range.
  std::vector<VectorMap> maps;
  /// transforms[t] maps frame t-1 coordinates into frame t; transforms[0]
  /// is the identity.
  std::vector<EgoTransform> transforms;
  int n_lanes = 0;
};

/// Deterministic in params.seed. Throws std::invalid_argument when the
/// widest road does not fit the lateral extent of the grid.
Scene generate_scene(const SceneParams& params);

/// Smallest piece of a clipped line kept in a frame map, in meters.
inline constexpr double kMinPieceLength = 1.0;

/// Degraded BEV rendering standing in for the camera encoder input. The
/// layout matches RasterMap; values are not restricted to [0, 1].
using Observation = RasterMap;

struct Degradation {
  int blur_kernel = 3;  // box filter size, 1 disables
  double noise_sigma = 0.35;
  int occlusion_rects = 3;
  double occlusion_min = 2.0;  // rectangle side range, meters
  double occlusion_max = 7.0;
  bool full_occlusion = false;
  double falloff = 0.045;  // attenuation per meter of range
  int distractors = 3;     // spurious strokes drawn before blurring
  double distractor_length = 5.0;

  static Degradation none();
};

json to_json(const Degradation& d);
Degradation degradation_from_json(const json& j);

/// Distractors, box blur, Gaussian noise, rectangular dropouts, then linear
/// range attenuation max(0, 1 - falloff * r). Deterministic in `seed`.
Observation degrade_raster(const RasterMap& gt, const Degradation& d, std::uint64_t seed);

Observation render_observation(const Scene& scene, int frame, const Degradation& d);

struct DatasetConfig {
  std::filesystem::path out_dir;
  int n_train = 500;
  int n_val = 100;
  std::uint64_t base_seed = 20240;
  SceneParams scene;
  Degradation degradation;
};

json to_json(const DatasetConfig& c);

struct ManifestEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "val"
  std::string map_file;
  std::vector<std::string> obs_files;
};

struct DatasetManifest {
  json document;
  std::vector<ManifestEntry> scenes;
  std::string hash;  // FNV-1a of the serialized manifest
};

/// Seeds used for each split; the two ranges never intersect.
std::vector<std::uint64_t> split_seeds(const DatasetConfig& c, const std::string& split);

/// Writes scenes, observations and manifest.json under out_dir.
/// Re-running with the same config rewrites byte-identical files.
DatasetManifest build_dataset(const DatasetConfig& config);

struct SceneRecord {
  std::string id;
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<Observation> observations;
};

struct Dataset {
  GridSpec grid;
  json params;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> val;

  const std::vector<SceneRecord>& split(const std::string& name) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Same content as build_dataset + load_dataset, without touching disk.
Dataset generate_dataset(const DatasetConfig& config);

}  // namespace augmap
