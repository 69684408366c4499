#pragma once

// Serialization for vector maps (JSON lines) and dense float arrays (the
// "AMAP" little-endian container shared by rasters, latent grids and
// checkpoints).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "augmap/map_core.hpp"

namespace augmap {

using json = nlohmann::json;

json to_json(const Polyline& p);
Polyline polyline_from_json(const json& j);

/// {scene_id, polylines:[{cls, closed, points:[[x,y],...]}]}; `extra`
/// fields are merged into the object.
json vector_map_to_json(const std::string& scene_id, const VectorMap& vmap, const json& extra = json::object());
VectorMap vector_map_from_json(const json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& lines);
std::vector<json> read_jsonl(const std::filesystem::path& path);

json to_json(const GridSpec& g);
GridSpec grid_from_json(const json& j);

/// Dense H x W x C float array. Values are stored channel-major
/// ([c][h][w]), which is also the on-disk order.
struct FloatArray {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;

  std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
};

/// 16-byte header: magic "AMAP", u32 H, u32 W, u32 C, then H*W*C float32,
/// all little-endian.
void write_array(std::ostream& os, const FloatArray& a);
FloatArray read_array(std::istream& is);
void write_array_file(const std::filesystem::path& path, const FloatArray& a);
FloatArray read_array_file(const std::filesystem::path& path);

FloatArray raster_to_array(const RasterMap& r);
RasterMap raster_from_array(const FloatArray& a, const GridSpec& grid);

/// FNV-1a, used for config and manifest fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace augmap
