#include "augmap/map_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace augmap {

static_assert(std::endian::native == std::endian::little, "AMAP I/O assumes a little-endian host");

json to_json(const Polyline& p) {
  json pts = json::array();
  for (const auto& q : p.points) pts.push_back({q.x, q.y});
  return json{{"cls", std::string(class_name(p.cls))}, {"closed", p.closed}, {"points", pts}};
}

Polyline polyline_from_json(const json& j) {
  Polyline p;
  p.cls = class_from_name(j.at("cls").get<std::string>());
  p.closed = j.value("closed", false);
  for (const auto& q : j.at("points")) p.points.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
  p.validate();
  return p;
}

json vector_map_to_json(const std::string& scene_id, const VectorMap& vmap, const json& extra) {
  json j = json::object();
  j["scene_id"] = scene_id;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  json lines = json::array();
  for (const auto& p : vmap.polylines) lines.push_back(to_json(p));
  j["polylines"] = std::move(lines);
  return j;
}

VectorMap vector_map_from_json(const json& j) {
  VectorMap m;
  for (const auto& p : j.at("polylines")) m.polylines.push_back(polyline_from_json(p));
  return m;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json to_json(const GridSpec& g) {
  return json{{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min},
              {"y_max", g.y_max}, {"height", g.height}, {"width", g.width}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g{j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("y_min").get<double>(),
             j.at("y_max").get<double>(), j.at("height").get<int>(),  j.at("width").get<int>()};
  g.validate();
  return g;
}

void write_array(std::ostream& os, const FloatArray& a) {
  if (a.values.size() != a.size()) throw std::invalid_argument("write_array: value count does not match shape");
  const std::uint32_t header[3] = {a.height, a.width, a.channels};
  os.write("AMAP", 4);
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 4));
  if (!os) throw std::runtime_error("write_array: stream write failed");
}

FloatArray read_array(std::istream& is) {
  char magic[4];
  std::uint32_t header[3];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is || std::memcmp(magic, "AMAP", 4) != 0) throw std::runtime_error("read_array: bad AMAP header");
  FloatArray a{header[0], header[1], header[2], {}};
  a.values.resize(a.size());
  is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 4));
  if (!is) throw std::runtime_error("read_array: truncated payload");
  return a;
}

void write_array_file(const std::filesystem::path& path, const FloatArray& a) {
  std::ostringstream os(std::ios::binary);
  write_array(os, a);
  write_file(path, os.str());
}

FloatArray read_array_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_array(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

FloatArray raster_to_array(const RasterMap& r) {
  return {static_cast<std::uint32_t>(r.grid.height), static_cast<std::uint32_t>(r.grid.width),
          static_cast<std::uint32_t>(r.channels), r.data};
}

RasterMap raster_from_array(const FloatArray& a, const GridSpec& grid) {
  if (a.height != static_cast<std::uint32_t>(grid.height) || a.width != static_cast<std::uint32_t>(grid.width))
    throw std::invalid_argument("raster_from_array: array shape does not match grid");
  RasterMap r(grid, static_cast<int>(a.channels));
  r.data = a.values;
  return r;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace augmap
