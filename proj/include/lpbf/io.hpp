#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpbf/common.hpp"
#include "lpbf/sim.hpp"

namespace lpbf::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::uint32_t kContainerVersion = 1;

/// Binary container:
///   8-byte magic "LPBFDT01", u32 version, u64 header length, JSON header,
///   u64 value count, little-endian f64 values, u32 CRC-32 of all prior bytes.
struct Container {
  json header;
  std::vector<double> values;
};

void write_container(const fs::path& path, const json& header, const std::vector<double>& values);
Container read_container(const fs::path& path);
/// Reads only the header; the value array and checksum are not touched.
json read_container_header(const fs::path& path);

std::uint32_t crc32_of_file(const fs::path& path);
std::string hex32(std::uint32_t v);

/// Writes `text` to `path` through a temporary file and rename.
void write_text_atomic(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

json to_json(const ProcessParams& p);
ProcessParams params_from_json(const json& j);
json to_json(const Grid2D& g);
Grid2D grid_from_json(const json& j);
json to_json(const sim::SteadyDiagnostics& d);

void save_section(const fs::path& path, const PlaneSection& s, const json& extra = json::object());
PlaneSection load_section(const fs::path& path, json* header = nullptr);

/// Temperature snapshot plus a `<path>.json` sidecar with parameters and
/// convergence diagnostics.
void save_snapshot(const fs::path& path, const sim::TemperatureField3D& f, const ProcessParams& p,
                   const sim::LaserState& laser, const sim::SteadyDiagnostics& d);
sim::TemperatureField3D load_snapshot(const fs::path& path, json* header = nullptr);

}  // namespace lpbf::io
