#include "lpbf/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>

namespace lpbf::io {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'B', 'F', 'D', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > buf.size()) throw FormatError("truncated container: " + path.string());
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

void check_magic(const char* p, const fs::path& path) {
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a container file: " + path.string());
}

void write_bytes_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_container(const fs::path& path, const json& header, const std::vector<double>& values) {
  const std::string h = header.dump();
  std::string buf;
  buf.reserve(32 + h.size() + 8 * values.size());
  buf.append(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kContainerVersion);
  put<std::uint64_t>(buf, h.size());
  buf += h;
  put<std::uint64_t>(buf, values.size());
  buf.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  put<std::uint32_t>(buf, crc(buf.data(), buf.size()));
  write_bytes_atomic(path, buf);
}

Container read_container(const fs::path& path) {
  const std::string buf = slurp(path);
  if (buf.size() < sizeof(kMagic) + 4) throw FormatError("truncated container: " + path.string());
  check_magic(buf.data(), path);
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(buf, pos, path);
  if (version != kContainerVersion)
    throw FormatError("container version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kContainerVersion) + ")");
  const auto hlen = get<std::uint64_t>(buf, pos, path);
  if (pos + hlen > buf.size()) throw FormatError("truncated container: " + path.string());
  const std::string htext = buf.substr(pos, hlen);
  pos += hlen;
  const auto count = get<std::uint64_t>(buf, pos, path);
  if (count > (buf.size() - pos) / sizeof(double)) throw FormatError("truncated container: " + path.string());
  const std::size_t body = pos + count * sizeof(double);
  if (body + 4 != buf.size()) throw FormatError("container size mismatch: " + path.string());
  std::size_t cpos = body;
  if (get<std::uint32_t>(buf, cpos, path) != crc(buf.data(), body))
    throw ChecksumError("checksum mismatch: " + path.string());
  Container c;
  try {
    c.header = json::parse(htext);
  } catch (const json::exception& e) {
    throw FormatError("bad container header: " + std::string(e.what()));
  }
  c.values.resize(count);
  std::memcpy(c.values.data(), buf.data() + pos, count * sizeof(double));
  return c;
}

json read_container_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char head[sizeof(kMagic) + 12];
  if (!in.read(head, sizeof(head))) throw FormatError("truncated container: " + path.string());
  check_magic(head, path);
  std::uint32_t version;
  std::uint64_t hlen;
  std::memcpy(&version, head + sizeof(kMagic), 4);
  std::memcpy(&hlen, head + sizeof(kMagic) + 4, 8);
  if (version != kContainerVersion) throw FormatError("container version " + std::to_string(version) + " not supported");
  if (hlen > (1u << 30)) throw FormatError("implausible header length in " + path.string());
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), static_cast<std::streamsize>(hlen)))
    throw FormatError("truncated container: " + path.string());
  try {
    return json::parse(htext);
  } catch (const json::exception& e) {
    throw FormatError("bad container header: " + std::string(e.what()));
  }
}

std::uint32_t crc32_of_file(const fs::path& path) {
  const std::string buf = slurp(path);
  return crc(buf.data(), buf.size());
}

std::string hex32(std::uint32_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(8) << std::setfill('0') << v;
  return o.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) { write_bytes_atomic(path, text); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json to_json(const ProcessParams& p) {
  return {{"P", p.power}, {"V", p.speed}, {"T_sub", p.substrate}, {"alpha", p.absorptivity}};
}

ProcessParams params_from_json(const json& j) {
  try {
    return {j.at("P").get<double>(), j.at("V").get<double>(), j.at("T_sub").get<double>(),
            j.at("alpha").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError("bad process parameters: " + std::string(e.what()));
  }
}

json to_json(const Grid2D& g) {
  return {{"nx", g.nx}, {"ny", g.ny}, {"x0", g.x0}, {"dx", g.dx}, {"y0", g.y0}, {"dy", g.dy}};
}

Grid2D grid_from_json(const json& j) {
  try {
    return {j.at("nx").get<std::size_t>(), j.at("ny").get<std::size_t>(), j.at("x0").get<double>(),
            j.at("dx").get<double>(),      j.at("y0").get<double>(),      j.at("dy").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError("bad grid descriptor: " + std::string(e.what()));
  }
}

json to_json(const sim::SteadyDiagnostics& d) {
  return {{"steps", d.steps},
          {"dt_s", d.dt},
          {"laser_x_um", d.laser_x},
          {"converged", d.converged},
          {"T_peak_K", d.metrics.t_peak},
          {"L_um", d.metrics.length},
          {"W_um", d.metrics.width},
          {"last_rel_change", d.last_rel_change}};
}

void save_section(const fs::path& path, const PlaneSection& s, const json& extra) {
  if (s.values.size() != s.grid.size()) throw ShapeError("section values do not match its grid");
  json h = extra;
  h["kind"] = "section";
  h["plane"] = plane_name(s.plane);
  h["grid"] = to_json(s.grid);
  h["clamped"] = s.clamped;
  h["layout"] = "row-major (x, second axis)";
  write_container(path, h, s.values);
}

PlaneSection load_section(const fs::path& path, json* header) {
  auto c = read_container(path);
  if (c.header.value("kind", "") != "section") throw FormatError(path.string() + " is not a section container");
  PlaneSection s;
  s.plane = plane_from_name(c.header.at("plane").get<std::string>());
  s.grid = grid_from_json(c.header.at("grid"));
  s.clamped = c.header.value("clamped", false);
  if (c.values.size() != s.grid.size()) throw ShapeError("section payload does not match its grid");
  s.values = std::move(c.values);
  if (header) *header = std::move(c.header);
  return s;
}

void save_snapshot(const fs::path& path, const sim::TemperatureField3D& f, const ProcessParams& p,
                   const sim::LaserState& laser, const sim::SteadyDiagnostics& d) {
  json h;
  h["kind"] = "snapshot";
  h["dims"] = {f.nx, f.ny, f.nz};
  h["origin_um"] = {f.x0, f.y0, f.z0};
  h["spacing_um"] = {f.dx, f.dy, f.dz};
  h["layout"] = "x fastest: i + nx*(j + ny*k)";
  h["time_s"] = f.time;
  h["params"] = to_json(p);
  h["laser_um"] = {laser.x, laser.y, laser.z};
  write_container(path, h, f.temperature);
  json side;
  side["params"] = to_json(p);
  side["diagnostics"] = to_json(d);
  side["laser_um"] = {laser.x, laser.y, laser.z};
  side["container"] = path.filename().string();
  fs::path sp = path;
  sp += ".json";
  write_text_atomic(sp, side.dump(2) + "\n");
}

sim::TemperatureField3D load_snapshot(const fs::path& path, json* header) {
  auto c = read_container(path);
  if (c.header.value("kind", "") != "snapshot") throw FormatError(path.string() + " is not a snapshot container");
  sim::TemperatureField3D f;
  const auto& h = c.header;
  f.nx = h.at("dims")[0];
  f.ny = h.at("dims")[1];
  f.nz = h.at("dims")[2];
  f.x0 = h.at("origin_um")[0];
  f.y0 = h.at("origin_um")[1];
  f.z0 = h.at("origin_um")[2];
  f.dx = h.at("spacing_um")[0];
  f.dy = h.at("spacing_um")[1];
  f.dz = h.at("spacing_um")[2];
  f.time = h.value("time_s", 0.0);
  if (c.values.size() != f.size()) throw ShapeError("snapshot payload does not match its dimensions");
  f.temperature = std::move(c.values);
  if (header) *header = std::move(c.header);
  return f;
}

}  // namespace lpbf::io
