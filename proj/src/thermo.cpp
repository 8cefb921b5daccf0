#include "lpbf/thermo.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace lpbf::thermo {

namespace {

using Field = double MaterialProps::*;

const std::map<std::string, Field>& material_keys() {
  static const std::map<std::string, Field> keys = {
      {"density", &MaterialProps::density},
      {"cp_solid", &MaterialProps::cp_solid},
      {"cp_liquid", &MaterialProps::cp_liquid},
      {"latent_melt", &MaterialProps::latent_melt},
      {"latent_vapor", &MaterialProps::latent_vapor},
      {"k_solid", &MaterialProps::k_solid},
      {"k_liquid", &MaterialProps::k_liquid},
      {"t_solidus", &MaterialProps::t_solidus},
      {"t_liquidus", &MaterialProps::t_liquidus},
      {"t_boiling", &MaterialProps::t_boiling},
      {"absorptivity", &MaterialProps::absorptivity},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void MaterialProps::validate() const {
  for (const auto& [name, field] : material_keys()) {
    if (!(this->*field > 0.0)) throw DomainError("material property '" + name + "' must be positive");
  }
  if (!(t_solidus < t_liquidus && t_liquidus < t_boiling))
    throw DomainError("material temperatures must satisfy T_s < T_l < T_b");
}

MaterialProps parse_material(const std::string& text) {
  MaterialProps m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("material config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = material_keys().find(key);
    if (it == material_keys().end())
      throw ConfigError("material config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      std::size_t used = 0;
      m.*(it->second) = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("material config line " + std::to_string(lineno) + ": bad number '" + value + "'");
    }
  }
  m.validate();
  return m;
}

MaterialProps load_material(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open material file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_material(ss.str());
}

std::string format_material(const MaterialProps& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& [name, field] : material_keys()) out << name << " = " << m.*field << "\n";
  return out.str();
}

EnthalpyCurve::EnthalpyCurve(const MaterialProps& m, double t_ref, double vapor_width)
    : cp_solid_(m.cp_solid), cp_liquid_(m.cp_liquid) {
  m.validate();
  if (!(vapor_width > 0.0)) throw DomainError("EnthalpyCurve: vaporization width must be positive");
  const double t_v0 = m.t_boiling - 0.5 * vapor_width;
  const double t_v1 = m.t_boiling + 0.5 * vapor_width;
  if (!(t_ref < m.t_solidus)) throw DomainError("EnthalpyCurve: reference temperature must lie below solidus");
  if (!(m.t_liquidus < t_v0)) throw DomainError("EnthalpyCurve: vaporization ramp overlaps the mushy zone");

  const double cp_mushy = 0.5 * (m.cp_solid + m.cp_liquid);
  t_ = {t_ref, m.t_solidus, m.t_liquidus, t_v0, t_v1};
  h_[0] = 0.0;
  h_[1] = m.cp_solid * (m.t_solidus - t_ref);
  h_[2] = h_[1] + (cp_mushy * (m.t_liquidus - m.t_solidus) + m.latent_melt);
  h_[3] = h_[2] + m.cp_liquid * (t_v0 - m.t_liquidus);
  h_[4] = h_[3] + (m.latent_vapor + m.cp_liquid * vapor_width);
}

}  // namespace lpbf::thermo
