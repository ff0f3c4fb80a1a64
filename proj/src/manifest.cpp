#include "modlink/manifest.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "modlink/error.hpp"
#include "modlink/matrix_market.hpp"

namespace modlink {

using json = nlohmann::ordered_json;

std::vector<double> FrequencySpec::omega() const {
  const double s = 2.0 * std::numbers::pi;
  return frequency_grid(s * min_hz, s * max_hz, count, log);
}

std::vector<OperatingPoint> OperatingSpec::expand() const {
  if (!points.empty()) return points;
  if (ranges.empty()) return {OperatingPoint{}};
  return make_operating_grid(ranges);
}

bool ModelManifest::operator==(const ModelManifest& o) const {
  return schema_version == o.schema_version && name == o.name && subsystems == o.subsystems &&
         interfaces == o.interfaces && external == o.external && frequency == o.frequency &&
         operating == o.operating && static_subsystems == o.static_subsystems &&
         static_interfaces == o.static_interfaces;
}

namespace {

// ---------------------------------------------------------------------------
// Parsing with issue collection

class Parser {
 public:
  explicit Parser(std::filesystem::path base) : base_(std::move(base)) {}

  std::vector<std::string> issues;

  void issue(const std::string& path, const std::string& msg) { issues.push_back(fmt::format("{}: {}", path, msg)); }

  const json* member(const json& obj, const char* key, const std::string& path, bool required) {
    if (!obj.is_object()) {
      issue(path, "expected an object");
      return nullptr;
    }
    const auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) issue(path, fmt::format("missing field '{}'", key));
      return nullptr;
    }
    return &*it;
  }

  std::optional<std::string> string(const json& obj, const char* key, const std::string& path, bool required = true) {
    const json* v = member(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      issue(path + "." + key, "expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<double> number(const json& obj, const char* key, const std::string& path, bool required = true) {
    const json* v = member(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_number() || !std::isfinite(v->get<double>())) {
      issue(path + "." + key, "expected a finite number");
      return std::nullopt;
    }
    return v->get<double>();
  }

  std::optional<Index> index(const json& obj, const char* key, const std::string& path, bool required = true) {
    const json* v = member(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer() || v->get<long long>() < 0) {
      issue(path + "." + key, "expected a non-negative integer");
      return std::nullopt;
    }
    return static_cast<Index>(v->get<long long>());
  }

  std::optional<bool> boolean(const json& obj, const char* key, const std::string& path, bool required = true) {
    const json* v = member(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      issue(path + "." + key, "expected true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  const json* array(const json& obj, const char* key, const std::string& path, bool required = true) {
    const json* v = member(obj, key, path, required);
    if (!v) return nullptr;
    if (!v->is_array()) {
      issue(path + "." + key, "expected an array");
      return nullptr;
    }
    return v;
  }

  std::string file(const json& obj, const char* key, const std::string& path, bool required = true) {
    const auto f = string(obj, key, path, required);
    if (!f) return {};
    if (!std::filesystem::exists(base_ / *f))
      issue(path + "." + key, fmt::format("matrix file '{}' does not exist", (base_ / *f).string()));
    return *f;
  }

  PortEntry port(const json& j, const std::string& path) {
    PortEntry p;
    p.label = string(j, "label", path).value_or("");
    if (j.is_object() && p.label.empty() && j.contains("label")) issue(path + ".label", "empty label");
    p.dof = index(j, "dof", path).value_or(0);
    const auto role = string(j, "role", path, false).value_or("io");
    if (role == "io") p.role = PortRole::io;
    else if (role == "input") p.role = PortRole::input;
    else if (role == "output") p.role = PortRole::output;
    else issue(path + ".role", fmt::format("unknown role '{}' (io, input or output)", role));
    const auto kind = string(j, "kind", path, false).value_or("displacement");
    if (kind == "displacement") p.kind = OutputKind::displacement;
    else if (kind == "velocity") p.kind = OutputKind::velocity;
    else issue(path + ".kind", fmt::format("unknown output kind '{}'", kind));
    if (p.role == PortRole::io && p.kind != OutputKind::displacement)
      issue(path + ".kind", "io ports are displacement outputs");
    p.scale = number(j, "scale", path, false).value_or(1.0);
    p.coordinate = number(j, "coordinate", path, false);
    p.dual = boolean(j, "dual", path, false).value_or(false);
    return p;
  }

  SubsystemEntry subsystem(const json& j, const std::string& path) {
    SubsystemEntry s;
    s.name = string(j, "name", path).value_or("");
    const auto type = string(j, "type", path, false).value_or("second_order");
    if (type == "second_order") {
      s.type = SubsystemEntry::Type::second_order;
      s.mass = file(j, "mass", path);
      s.stiffness = file(j, "stiffness", path);
      if (const json* d = member(j, "damping", path, false)) {
        if (d->is_string()) {
          s.damping.kind = DampingSpec::Kind::file;
          s.damping.file = file(j, "damping", path);
        } else if (d->is_object()) {
          const auto modal = boolean(*d, "modal", path + ".damping", false).value_or(true);
          if (!modal) issue(path + ".damping", "only modal damping recipes are supported");
          s.damping.kind = DampingSpec::Kind::modal;
          s.damping.zeta = number(*d, "zeta", path + ".damping").value_or(0.0);
          if (!(s.damping.zeta >= 0.0 && s.damping.zeta < 1.0))
            issue(path + ".damping.zeta", fmt::format("{} outside [0, 1)", s.damping.zeta));
        } else if (!d->is_null()) {
          issue(path + ".damping", "expected a file name or {\"modal\": true, \"zeta\": ...}");
        }
      }
      if (const json* ports = array(j, "ports", path)) {
        std::size_t k = 0;
        for (const auto& p : *ports) s.ports.push_back(port(p, fmt::format("{}.ports[{}]", path, k++)));
      }
      std::set<std::string> ins, outs;
      for (const auto& p : s.ports) {
        if (p.role != PortRole::output && !ins.insert(p.label).second)
          issue(path, fmt::format("duplicate input port '{}'", p.label));
        if (p.role != PortRole::input && !outs.insert(p.label).second)
          issue(path, fmt::format("duplicate output port '{}'", p.label));
      }
    } else if (type == "state_space") {
      s.type = SubsystemEntry::Type::state_space;
      s.e = file(j, "E", path);
      s.a = file(j, "A", path);
      s.b = file(j, "B", path);
      s.c = file(j, "C", path);
      s.d = file(j, "D", path, false);
      auto labels = [&](const char* key, std::vector<std::string>& out) {
        if (const json* arr = array(j, key, path)) {
          for (const auto& l : *arr) {
            if (!l.is_string()) issue(fmt::format("{}.{}", path, key), "labels must be strings");
            else out.push_back(l.get<std::string>());
          }
        }
      };
      labels("inputs", s.inputs);
      labels("outputs", s.outputs);
    } else {
      issue(path + ".type", fmt::format("unknown subsystem type '{}' (second_order or state_space)", type));
    }
    return s;
  }

  InterfaceSide side(const json& j, const std::string& path) {
    InterfaceSide s;
    s.subsystem = string(j, "subsystem", path).value_or("");
    if (const json* pts = array(j, "points", path)) {
      std::size_t k = 0;
      for (const auto& p : *pts) {
        const std::string pp = fmt::format("{}.points[{}]", path, k++);
        s.points.push_back({string(p, "port", pp).value_or(""), number(p, "coordinate", pp).value_or(0.0)});
      }
    }
    return s;
  }

  InterfaceSpec interface(const json& j, const std::string& path) {
    InterfaceSpec f;
    f.id = string(j, "id", path).value_or("");
    f.axis = string(j, "axis", path, false).value_or("x");
    const auto sliding = string(j, "sliding", path, false).value_or("ell");
    if (sliding == "ell") f.sliding = SlidingSide::ell;
    else if (sliding == "j") f.sliding = SlidingSide::j;
    else issue(path + ".sliding", fmt::format("unknown sliding side '{}' (ell or j)", sliding));
    if (const json* sj = member(j, "side_j", path, true)) f.side_j = side(*sj, path + ".side_j");
    if (const json* sl = member(j, "side_ell", path, true)) f.side_ell = side(*sl, path + ".side_ell");
    if (const json* springs = array(j, "springs", path)) {
      std::size_t k = 0;
      for (const auto& s : *springs) {
        const std::string sp = fmt::format("{}.springs[{}]", path, k++);
        f.springs.push_back({number(s, "stiffness", sp).value_or(0.0), number(s, "anchor_j", sp).value_or(0.0),
                             number(s, "anchor_ell", sp).value_or(0.0)});
      }
    }
    try {
      f.validate();
    } catch (const ValidationError& e) {
      for (const auto& i : e.issues()) issue(path, i);
    }
    return f;
  }

  PortRef port_ref(const json& j, const std::string& path) {
    PortRef r;
    r.subsystem = string(j, "subsystem", path).value_or("");
    r.port = string(j, "port", path).value_or("");
    r.label = string(j, "label", path, false).value_or("");
    return r;
  }

 private:
  std::filesystem::path base_;
};

// Port lookups on manifest entries (no matrices needed).
struct PortIndex {
  std::map<std::string, std::set<std::string>> inputs, outputs, dual;
  std::set<std::string> names;

  explicit PortIndex(const std::vector<SubsystemEntry>& subsystems) {
    for (const auto& s : subsystems) {
      names.insert(s.name);
      if (s.type == SubsystemEntry::Type::second_order) {
        for (const auto& p : s.ports) {
          if (p.role != PortRole::output) inputs[s.name].insert(p.label);
          if (p.role != PortRole::input) outputs[s.name].insert(p.label);
          if (p.dual) dual[s.name].insert(p.label);
        }
      } else {
        inputs[s.name].insert(s.inputs.begin(), s.inputs.end());
        outputs[s.name].insert(s.outputs.begin(), s.outputs.end());
      }
    }
  }
  bool is_io(const std::string& sub, const std::string& port) const {
    const auto i = inputs.find(sub), o = outputs.find(sub);
    return i != inputs.end() && o != outputs.end() && i->second.count(port) && o->second.count(port);
  }
};

void check_references(Parser& p, const std::vector<SubsystemEntry>& subs, const std::vector<InterfaceSpec>& ifaces,
                      const ExternalPorts* external, const std::string& where) {
  const PortIndex idx(subs);
  std::set<std::string> seen;
  for (const auto& s : subs)
    if (!seen.insert(s.name).second) p.issue(where, fmt::format("duplicate subsystem name '{}'", s.name));

  std::map<std::string, std::set<std::string>> virtual_ports;
  for (std::size_t i = 0; i < ifaces.size(); ++i) {
    const std::string path = fmt::format("{}.interfaces[{}]", where, i);
    for (const auto* side : {&ifaces[i].side_j, &ifaces[i].side_ell}) {
      if (!idx.names.count(side->subsystem)) {
        p.issue(path, fmt::format("unknown subsystem '{}'", side->subsystem));
        continue;
      }
      for (const auto& pt : side->points) {
        if (!idx.is_io(side->subsystem, pt.port))
          p.issue(path, fmt::format("'{}.{}' is not an io port", side->subsystem, pt.port));
        virtual_ports[side->subsystem].insert(pt.port);
      }
    }
  }
  if (!external) return;
  auto check = [&](const std::vector<PortRef>& refs, const std::map<std::string, std::set<std::string>>& table,
                   const char* kind) {
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& r = refs[k];
      const std::string path =
          where == "manifest" ? fmt::format("external.{}[{}]", kind, k) : fmt::format("{}: external.{}[{}]", where, kind, k);
      const auto it = table.find(r.subsystem);
      if (!idx.names.count(r.subsystem)) p.issue(path, fmt::format("unknown subsystem '{}'", r.subsystem));
      else if (it == table.end() || !it->second.count(r.port))
        p.issue(path, fmt::format("'{}.{}' is not an {} port", r.subsystem, r.port, kind == std::string("inputs") ? "input" : "output"));
      const auto vp = virtual_ports.find(r.subsystem);
      const auto dual = idx.dual.find(r.subsystem);
      if (vp != virtual_ports.end() && vp->second.count(r.port) &&
          (dual == idx.dual.end() || !dual->second.count(r.port)))
        p.issue(path, fmt::format("'{}.{}' is a virtual interface point; mark the port \"dual\": true to also use it "
                                  "externally",
                                  r.subsystem, r.port));
    }
  };
  check(external->inputs, idx.inputs, "inputs");
  check(external->outputs, idx.outputs, "outputs");
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// ---------------------------------------------------------------------------
// Serialization

json port_json(const PortEntry& p) {
  json j;
  j["label"] = p.label;
  j["dof"] = p.dof;
  j["role"] = p.role == PortRole::io ? "io" : (p.role == PortRole::input ? "input" : "output");
  if (p.kind != OutputKind::displacement) j["kind"] = "velocity";
  if (p.scale != 1.0) j["scale"] = p.scale;
  if (p.coordinate) j["coordinate"] = *p.coordinate;
  if (p.dual) j["dual"] = true;
  return j;
}

json subsystem_json(const SubsystemEntry& s) {
  json j;
  j["name"] = s.name;
  if (s.type == SubsystemEntry::Type::second_order) {
    j["type"] = "second_order";
    j["mass"] = s.mass;
    j["stiffness"] = s.stiffness;
    if (s.damping.kind == DampingSpec::Kind::file) j["damping"] = s.damping.file;
    if (s.damping.kind == DampingSpec::Kind::modal) j["damping"] = json{{"modal", true}, {"zeta", s.damping.zeta}};
    j["ports"] = json::array();
    for (const auto& p : s.ports) j["ports"].push_back(port_json(p));
  } else {
    j["type"] = "state_space";
    j["E"] = s.e;
    j["A"] = s.a;
    j["B"] = s.b;
    j["C"] = s.c;
    if (!s.d.empty()) j["D"] = s.d;
    j["inputs"] = s.inputs;
    j["outputs"] = s.outputs;
  }
  return j;
}

json side_json(const InterfaceSide& s) {
  json j;
  j["subsystem"] = s.subsystem;
  j["points"] = json::array();
  for (const auto& p : s.points) j["points"].push_back(json{{"port", p.port}, {"coordinate", p.coordinate}});
  return j;
}

json interface_json(const InterfaceSpec& f) {
  json j;
  j["id"] = f.id;
  j["axis"] = f.axis;
  j["sliding"] = f.sliding == SlidingSide::ell ? "ell" : "j";
  j["side_j"] = side_json(f.side_j);
  j["side_ell"] = side_json(f.side_ell);
  j["springs"] = json::array();
  for (const auto& s : f.springs)
    j["springs"].push_back(json{{"stiffness", s.stiffness}, {"anchor_j", s.anchor_j}, {"anchor_ell", s.anchor_ell_base}});
  return j;
}

json refs_json(const std::vector<PortRef>& refs) {
  json a = json::array();
  for (const auto& r : refs) {
    json j{{"subsystem", r.subsystem}, {"port", r.port}};
    if (!r.label.empty()) j["label"] = r.label;
    a.push_back(std::move(j));
  }
  return a;
}

}  // namespace

ModelManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, const std::string& source) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ValidationError(fmt::format("{}:{}:{}: invalid JSON ({})", source, line, col, e.what()));
  }

  Parser p(base_dir);
  ModelManifest m;
  m.base_dir = base_dir;
  if (!root.is_object()) throw ValidationError(fmt::format("{}: manifest must be a JSON object", source));

  const auto version = p.index(root, "schema_version", "manifest");
  if (version && *version != kManifestSchemaVersion)
    p.issue("manifest.schema_version", fmt::format("unsupported version {} (expected {})", *version,
                                                   kManifestSchemaVersion));
  m.name = p.string(root, "name", "manifest", false).value_or("");

  auto subsystems = [&](const json& obj, const std::string& path, std::vector<SubsystemEntry>& out) {
    if (const json* subs = p.array(obj, "subsystems", path)) {
      if (subs->empty()) p.issue(path + ".subsystems", "at least one subsystem is required");
      std::size_t k = 0;
      for (const auto& s : *subs) out.push_back(p.subsystem(s, fmt::format("{}.subsystems[{}]", path, k++)));
    }
  };
  auto interfaces = [&](const json& obj, const std::string& path, std::vector<InterfaceSpec>& out) {
    if (const json* ifs = p.array(obj, "interfaces", path, false)) {
      std::size_t k = 0;
      for (const auto& f : *ifs) out.push_back(p.interface(f, fmt::format("{}.interfaces[{}]", path, k++)));
    }
  };
  subsystems(root, "manifest", m.subsystems);
  interfaces(root, "manifest", m.interfaces);

  if (const json* ext = p.member(root, "external", "manifest", true)) {
    if (const json* ins = p.array(*ext, "inputs", "external")) {
      std::size_t k = 0;
      for (const auto& r : *ins) m.external.inputs.push_back(p.port_ref(r, fmt::format("external.inputs[{}]", k++)));
    }
    if (const json* outs = p.array(*ext, "outputs", "external")) {
      std::size_t k = 0;
      for (const auto& r : *outs)
        m.external.outputs.push_back(p.port_ref(r, fmt::format("external.outputs[{}]", k++)));
    }
  }

  if (const json* f = p.member(root, "frequency", "manifest", false)) {
    m.frequency.min_hz = p.number(*f, "min_hz", "frequency").value_or(1.0);
    m.frequency.max_hz = p.number(*f, "max_hz", "frequency").value_or(100.0);
    m.frequency.count = static_cast<std::size_t>(p.index(*f, "count", "frequency").value_or(200));
    m.frequency.log = p.boolean(*f, "log", "frequency", false).value_or(true);
    if (m.frequency.count < 1) p.issue("frequency.count", "must be >= 1");
    if (m.frequency.log && !(m.frequency.min_hz > 0.0)) p.issue("frequency.min_hz", "must be positive for a log grid");
    if (m.frequency.count > 1 && !(m.frequency.max_hz > m.frequency.min_hz))
      p.issue("frequency", "max_hz must exceed min_hz");
  }

  if (const json* op = p.member(root, "operating", "manifest", false)) {
    if (const json* ranges = p.array(*op, "ranges", "operating", false)) {
      std::size_t k = 0;
      for (const auto& r : *ranges) {
        const std::string path = fmt::format("operating.ranges[{}]", k++);
        OperatingRange range;
        range.lo = p.number(r, "lo", path).value_or(0.0);
        range.hi = p.number(r, "hi", path).value_or(0.0);
        range.count = static_cast<std::size_t>(p.index(r, "count", path).value_or(1));
        if (range.count < 1) p.issue(path + ".count", "must be >= 1");
        if (range.hi < range.lo) p.issue(path, "hi < lo");
        m.operating.ranges.push_back(range);
      }
      if (m.operating.ranges.size() != m.interfaces.size())
        p.issue("operating.ranges", fmt::format("{} ranges for {} interfaces", m.operating.ranges.size(),
                                                m.interfaces.size()));
    }
    if (const json* points = p.array(*op, "points", "operating", false)) {
      std::size_t k = 0;
      for (const auto& pt : *points) {
        const std::string path = fmt::format("operating.points[{}]", k++);
        OperatingPoint o;
        if (!pt.is_array()) {
          p.issue(path, "expected an array of offsets");
          continue;
        }
        for (const auto& v : pt) {
          if (!v.is_number()) p.issue(path, "offsets must be numbers");
          else o.offsets.push_back(v.get<double>());
        }
        if (o.offsets.size() != m.interfaces.size())
          p.issue(path, fmt::format("{} offsets for {} interfaces", o.offsets.size(), m.interfaces.size()));
        m.operating.points.push_back(std::move(o));
      }
    }
    if (!m.operating.ranges.empty() && !m.operating.points.empty())
      p.issue("operating", "give either ranges or points, not both");
  }

  if (const json* st = p.member(root, "static_model", "manifest", false)) {
    subsystems(*st, "static_model", m.static_subsystems);
    interfaces(*st, "static_model", m.static_interfaces);
    if (m.static_interfaces.size() != m.interfaces.size())
      p.issue("static_model.interfaces",
              fmt::format("{} static interfaces for {} interfaces", m.static_interfaces.size(), m.interfaces.size()));
  }

  check_references(p, m.subsystems, m.interfaces, &m.external, "manifest");
  if (m.has_static_model()) check_references(p, m.static_subsystems, m.static_interfaces, &m.external, "static_model");

  if (!p.issues.empty()) throw ValidationError(fmt::format("{}: invalid manifest", source), p.issues);
  return m;
}

ModelManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open manifest '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_manifest(buf.str(), base, path.string());
}

std::string manifest_to_json(const ModelManifest& m) {
  json root;
  root["schema_version"] = m.schema_version;
  if (!m.name.empty()) root["name"] = m.name;
  root["subsystems"] = json::array();
  for (const auto& s : m.subsystems) root["subsystems"].push_back(subsystem_json(s));
  root["interfaces"] = json::array();
  for (const auto& f : m.interfaces) root["interfaces"].push_back(interface_json(f));
  root["external"] = json{{"inputs", refs_json(m.external.inputs)}, {"outputs", refs_json(m.external.outputs)}};
  root["frequency"] = json{{"min_hz", m.frequency.min_hz},
                           {"max_hz", m.frequency.max_hz},
                           {"count", m.frequency.count},
                           {"log", m.frequency.log}};
  json op = json::object();
  if (!m.operating.ranges.empty()) {
    op["ranges"] = json::array();
    for (const auto& r : m.operating.ranges) op["ranges"].push_back(json{{"lo", r.lo}, {"hi", r.hi}, {"count", r.count}});
  }
  if (!m.operating.points.empty()) {
    op["points"] = json::array();
    for (const auto& pt : m.operating.points) op["points"].push_back(pt.offsets);
  }
  root["operating"] = std::move(op);
  if (m.has_static_model()) {
    json st;
    st["subsystems"] = json::array();
    for (const auto& s : m.static_subsystems) st["subsystems"].push_back(subsystem_json(s));
    st["interfaces"] = json::array();
    for (const auto& f : m.static_interfaces) st["interfaces"].push_back(interface_json(f));
    root["static_model"] = std::move(st);
  }
  return root.dump(2) + "\n";
}

void save_manifest(const ModelManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << manifest_to_json(manifest);
  if (!out) throw ValidationError(fmt::format("cannot write manifest '{}'", path.string()));
}

MaterializedModel materialize(const ModelManifest& manifest, bool static_model) {
  const auto& entries = static_model ? manifest.static_subsystems : manifest.subsystems;
  if (static_model && entries.empty()) throw ValidationError("manifest has no static_model section");
  std::vector<std::string> issues;
  MaterializedModel out;
  const auto& base = manifest.base_dir;

  for (const auto& s : entries) {
    try {
      if (s.type == SubsystemEntry::Type::second_order) {
        const SparseMatrix m = read_matrix_market(base / s.mass);
        const SparseMatrix k = read_matrix_market(base / s.stiffness);
        SparseMatrix d(m.rows(), m.cols());
        if (s.damping.kind == DampingSpec::Kind::file) d = read_matrix_market(base / s.damping.file);
        else if (s.damping.kind == DampingSpec::Kind::modal) d = build_modal_damping(m, k, s.damping.zeta);
        PortSet ports;
        for (const auto& p : s.ports) {
          if (p.role == PortRole::io) ports.add_io(p.label, p.dof, p.scale);
          else if (p.role == PortRole::input) ports.add_input(p.label, p.dof, p.scale);
          else ports.add_output(p.label, p.dof, p.kind, p.scale);
        }
        SecondOrderSystem sys(s.name, m, d, k, std::move(ports));
        out.descriptors.push_back(to_descriptor(sys));
        out.second_order.emplace_back(std::move(sys));
      } else {
        const SparseMatrix e = read_matrix_market(base / s.e);
        const SparseMatrix a = read_matrix_market(base / s.a);
        const SparseMatrix b = read_matrix_market(base / s.b);
        const SparseMatrix c = read_matrix_market(base / s.c);
        const Matrix d = s.d.empty() ? Matrix::Zero(c.rows(), b.cols()) : Matrix(read_matrix_market(base / s.d));
        out.descriptors.emplace_back(s.name, e, a, b, c, d, s.inputs, s.outputs);
        out.second_order.emplace_back();
      }
    } catch (const Error& e) {
      issues.push_back(fmt::format("subsystem '{}': {}", s.name, e.what()));
    }
  }
  if (!issues.empty()) throw ValidationError("cannot build the model", issues);

  out.interfaces = static_model ? manifest.static_interfaces : manifest.interfaces;
  out.external = manifest.external;
  out.layout = block_collect(out.descriptors).layout;
  out.outer = outer_interconnection(out.layout, out.external);
  for (const auto& f : out.interfaces) f.validate(&out.layout);
  return out;
}

ModelManifest write_bench_manifest(const TwoStageBench& bench, const std::filesystem::path& directory,
                                   const std::string& name) {
  std::filesystem::create_directories(directory);
  ModelManifest m;
  m.name = name;
  m.base_dir = directory;

  auto entry = [&](const SecondOrderSystem& sys, bool write_files,
                   const std::map<std::string, double>& coordinates) {
    SubsystemEntry s;
    s.name = sys.name();
    s.mass = sys.name() + "_M.mtx";
    s.stiffness = sys.name() + "_K.mtx";
    if (write_files) {
      write_matrix_market(directory / s.mass, sys.mass(), true);
      write_matrix_market(directory / s.stiffness, sys.stiffness(), true);
    }
    if (bench.config.zeta > 0.0) s.damping = {DampingSpec::Kind::modal, "", bench.config.zeta};
    const auto& ports = sys.ports();
    std::set<std::string> done;
    for (const auto& in : ports.inputs) {
      const auto out_idx = ports.find_output(in.label);
      const bool io = out_idx && ports.outputs[*out_idx].dof == in.dof &&
                      ports.outputs[*out_idx].kind == OutputKind::displacement &&
                      ports.outputs[*out_idx].scale == in.scale;
      PortEntry p{in.label, in.dof, io ? PortRole::io : PortRole::input, OutputKind::displacement, in.scale, {}, false};
      if (const auto it = coordinates.find(in.label); it != coordinates.end()) p.coordinate = it->second;
      s.ports.push_back(p);
      if (io) done.insert(in.label);
    }
    for (const auto& o : ports.outputs) {
      if (done.count(o.label)) continue;
      s.ports.push_back({o.label, o.dof, PortRole::output, o.kind, o.scale, {}, false});
    }
    return s;
  };
  auto coords = [](const std::vector<InterfaceSpec>& ifaces, const std::string& sub) {
    std::map<std::string, double> out;
    for (const auto& f : ifaces)
      for (const auto* side : {&f.side_j, &f.side_ell})
        if (side->subsystem == sub)
          for (const auto& p : side->points) out[p.port] = p.coordinate;
    return out;
  };

  for (const auto& sys : bench.subsystems) m.subsystems.push_back(entry(sys, true, coords(bench.interfaces, sys.name())));
  for (const auto& sys : bench.static_subsystems)
    m.static_subsystems.push_back(entry(sys, false, coords(bench.static_interfaces, sys.name())));
  m.interfaces = bench.interfaces;
  m.static_interfaces = bench.static_interfaces;
  m.external = bench.external;
  m.frequency = {1.0, bench.config.f_max_hz, 400, true};
  for (std::size_t k = 0; k < bench.interfaces.size(); ++k) m.operating.ranges.push_back({-0.02, 0.02, 3});
  save_manifest(m, directory / "manifest.json");
  return m;
}

}  // namespace modlink
