#pragma once

// JSON model manifest (schema_version 1). Matrices live in external Matrix
// Market files referenced relative to the manifest's directory.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modlink/interconnect.hpp"
#include "modlink/lti.hpp"
#include "modlink/models.hpp"

namespace modlink {

inline constexpr int kManifestSchemaVersion = 1;

enum class PortRole { io, input, output };

struct PortEntry {
  std::string label;
  Index dof = 0;
  PortRole role = PortRole::io;
  OutputKind kind = OutputKind::displacement;
  double scale = 1.0;
  std::optional<double> coordinate;  ///< informational
  bool dual = false;  ///< may be both a virtual point and an external port

  bool operator==(const PortEntry&) const = default;
};

struct DampingSpec {
  enum class Kind { none, file, modal };
  Kind kind = Kind::none;
  std::string file;
  double zeta = 0.0;

  bool operator==(const DampingSpec&) const = default;
};

struct SubsystemEntry {
  enum class Type { second_order, state_space };
  std::string name;
  Type type = Type::second_order;
  // second_order
  std::string mass, stiffness;
  DampingSpec damping;
  std::vector<PortEntry> ports;
  // state_space
  std::string e, a, b, c, d;  ///< d optional (empty = zero feedthrough)
  std::vector<std::string> inputs, outputs;

  bool operator==(const SubsystemEntry&) const = default;
};

struct FrequencySpec {
  double min_hz = 1.0;
  double max_hz = 100.0;
  std::size_t count = 200;
  bool log = true;

  std::vector<double> omega() const;  ///< rad/s
  bool operator==(const FrequencySpec&) const = default;
};

/// Either a Cartesian grid (one range per interface) or explicit points.
struct OperatingSpec {
  std::vector<OperatingRange> ranges;
  std::vector<OperatingPoint> points;

  std::vector<OperatingPoint> expand() const;
  bool operator==(const OperatingSpec&) const = default;
};

struct ModelManifest {
  int schema_version = kManifestSchemaVersion;
  std::string name;
  std::filesystem::path base_dir;  ///< not part of the semantic content
  std::vector<SubsystemEntry> subsystems;
  std::vector<InterfaceSpec> interfaces;
  ExternalPorts external;
  FrequencySpec frequency;
  OperatingSpec operating;
  /// Optional ground-truth model with springs attached directly to ports.
  std::vector<SubsystemEntry> static_subsystems;
  std::vector<InterfaceSpec> static_interfaces;

  bool has_static_model() const noexcept { return !static_subsystems.empty(); }
  /// Semantic equality (ignores base_dir).
  bool operator==(const ModelManifest& other) const;
};

/// Parses and validates; every problem found is reported in one ValidationError.
ModelManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir,
                             const std::string& source = "<manifest>");
ModelManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const ModelManifest& manifest);
void save_manifest(const ModelManifest& manifest, const std::filesystem::path& path);

/// Numerical model built from a manifest.
struct MaterializedModel {
  std::vector<DescriptorStateSpace> descriptors;
  std::vector<std::optional<SecondOrderSystem>> second_order;  ///< empty for state_space entries
  std::vector<InterfaceSpec> interfaces;
  ExternalPorts external;
  PortLayout layout;
  InterconnectionMatrix outer;
};

/// Reads the matrices and builds the subsystems (modal damping recipes are
/// evaluated here). `static_model` selects the ground-truth section.
MaterializedModel materialize(const ModelManifest& manifest, bool static_model = false);

/// Writes Matrix Market files and manifest.json for a generated bench into
/// `directory` and returns the manifest.
ModelManifest write_bench_manifest(const TwoStageBench& bench, const std::filesystem::path& directory,
                                   const std::string& name = "two-stage-bench");

}  // namespace modlink
