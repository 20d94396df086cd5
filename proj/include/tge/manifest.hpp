#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tge {

/// One distorted copy of a reference object.
struct DistortedEntry {
  std::string id;                    // defaults to the file stem
  std::filesystem::path path;        // resolved against the manifest directory
  std::string method;
  std::optional<double> score;       // normalized human label in [0,1]
  std::optional<double> level;       // synthetic distortion level, when generated
};

struct ObjectGroup {
  std::string id;
  std::filesystem::path reference;
  std::vector<DistortedEntry> distorted;
};

/// Dataset manifest:
/// `{objects: [{id, reference, distorted: [{path, method, score}]}]}`.
/// Relative paths are resolved against `root`.
struct Manifest {
  std::vector<ObjectGroup> objects;
  std::filesystem::path root;

  const ObjectGroup* find(const std::string& id) const;
  std::size_t scored_pairs() const;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j, const std::filesystem::path& root);
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace tge
