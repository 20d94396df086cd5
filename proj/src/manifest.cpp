#include "tge/manifest.hpp"

#include <fstream>

#include "tge/error.hpp"

namespace tge {

namespace {

// Paths under `root` are written relative to it; anything else stays absolute.
std::string relative_or_absolute(const std::filesystem::path& p, const std::filesystem::path& root) {
  if (root.empty()) return p.generic_string();
  std::error_code ec;
  const auto abs_p = std::filesystem::absolute(p, ec).lexically_normal();
  const auto abs_root = std::filesystem::absolute(root, ec).lexically_normal();
  auto rel = abs_p.lexically_relative(abs_root);
  if (ec || rel.empty() || rel.native().rfind("..", 0) == 0) return abs_p.generic_string();
  return rel.generic_string();
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& root) {
  std::filesystem::path path(p);
  if (path.is_absolute() || root.empty()) return path;
  return root / path;
}

}  // namespace

const ObjectGroup* Manifest::find(const std::string& id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

std::size_t Manifest::scored_pairs() const {
  std::size_t n = 0;
  for (const auto& o : objects) {
    for (const auto& d : o.distorted) n += d.score.has_value();
  }
  return n;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : objects) {
    nlohmann::json dist = nlohmann::json::array();
    for (const auto& d : o.distorted) {
      nlohmann::json e = {{"id", d.id}, {"path", relative_or_absolute(d.path, root)}, {"method", d.method}};
      e["score"] = d.score ? nlohmann::json(*d.score) : nlohmann::json(nullptr);
      if (d.level) e["level"] = *d.level;
      dist.push_back(std::move(e));
    }
    objs.push_back({{"id", o.id}, {"reference", relative_or_absolute(o.reference, root)}, {"distorted", dist}});
  }
  return {{"objects", objs}};
}

Manifest Manifest::from_json(const nlohmann::json& j, const std::filesystem::path& root) {
  Manifest m;
  m.root = root;
  try {
    for (const auto& o : j.at("objects")) {
      ObjectGroup g;
      g.id = o.at("id").get<std::string>();
      g.reference = resolve(o.at("reference").get<std::string>(), root);
      for (const auto& d : o.value("distorted", nlohmann::json::array())) {
        DistortedEntry e;
        e.path = resolve(d.at("path").get<std::string>(), root);
        e.id = d.contains("id") ? d["id"].get<std::string>() : e.path.stem().string();
        e.method = d.value("method", std::string());
        if (d.contains("score") && !d["score"].is_null()) {
          const double s = d["score"].get<double>();
          if (!(s >= 0.0 && s <= 1.0)) throw FormatError("manifest score outside [0,1] for '" + e.id + "'");
          e.score = s;
        }
        if (d.contains("level") && !d["level"].is_null()) e.level = d["level"].get<double>();
        g.distorted.push_back(std::move(e));
      }
      if (m.find(g.id) != nullptr) throw FormatError("duplicate object id '" + g.id + "' in manifest");
      m.objects.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid manifest: ") + e.what());
  }
  return m;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

void Manifest::save(const std::filesystem::path& path) const {
  Manifest rebased = *this;
  rebased.root = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << rebased.to_json().dump(2) << '\n';
}

}  // namespace tge
