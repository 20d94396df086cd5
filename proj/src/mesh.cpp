#include "tge/mesh.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string_view>

#include "tge/error.hpp"
#include "tge/rng.hpp"

namespace tge {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return std::move(buf).str();
}

bool in_unit(double c) { return c >= 0.0 && c <= 1.0; }

// Splits on ASCII whitespace.
std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view tok, std::string_view what) {
  double value = 0.0;
  const auto* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw FormatError("bad number '" + std::string(tok) + "' in " + std::string(what));
  }
  return value;
}

long long parse_int(std::string_view tok, std::string_view what) {
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw FormatError("bad integer '" + std::string(tok) + "' in " + std::string(what));
  }
  return value;
}

void fan_triangulate(const std::vector<std::uint32_t>& polygon, std::vector<Face>& faces) {
  for (std::size_t k = 1; k + 1 < polygon.size(); ++k) {
    faces.push_back({polygon[0], polygon[k], polygon[k + 1]});
  }
}

// ---------------------------------------------------------------- OBJ

ColoredMesh parse_obj(const std::string& text, const std::string& name) {
  ColoredMesh mesh;
  mesh.name = name;
  bool missing_color = false;
  std::vector<std::uint32_t> polygon;

  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = tokenize(line);
    if (tok.empty()) continue;
    const std::string where = "OBJ line " + std::to_string(line_no);
    if (tok[0] == "v") {
      if (tok.size() < 4) throw FormatError(where + ": vertex needs 3 coordinates");
      mesh.vertices.push_back(
          {parse_double(tok[1], where), parse_double(tok[2], where), parse_double(tok[3], where)});
      if (tok.size() >= 7) {
        mesh.colors.push_back(
            {parse_double(tok[4], where), parse_double(tok[5], where), parse_double(tok[6], where)});
      } else {
        missing_color = true;
      }
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw FormatError(where + ": face needs at least 3 vertices");
      polygon.clear();
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const auto slash = tok[k].find('/');
        long long idx = parse_int(tok[k].substr(0, slash), where);
        if (idx < 0) idx = static_cast<long long>(mesh.vertices.size()) + idx + 1;
        if (idx < 1) throw FormatError(where + ": face index out of range");
        polygon.push_back(static_cast<std::uint32_t>(idx - 1));
      }
      fan_triangulate(polygon, mesh.faces);
    }
  }
  if (missing_color) throw MissingColorError("missing vertex colors in OBJ '" + name + "'");

  // Some exporters write 0-255 channel values into OBJ color slots.
  double max_channel = 0.0;
  for (const auto& c : mesh.colors) max_channel = std::max({max_channel, c.x, c.y, c.z});
  if (max_channel > 1.0) {
    for (auto& c : mesh.colors) c *= 1.0 / 255.0;
  }
  return mesh;
}

// ---------------------------------------------------------------- PLY

enum class PlyType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

PlyType ply_type(std::string_view s) {
  if (s == "char" || s == "int8") return PlyType::kInt8;
  if (s == "uchar" || s == "uint8") return PlyType::kUint8;
  if (s == "short" || s == "int16") return PlyType::kInt16;
  if (s == "ushort" || s == "uint16") return PlyType::kUint16;
  if (s == "int" || s == "int32") return PlyType::kInt32;
  if (s == "uint" || s == "uint32") return PlyType::kUint32;
  if (s == "float" || s == "float32") return PlyType::kFloat32;
  if (s == "double" || s == "float64") return PlyType::kFloat64;
  throw FormatError("unknown PLY property type '" + std::string(s) + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUint8: return 1;
    case PlyType::kInt16:
    case PlyType::kUint16: return 2;
    case PlyType::kInt32:
    case PlyType::kUint32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

bool ply_is_integer(PlyType t) { return t != PlyType::kFloat32 && t != PlyType::kFloat64; }

template <typename T>
T load_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

double read_binary(PlyType t, const char* p) {
  switch (t) {
    case PlyType::kInt8: return load_le<std::int8_t>(p);
    case PlyType::kUint8: return load_le<std::uint8_t>(p);
    case PlyType::kInt16: return load_le<std::int16_t>(p);
    case PlyType::kUint16: return load_le<std::uint16_t>(p);
    case PlyType::kInt32: return load_le<std::int32_t>(p);
    case PlyType::kUint32: return load_le<std::uint32_t>(p);
    case PlyType::kFloat32: return load_le<float>(p);
    case PlyType::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kFloat32;
  bool is_list = false;
  PlyType count_type = PlyType::kUint8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

class PlyReader {
 public:
  PlyReader(const std::string& data, std::size_t pos, bool binary)
      : data_(data), pos_(pos), binary_(binary) {}

  // Reads one scalar; in ASCII mode from the current line's tokens.
  double scalar(PlyType t) {
    if (binary_) {
      const std::size_t n = ply_size(t);
      if (pos_ + n > data_.size()) throw FormatError("truncated binary PLY body");
      const double v = read_binary(t, data_.data() + pos_);
      pos_ += n;
      return v;
    }
    if (tok_index_ >= tokens_.size()) throw FormatError("short line in ASCII PLY body");
    return parse_double(tokens_[tok_index_++], "PLY body");
  }

  void begin_row() {
    if (binary_) return;
    while (true) {
      if (pos_ >= data_.size()) throw FormatError("truncated ASCII PLY body");
      std::size_t end = data_.find('\n', pos_);
      if (end == std::string::npos) end = data_.size();
      tokens_ = tokenize(std::string_view(data_.data() + pos_, end - pos_));
      pos_ = end + 1;
      tok_index_ = 0;
      if (!tokens_.empty()) return;
    }
  }

 private:
  const std::string& data_;
  std::size_t pos_;
  bool binary_;
  std::vector<std::string_view> tokens_;
  std::size_t tok_index_ = 0;
};

ColoredMesh parse_ply(const std::string& data, const std::string& name) {
  if (data.rfind("ply", 0) != 0) throw FormatError("not a PLY file: '" + name + "'");
  std::size_t pos = 0;
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  while (true) {
    const std::size_t end = data.find('\n', pos);
    if (end == std::string::npos) throw FormatError("PLY header has no end_header");
    std::string_view line(data.data() + pos, end - pos);
    pos = end + 1;
    const auto tok = tokenize(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw FormatError("bad PLY format line");
      if (tok[1] == "ascii") {
        binary = false;
      } else if (tok[1] == "binary_little_endian") {
        binary = true;
      } else {
        throw FormatError("unsupported PLY format '" + std::string(tok[1]) + "'");
      }
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() < 3) throw FormatError("bad PLY element line");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(parse_int(tok[2], "PLY header")), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw FormatError("PLY property before element");
      PlyProperty prop;
      if (tok.size() >= 5 && tok[1] == "list") {
        prop.is_list = true;
        prop.count_type = ply_type(tok[2]);
        prop.type = ply_type(tok[3]);
        prop.name = std::string(tok[4]);
      } else if (tok.size() >= 3) {
        prop.type = ply_type(tok[1]);
        prop.name = std::string(tok[2]);
      } else {
        throw FormatError("bad PLY property line");
      }
      elements.back().props.push_back(prop);
    }
  }
  if (!have_format) throw FormatError("PLY header lacks a format line");

  ColoredMesh mesh;
  mesh.name = name;
  PlyReader reader(data, pos, binary);
  std::vector<std::uint32_t> polygon;
  bool saw_vertex = false;

  for (const auto& el : elements) {
    if (el.name == "vertex") {
      saw_vertex = true;
      int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
      for (int k = 0; k < static_cast<int>(el.props.size()); ++k) {
        const auto& n = el.props[k].name;
        if (n == "x") ix = k;
        else if (n == "y") iy = k;
        else if (n == "z") iz = k;
        else if (n == "red" || n == "r" || n == "diffuse_red") ir = k;
        else if (n == "green" || n == "g" || n == "diffuse_green") ig = k;
        else if (n == "blue" || n == "b" || n == "diffuse_blue") ib = k;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertex lacks x/y/z");
      if (ir < 0 || ig < 0 || ib < 0) {
        throw MissingColorError("missing vertex colors in PLY '" + name + "'");
      }
      const double rscale = ply_is_integer(el.props[ir].type) ? 1.0 / 255.0 : 1.0;
      const double gscale = ply_is_integer(el.props[ig].type) ? 1.0 / 255.0 : 1.0;
      const double bscale = ply_is_integer(el.props[ib].type) ? 1.0 / 255.0 : 1.0;
      mesh.vertices.resize(el.count);
      mesh.colors.resize(el.count);
      std::vector<double> row(el.props.size());
      for (std::size_t i = 0; i < el.count; ++i) {
        reader.begin_row();
        for (std::size_t k = 0; k < el.props.size(); ++k) {
          const auto& p = el.props[k];
          if (p.is_list) {
            const auto cnt = static_cast<std::size_t>(reader.scalar(p.count_type));
            for (std::size_t c = 0; c < cnt; ++c) reader.scalar(p.type);
            row[k] = 0.0;
          } else {
            row[k] = reader.scalar(p.type);
          }
        }
        mesh.vertices[i] = {row[ix], row[iy], row[iz]};
        mesh.colors[i] = {row[ir] * rscale, row[ig] * gscale, row[ib] * bscale};
      }
    } else if (el.name == "face") {
      int ilist = -1;
      for (int k = 0; k < static_cast<int>(el.props.size()); ++k) {
        const auto& p = el.props[k];
        if (p.is_list && (p.name == "vertex_indices" || p.name == "vertex_index")) ilist = k;
      }
      if (ilist < 0) throw FormatError("PLY face element lacks vertex_indices");
      for (std::size_t i = 0; i < el.count; ++i) {
        reader.begin_row();
        for (int k = 0; k < static_cast<int>(el.props.size()); ++k) {
          const auto& p = el.props[k];
          if (p.is_list) {
            const auto cnt = static_cast<std::size_t>(reader.scalar(p.count_type));
            if (k == ilist) {
              if (cnt < 3) throw FormatError("PLY face with fewer than 3 vertices");
              polygon.clear();
              for (std::size_t c = 0; c < cnt; ++c) {
                const double v = reader.scalar(p.type);
                if (v < 0) throw FormatError("negative PLY face index");
                polygon.push_back(static_cast<std::uint32_t>(v));
              }
              fan_triangulate(polygon, mesh.faces);
            } else {
              for (std::size_t c = 0; c < cnt; ++c) reader.scalar(p.type);
            }
          } else {
            reader.scalar(p.type);
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < el.count; ++i) {
        reader.begin_row();
        for (const auto& p : el.props) {
          if (p.is_list) {
            const auto cnt = static_cast<std::size_t>(reader.scalar(p.count_type));
            for (std::size_t c = 0; c < cnt; ++c) reader.scalar(p.type);
          } else {
            reader.scalar(p.type);
          }
        }
      }
    }
  }
  if (!saw_vertex) throw FormatError("PLY has no vertex element");
  return mesh;
}

MeshFormat format_from_extension(const std::filesystem::path& path, bool for_write) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return MeshFormat::kObj;
  if (ext == ".ply") return for_write ? MeshFormat::kPlyBinary : MeshFormat::kPlyAscii;
  throw FormatError("unsupported mesh format '" + ext + "'");
}

template <typename T>
void store_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(bytes, sizeof(T));
}

std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------- ColoredMesh

void ColoredMesh::validate() const {
  if (vertices.empty()) throw FormatError("mesh '" + name + "' has no vertices");
  if (colors.size() != vertices.size()) {
    throw FormatError("mesh '" + name + "': color count does not match vertex count");
  }
  for (const auto& c : colors) {
    if (!in_unit(c.x) || !in_unit(c.y) || !in_unit(c.z)) {
      throw FormatError("mesh '" + name + "': color channel outside [0,1]");
    }
  }
  for (const auto& v : vertices) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
      throw FormatError("mesh '" + name + "': non-finite vertex coordinate");
    }
  }
  for (const auto& f : faces) {
    for (auto idx : f) {
      if (idx >= vertices.size()) throw FormatError("mesh '" + name + "': face index out of range");
    }
  }
}

double ColoredMesh::surface_area() const {
  double area = 0.0;
  for (const auto& f : faces) {
    area += 0.5 * norm(cross(vertices[f[1]] - vertices[f[0]], vertices[f[2]] - vertices[f[0]]));
  }
  return area;
}

void ColoredPointCloud::validate() const {
  if (colors.size() != points.size()) throw FormatError("point cloud: |colors| != |points|");
  if (!normals.empty()) {
    if (normals.size() != points.size()) throw FormatError("point cloud: |normals| != |points|");
    for (const auto& n : normals) {
      if (std::abs(norm(n) - 1.0) > 1e-6) throw FormatError("point cloud: normal is not unit length");
    }
  }
}

// ---------------------------------------------------------------- I/O

ColoredMesh load_mesh(const std::filesystem::path& path, MeshFormat hint) {
  const MeshFormat format = hint == MeshFormat::kAuto ? format_from_extension(path, false) : hint;
  const std::string data = read_file(path);
  const std::string name = path.stem().string();
  ColoredMesh mesh = format == MeshFormat::kObj ? parse_obj(data, name) : parse_ply(data, name);
  mesh.validate();
  return mesh;
}

void save_mesh(const ColoredMesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  mesh.validate();
  if (format == MeshFormat::kAuto) format = format_from_extension(path, true);
  std::string out;
  if (format == MeshFormat::kObj) {
    out += "# " + mesh.name + "\n";
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& v = mesh.vertices[i];
      const auto& c = mesh.colors[i];
      out += "v " + fmt_double(v.x) + ' ' + fmt_double(v.y) + ' ' + fmt_double(v.z) + ' ' +
             fmt_double(c.x) + ' ' + fmt_double(c.y) + ' ' + fmt_double(c.z) + '\n';
    }
    for (const auto& f : mesh.faces) {
      out += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' +
             std::to_string(f[2] + 1) + '\n';
    }
  } else {
    const bool binary = format == MeshFormat::kPlyBinary;
    out += "ply\n";
    out += binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n";
    out += "comment " + mesh.name + "\n";
    out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
    for (const char* p : {"x", "y", "z", "red", "green", "blue"}) {
      out += std::string("property double ") + p + "\n";
    }
    out += "element face " + std::to_string(mesh.faces.size()) + "\n";
    out += "property list uchar uint vertex_indices\nend_header\n";
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& v = mesh.vertices[i];
      const auto& c = mesh.colors[i];
      if (binary) {
        for (double x : {v.x, v.y, v.z, c.x, c.y, c.z}) store_le<double>(out, x);
      } else {
        out += fmt_double(v.x) + ' ' + fmt_double(v.y) + ' ' + fmt_double(v.z) + ' ' +
               fmt_double(c.x) + ' ' + fmt_double(c.y) + ' ' + fmt_double(c.z) + '\n';
      }
    }
    for (const auto& f : mesh.faces) {
      if (binary) {
        store_le<std::uint8_t>(out, 3);
        for (auto idx : f) store_le<std::uint32_t>(out, idx);
      } else {
        out += "3 " + std::to_string(f[0]) + ' ' + std::to_string(f[1]) + ' ' + std::to_string(f[2]) + '\n';
      }
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write '" + path.string() + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------- normalization

NormalizationTransform normalization_of(const ColoredMesh& mesh) {
  if (mesh.vertices.empty()) throw DegenerateGeometryError("cannot normalize an empty mesh");
  Vec3 centroid;
  for (const auto& v : mesh.vertices) centroid += v;
  centroid *= 1.0 / static_cast<double>(mesh.vertices.size());
  double max_sq = 0.0;
  for (const auto& v : mesh.vertices) max_sq = std::max(max_sq, squared_distance(v, centroid));
  if (!(max_sq > 0.0)) throw DegenerateGeometryError("mesh '" + mesh.name + "' has zero extent");
  return {centroid * -1.0, 1.0 / std::sqrt(max_sq)};
}

ColoredMesh apply_transform(const ColoredMesh& mesh, const NormalizationTransform& transform) {
  ColoredMesh out = mesh;
  for (auto& v : out.vertices) v = transform.apply(v);
  return out;
}

std::pair<ColoredMesh, NormalizationTransform> normalize(const ColoredMesh& mesh) {
  const auto t = normalization_of(mesh);
  return {apply_transform(mesh, t), t};
}

// ---------------------------------------------------------------- sampling

ColoredPointCloud sample_points(const ColoredMesh& mesh, std::size_t n, std::uint64_t seed,
                                bool with_normals) {
  if (n == 0) throw std::invalid_argument("sample_points: n must be >= 1");
  if (mesh.faces.empty()) throw DegenerateGeometryError("mesh '" + mesh.name + "' has no faces");

  std::vector<double> cdf(mesh.faces.size());
  std::vector<Vec3> face_normal(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    const Vec3 c = cross(mesh.vertices[face[1]] - mesh.vertices[face[0]],
                         mesh.vertices[face[2]] - mesh.vertices[face[0]]);
    const double len = norm(c);
    total += 0.5 * len;
    cdf[f] = total;
    face_normal[f] = len > 0.0 ? c * (1.0 / len) : Vec3{};
  }
  if (!(total > 0.0)) throw DegenerateGeometryError("mesh '" + mesh.name + "' has zero surface area");

  ColoredPointCloud cloud;
  cloud.source = mesh.name;
  cloud.seed = seed;
  cloud.points.reserve(n);
  cloud.colors.reserve(n);
  if (with_normals) cloud.normals.reserve(n);

  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    // upper_bound lands on a face with positive area; the end case can only
    // arise from rounding and falls back to the last such face.
    if (it == cdf.end()) it = std::lower_bound(cdf.begin(), cdf.end(), total);
    const auto f = static_cast<std::size_t>(it - cdf.begin());

    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double w0 = 1.0 - r1;
    const double w1 = r1 * (1.0 - r2);
    const double w2 = r1 * r2;
    const auto& face = mesh.faces[f];
    cloud.points.push_back(mesh.vertices[face[0]] * w0 + mesh.vertices[face[1]] * w1 +
                           mesh.vertices[face[2]] * w2);
    cloud.colors.push_back(mesh.colors[face[0]] * w0 + mesh.colors[face[1]] * w1 +
                           mesh.colors[face[2]] * w2);
    if (with_normals) cloud.normals.push_back(face_normal[f]);
  }
  return cloud;
}

std::vector<Vec3> vertex_normals(const ColoredMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    // Unnormalized cross product weights by twice the face area.
    const Vec3 c = cross(mesh.vertices[f[1]] - mesh.vertices[f[0]], mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    for (auto idx : f) normals[idx] += c;
  }
  for (auto& n : normals) {
    const double len = norm(n);
    n = len > 0.0 ? n * (1.0 / len) : Vec3{0.0, 0.0, 1.0};
  }
  return normals;
}

Aabb bounding_box(const std::vector<Vec3>& points) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Aabb box{{inf, inf, inf}, {-inf, -inf, -inf}};
  for (const auto& p : points) {
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[a]);
      box.hi[a] = std::max(box.hi[a], p[a]);
    }
  }
  return box;
}

}  // namespace tge
