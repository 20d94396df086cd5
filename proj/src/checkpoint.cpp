#include "tge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tge/error.hpp"

namespace tge {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

}  // namespace

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, std::uint64_t seed,
                      const std::string& fingerprint, const ad::ParameterSet& params) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = config;
  header["seed"] = seed;
  header["fingerprint"] = fingerprint;
  header["params"] = nlohmann::json::array();
  for (const auto& p : params.items()) {
    header["params"].push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}});
  }
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params.items()) {
      const auto v = p.value.values();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char buf[8];
  if (!in.read(buf, 8)) throw FormatError("checkpoint truncated: " + path.string());
  std::uint64_t len = 0;
  std::memcpy(&len, buf, 8);
  if (len == 0 || len > (1ULL << 30)) throw FormatError("checkpoint header length invalid: " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw FormatError("unsupported checkpoint format_version");
  }

  Checkpoint ck;
  ck.config = header.at("config");
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.fingerprint = header.at("fingerprint").get<std::string>();
  for (const auto& p : header.at("params")) {
    const auto shape = p.at("shape").get<std::array<std::size_t, 2>>();
    const auto idx = ck.params.add(p.at("name").get<std::string>(), shape);
    auto v = ck.params[idx].value.mutable_values();
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw FormatError("checkpoint data truncated at '" + ck.params[idx].name + "'");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint data");
  return ck;
}

}  // namespace tge
