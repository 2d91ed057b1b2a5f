#include "vgs/data.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"

namespace fs = std::filesystem;

namespace vgs {

namespace {

std::string images_index_path(const std::string& manifest_path) {
  const std::string suffix = ".jsonl";
  if (manifest_path.size() > suffix.size() &&
      manifest_path.compare(manifest_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return manifest_path.substr(0, manifest_path.size() - suffix.size()) + ".images.json";
  return manifest_path + ".images.json";
}

nlohmann::json token_to_json(const TokenSpan& t) {
  nlohmann::json j;
  j["surface"] = t.surface;
  j["start_s"] = t.start_s;
  j["end_s"] = t.end_s;
  j["upos"] = upos_name(t.upos);
  return j;
}

TokenSpan token_from_json(const nlohmann::json& j) {
  TokenSpan t;
  t.surface = j.at("surface").get<std::string>();
  t.start_s = j.at("start_s").get<double>();
  t.end_s = j.at("end_s").get<double>();
  t.upos = parse_upos(j.at("upos").get<std::string>());
  return t;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::string Manifest::resolve(const std::string& ref) const {
  fs::path p(ref);
  if (p.is_absolute() || dir.empty()) return ref;
  return (fs::path(dir) / p).string();
}

void Manifest::validate(double frame_hop_s) const {
  for (const auto& rec : records) {
    if (rec.caption_id.empty()) throw ValidationError("manifest: empty caption_id");
    if (!images.count(rec.image_id))
      throw ValidationError("manifest: caption '" + rec.caption_id +
                            "' references unknown image_id '" + rec.image_id + "'");
    if (rec.n_frames == 0)
      throw ValidationError("manifest: caption '" + rec.caption_id + "' has zero frames");
    double max_end = 0.0;
    for (std::size_t i = 0; i < rec.tokens.size(); ++i) {
      const TokenSpan& t = rec.tokens[i];
      if (!(t.start_s >= 0.0) || !(t.start_s < t.end_s))
        throw ValidationError("manifest: caption '" + rec.caption_id + "' token '" + t.surface +
                              "' has invalid span");
      if (i > 0 && t.start_s < rec.tokens[i - 1].end_s - 1e-9)
        throw ValidationError("manifest: caption '" + rec.caption_id +
                              "' tokens overlap or are unsorted at '" + t.surface + "'");
      max_end = std::max(max_end, t.end_s);
    }
    const double covered = static_cast<double>(rec.n_frames) * frame_hop_s;
    if (max_end > covered + frame_hop_s + 1e-9)
      throw ValidationError("manifest: caption '" + rec.caption_id + "' tokens extend to " +
                            std::to_string(max_end) + "s but features cover only " +
                            std::to_string(covered) + "s");
  }
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path + "'");

  Manifest m;
  m.split = fs::path(path).stem().string();
  m.dir = fs::path(path).parent_path().string();

  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      CaptionRecord rec;
      rec.caption_id = j.at("caption_id").get<std::string>();
      rec.image_id = j.at("image_id").get<std::string>();
      rec.language = j.at("language").get<std::string>();
      rec.feature_ref = j.at("feature_ref").get<std::string>();
      rec.n_frames = j.at("n_frames").get<std::size_t>();
      for (const auto& tj : j.at("tokens")) rec.tokens.push_back(token_from_json(tj));
      if (seen[rec.caption_id])
        throw ValidationError("duplicate caption_id '" + rec.caption_id + "'");
      seen[rec.caption_id] = true;
      m.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }

  const std::string index_path = images_index_path(path);
  std::ifstream idx(index_path);
  if (!idx) throw FormatError("cannot open images index '" + index_path + "'");
  try {
    nlohmann::json j;
    idx >> j;
    if (!j.is_object()) throw FormatError("images index must be a JSON object");
    for (const auto& item : j.items()) m.images[item.key()] = item.value().get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(index_path + ": " + e.what());
  }

  m.validate();
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  m.validate();
  fs::path dir = fs::path(path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  std::ofstream out(path, std::ios::binary);  // binary: no newline translation
  if (!out) throw FormatError("cannot write manifest '" + path + "'");
  for (const auto& rec : m.records) {
    nlohmann::json j;
    j["caption_id"] = rec.caption_id;
    j["image_id"] = rec.image_id;
    j["language"] = rec.language;
    j["feature_ref"] = rec.feature_ref;
    j["n_frames"] = rec.n_frames;
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& t : rec.tokens) toks.push_back(token_to_json(t));
    j["tokens"] = std::move(toks);
    out << j.dump() << "\n";
  }
  out.close();
  if (!out) throw FormatError("failed writing manifest '" + path + "'");

  std::ofstream idx(images_index_path(path), std::ios::binary);
  if (!idx) throw FormatError("cannot write images index for '" + path + "'");
  nlohmann::json j(m.images);
  idx << j.dump(2) << "\n";
  idx.close();
  if (!idx) throw FormatError("failed writing images index for '" + path + "'");
}

Tensor load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file '" + path + "'");

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "VGSF", 4) != 0)
    throw FormatError(path + ": bad magic, not a VGSF feature file");
  const std::uint32_t version = read_u32(in, path, "version");
  if (version != 1)
    throw FormatError(path + ": unsupported VGSF version " + std::to_string(version));
  const std::uint32_t rows = read_u32(in, path, "row count");
  const std::uint32_t cols = read_u32(in, path, "column count");
  if (rows == 0 || cols == 0)
    throw FormatError(path + ": empty feature matrix (" + std::to_string(rows) + "x" +
                      std::to_string(cols) + ")");

  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> raw(n * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != raw.size())
    throw FormatError(path + ": truncated payload, expected " + std::to_string(raw.size()) +
                      " bytes, got " + std::to_string(got));

  Tensor out({rows, cols});
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                         (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                         (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                         (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

void write_features(const std::string& path, const Tensor& features) {
  if (features.rank() != 2)
    throw DimensionError("write_features: expected a rank-2 tensor, got " + shape_str(features));
  fs::path dir = fs::path(path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write feature file '" + path + "'");
  out.write("VGSF", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(features.dim(0)));
  write_u32(out, static_cast<std::uint32_t>(features.dim(1)));
  for (std::size_t i = 0; i < features.size(); ++i) {
    const float f = static_cast<float>(features[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(bits),
                          static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16),
                          static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  out.close();
  if (!out) throw FormatError("failed writing feature file '" + path + "'");
}

}  // namespace vgs
