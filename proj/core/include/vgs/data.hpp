#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vgs/tensor.hpp"
#include "vgs/upos.hpp"

namespace vgs {

/// One force-aligned word: surface form, time span in seconds, UPOS tag.
struct TokenSpan {
  std::string surface;
  double start_s = 0.0;
  double end_s = 0.0;
  Upos upos = Upos::X;
};

struct CaptionRecord {
  std::string caption_id;
  std::string image_id;
  std::string language;
  std::string feature_ref;  // relative to the manifest directory
  std::size_t n_frames = 0;
  std::vector<TokenSpan> tokens;
};

/// One split of a corpus: caption records plus the image feature index.
///
/// On disk a manifest is a JSON-lines file (one CaptionRecord per line) with
/// a sibling `<name>.images.json` mapping image_id -> feature ref.
struct Manifest {
  std::string split;  // manifest filename stem
  std::string dir;    // directory feature refs are resolved against
  std::vector<CaptionRecord> records;
  std::map<std::string, std::string> images;

  std::string resolve(const std::string& ref) const;
  /// Enforces token ordering, image resolution and frame coverage.
  void validate(double frame_hop_s = 0.01) const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

/// Binary feature matrix: magic "VGSF", u32 version, u32 rows, u32 cols,
/// f32 little-endian row-major payload. Values are promoted to f64 on load.
Tensor load_features(const std::string& path);
void write_features(const std::string& path, const Tensor& features);

}  // namespace vgs
