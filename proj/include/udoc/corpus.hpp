#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "udoc/config.hpp"
#include "udoc/rng.hpp"
#include "udoc/types.hpp"

namespace udoc {

// Pixel-space box, origin top-left, half-open spans [x_lt, x_rb) x [y_lt, y_rb).
struct BoundingBox {
  int x_lt = 0;
  int y_lt = 0;
  int x_rb = 0;
  int y_rb = 0;

  int width() const { return x_rb - x_lt; }
  int height() const { return y_rb - y_lt; }
  bool intersects(const BoundingBox& o) const {
    return x_lt < o.x_rb && o.x_lt < x_rb && y_lt < o.y_rb && o.y_lt < y_rb;
  }
};

// (x_lt/W, y_lt/H, x_rb/W, y_rb/H, w/W, h/H), all in [0,1].
struct NormalizedBox {
  Box6 p = Box6::Zero();
};

NormalizedBox normalize_box(const BoundingBox& box, int page_w, int page_h);
NormalizedBox whole_page_box();  // (0,0,1,1,1,1)

enum class RegionType { Title = 0, Paragraph = 1, Table = 2, Figure = 3 };
constexpr int kNumRegionTypes = 4;
const char* region_type_name(RegionType t);
RegionType region_type_from_name(const std::string& name);

struct Region {
  BoundingBox box;
  std::vector<int> tokens;
  RegionType type_label = RegionType::Paragraph;  // downstream ground truth only
};

struct RasterImage {
  Mat pixels;  // H x W, grayscale in [0,1], quantized to k/255
  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
};

struct DocumentRecord {
  std::string id;
  int width = 0;
  int height = 0;
  RasterImage image;
  std::vector<Region> regions;
};

struct Corpus {
  CorpusConfig cfg;
  std::vector<DocumentRecord> docs;
  std::size_t size() const { return docs.size(); }
};

// Deterministic in (seed, count, cfg); each document derives its own
// substream from (seed, index), so generation can run per-document in
// parallel without changing the result.
Corpus generate_corpus(std::uint64_t seed, int count, const CorpusConfig& cfg);

// Directory layout: manifest.json, doc_<k>.json, doc_<k>.pgm (binary P5).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Configured token distribution p(token | type); the generator samples from
// exactly this law, so tests can compare histograms against it.
Scalar token_probability(const CorpusConfig& cfg, RegionType type, int token);

// Synthetic whole-document class: most frequent region type, ties resolved
// toward the smaller type id.
RegionType document_class(const DocumentRecord& doc);

bool operator==(const BoundingBox& a, const BoundingBox& b);
bool operator==(const Region& a, const Region& b);
bool operator==(const DocumentRecord& a, const DocumentRecord& b);

}  // namespace udoc
