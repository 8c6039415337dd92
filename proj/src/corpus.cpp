#include "udoc/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace udoc {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr int kPlaceAttempts = 64;

std::string doc_stem(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "doc_%05d", k);
  return buf;
}

// --- rendering -------------------------------------------------------------

using ByteImage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Each type is a family of textures, not one fixed pattern: periods,
// contrasts, thicknesses and directions vary per region. A classifier has to
// generalize over the family rather than memorize a single template.
void paint_texture(ByteImage& img, const BoundingBox& b, RegionType type, Rng& rng) {
  const int phase = rng.uniform_int(8);
  const int period = 2 + rng.uniform_int(7);           // stripes / checker cells
  const int dark = 30 + rng.uniform_int(80);           // dark tone of the pattern
  const int light = 150 + rng.uniform_int(90);         // light tone
  const int direction = rng.uniform_int(4);            // gradients
  const Scalar bar_frac = 0.3 + 0.6 * rng.uniform();   // title bar thickness
  const Scalar bar_off = 0.7 * rng.uniform();          // title bar position

  for (int y = b.y_lt; y < b.y_rb; ++y) {
    for (int x = b.x_lt; x < b.x_rb; ++x) {
      int v = light;
      switch (type) {
        case RegionType::Title: {
          // One thick solid bar; thickness and vertical placement vary.
          const int h = b.height();
          const int top = b.y_lt + static_cast<int>(bar_off * (1.0 - bar_frac) * h);
          const int bot = top + std::max(2, static_cast<int>(bar_frac * h));
          v = (y >= top && y < bot) ? dark : light;
          break;
        }
        case RegionType::Paragraph: {
          // Horizontal text-line stripes.
          const int half = std::max(1, period / 2);
          v = (((y - b.y_lt) + phase) % period < half) ? dark : light;
          break;
        }
        case RegionType::Table: {
          v = (((x - b.x_lt) / period + (y - b.y_lt) / period + phase) % 2 == 0) ? dark : light;
          break;
        }
        case RegionType::Figure: {
          // Smooth linear ramp; four possible directions.
          const Scalar tx = static_cast<Scalar>(x - b.x_lt) / std::max(1, b.width() - 1);
          const Scalar ty = static_cast<Scalar>(y - b.y_lt) / std::max(1, b.height() - 1);
          Scalar t = 0.0;
          switch (direction) {
            case 0: t = tx; break;
            case 1: t = ty; break;
            case 2: t = 0.5 * (tx + ty); break;
            default: t = 0.5 * (tx + 1.0 - ty); break;
          }
          v = dark + static_cast<int>(t * (light - dark));
          break;
        }
      }
      img(y, x) = static_cast<std::uint8_t>(v);
    }
  }
}

DocumentRecord generate_document(std::uint64_t seed, int index, const CorpusConfig& cfg) {
  Rng rng = Rng(seed).child(static_cast<std::uint64_t>(index));
  Rng layout = rng.child(1);
  Rng tokens = rng.child(2);
  Rng paint = rng.child(3);
  Rng noise = rng.child(4);

  DocumentRecord doc;
  doc.id = doc_stem(index);
  doc.width = cfg.width;
  doc.height = cfg.height;

  const int target_n = cfg.min_regions + layout.uniform_int(cfg.max_regions - cfg.min_regions + 1);
  for (int i = 0; i < target_n; ++i) {
    const auto type = static_cast<RegionType>(layout.uniform_int(kNumRegionTypes));
    bool placed = false;
    for (int attempt = 0; attempt < kPlaceAttempts && !placed; ++attempt) {
      const int w = cfg.min_region_w + layout.uniform_int(cfg.max_region_w - cfg.min_region_w + 1);
      const int h = cfg.min_region_h + layout.uniform_int(cfg.max_region_h - cfg.min_region_h + 1);
      BoundingBox box;
      box.x_lt = layout.uniform_int(cfg.width - w + 1);
      box.y_lt = layout.uniform_int(cfg.height - h + 1);
      box.x_rb = box.x_lt + w;
      box.y_rb = box.y_lt + h;
      const bool overlaps = std::any_of(doc.regions.begin(), doc.regions.end(),
                                        [&box](const Region& r) { return r.box.intersects(box); });
      if (!overlaps) {
        Region region;
        region.box = box;
        region.type_label = type;
        doc.regions.push_back(std::move(region));
        placed = true;
      }
    }
    // Greedy rejection sampling gave up: emit fewer regions.
  }

  const int block = cfg.vocab_size / kNumRegionTypes;
  for (auto& region : doc.regions) {
    const int n_tok = cfg.min_tokens + tokens.uniform_int(cfg.max_tokens - cfg.min_tokens + 1);
    const int t = static_cast<int>(region.type_label);
    region.tokens.reserve(n_tok);
    for (int j = 0; j < n_tok; ++j) {
      const bool own_block = tokens.bernoulli(cfg.token_block_weight);
      const int tok = own_block ? t * block + tokens.uniform_int(block)
                                : tokens.uniform_int(cfg.vocab_size);
      region.tokens.push_back(tok);
    }
  }

  ByteImage img = ByteImage::Constant(cfg.height, cfg.width, 248);
  for (const auto& region : doc.regions) paint_texture(img, region.box, region.type_label, paint);

  const int nb = static_cast<int>(std::lround(cfg.noise_amp * 255.0));
  doc.image.pixels.resize(cfg.height, cfg.width);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      int v = img(y, x);
      if (nb > 0) v += noise.uniform_int(2 * nb + 1) - nb;
      v = std::clamp(v, 0, 255);
      doc.image.pixels(y, x) = static_cast<Scalar>(v) / 255.0;
    }
  }
  return doc;
}

// --- PGM -------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const RasterImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("corpus: cannot write '" + path.string() + "'");
  out << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x)
      row[static_cast<std::size_t>(x)] =
          static_cast<std::uint8_t>(std::lround(image.pixels(y, x) * 255.0));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

int read_pgm_token(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comments, then reads one unsigned decimal.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error("corpus: bad image header in '" + path.string() + "'");
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 20) throw std::runtime_error("corpus: bad image header in '" + path.string() + "'");
    c = in.get();
  }
  return static_cast<int>(v);
}

RasterImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus: missing image file '" + path.string() + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '5')
    throw std::runtime_error("corpus: bad image header in '" + path.string() + "'");
  const int w = read_pgm_token(in, path);
  const int h = read_pgm_token(in, path);
  const int maxval = read_pgm_token(in, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("corpus: bad image header in '" + path.string() + "'");
  // Exactly one whitespace byte separates the header from the raster.
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("corpus: truncated image data in '" + path.string() + "'");
  RasterImage image;
  image.pixels.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      image.pixels(y, x) =
          static_cast<Scalar>(bytes[static_cast<std::size_t>(y) * w + x]) / 255.0;
  return image;
}

// --- JSON ------------------------------------------------------------------

json corpus_config_to_json(const CorpusConfig& cfg) {
  json j;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["min_regions"] = cfg.min_regions;
  j["max_regions"] = cfg.max_regions;
  j["vocab_size"] = cfg.vocab_size;
  j["min_tokens"] = cfg.min_tokens;
  j["max_tokens"] = cfg.max_tokens;
  j["min_region_w"] = cfg.min_region_w;
  j["min_region_h"] = cfg.min_region_h;
  j["max_region_w"] = cfg.max_region_w;
  j["max_region_h"] = cfg.max_region_h;
  j["token_block_weight"] = cfg.token_block_weight;
  j["noise_amp"] = cfg.noise_amp;
  return j;
}

CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig cfg;
  cfg.width = j.at("width").get<int>();
  cfg.height = j.at("height").get<int>();
  cfg.min_regions = j.at("min_regions").get<int>();
  cfg.max_regions = j.at("max_regions").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.min_tokens = j.at("min_tokens").get<int>();
  cfg.max_tokens = j.at("max_tokens").get<int>();
  cfg.min_region_w = j.at("min_region_w").get<int>();
  cfg.min_region_h = j.at("min_region_h").get<int>();
  cfg.max_region_w = j.at("max_region_w").get<int>();
  cfg.max_region_h = j.at("max_region_h").get<int>();
  cfg.token_block_weight = j.at("token_block_weight").get<Scalar>();
  cfg.noise_amp = j.at("noise_amp").get<Scalar>();
  return cfg;
}

}  // namespace

NormalizedBox normalize_box(const BoundingBox& box, int page_w, int page_h) {
  if (page_w <= 0 || page_h <= 0) throw std::runtime_error("normalize_box: page dims must be positive");
  if (box.x_lt < 0 || box.y_lt < 0 || box.x_rb > page_w || box.y_rb > page_h ||
      box.x_lt >= box.x_rb || box.y_lt >= box.y_rb)
    throw std::runtime_error("normalize_box: degenerate or out-of-bounds box");
  NormalizedBox nb;
  const auto W = static_cast<Scalar>(page_w);
  const auto H = static_cast<Scalar>(page_h);
  nb.p << box.x_lt / W, box.y_lt / H, box.x_rb / W, box.y_rb / H,
      (box.x_rb - box.x_lt) / W, (box.y_rb - box.y_lt) / H;
  return nb;
}

NormalizedBox whole_page_box() {
  NormalizedBox nb;
  nb.p << 0, 0, 1, 1, 1, 1;
  return nb;
}

const char* region_type_name(RegionType t) {
  switch (t) {
    case RegionType::Title: return "title";
    case RegionType::Paragraph: return "paragraph";
    case RegionType::Table: return "table";
    case RegionType::Figure: return "figure";
  }
  throw std::runtime_error("corpus: invalid region type");
}

RegionType region_type_from_name(const std::string& name) {
  for (int t = 0; t < kNumRegionTypes; ++t)
    if (name == region_type_name(static_cast<RegionType>(t))) return static_cast<RegionType>(t);
  throw std::runtime_error("corpus: unknown region type '" + name + "'");
}

Corpus generate_corpus(std::uint64_t seed, int count, const CorpusConfig& cfg) {
  if (count < 1) throw std::runtime_error("generate_corpus: count must be >= 1");
  cfg.validate();
  Corpus corpus;
  corpus.cfg = cfg;
  corpus.docs.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) corpus.docs.push_back(generate_document(seed, k, cfg));
  return corpus;
}

Scalar token_probability(const CorpusConfig& cfg, RegionType type, int token) {
  const int block = cfg.vocab_size / kNumRegionTypes;
  const int t = static_cast<int>(type);
  const bool in_block = token >= t * block && token < (t + 1) * block;
  Scalar p = (1.0 - cfg.token_block_weight) / cfg.vocab_size;
  if (in_block) p += cfg.token_block_weight / block;
  return p;
}

RegionType document_class(const DocumentRecord& doc) {
  int counts[kNumRegionTypes] = {0, 0, 0, 0};
  for (const auto& r : doc.regions) counts[static_cast<int>(r.type_label)]++;
  int best = 0;
  for (int t = 1; t < kNumRegionTypes; ++t)
    if (counts[t] > counts[best]) best = t;
  return static_cast<RegionType>(best);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["count"] = corpus.docs.size();
  manifest["config"] = corpus_config_to_json(corpus.cfg);
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("corpus: cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << "\n";
  }
  for (std::size_t k = 0; k < corpus.docs.size(); ++k) {
    const auto& doc = corpus.docs[k];
    const std::string stem = doc_stem(static_cast<int>(k));
    json j;
    j["id"] = doc.id;
    j["width"] = doc.width;
    j["height"] = doc.height;
    j["image"] = stem + ".pgm";
    json regions = json::array();
    for (const auto& r : doc.regions) {
      json jr;
      jr["box"] = {r.box.x_lt, r.box.y_lt, r.box.x_rb, r.box.y_rb};
      jr["tokens"] = r.tokens;
      jr["type"] = region_type_name(r.type_label);
      regions.push_back(std::move(jr));
    }
    j["regions"] = std::move(regions);
    std::ofstream out(dir / (stem + ".json"));
    if (!out)
      throw std::runtime_error("corpus: cannot write record '" + (dir / (stem + ".json")).string() + "'");
    out << j.dump(2) << "\n";
    write_pgm(dir / (stem + ".pgm"), doc.image);
  }
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw std::runtime_error("corpus: missing manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    min >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("corpus: malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (manifest.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("corpus: unsupported format version in '" + manifest_path.string() + "'");

  Corpus corpus;
  corpus.cfg = corpus_config_from_json(manifest.at("config"));
  const auto count = manifest.at("count").get<std::size_t>();
  corpus.docs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::string stem = doc_stem(static_cast<int>(k));
    const auto record_path = dir / (stem + ".json");
    std::ifstream rin(record_path);
    if (!rin) throw std::runtime_error("corpus: missing record '" + record_path.string() + "'");
    json j;
    try {
      rin >> j;
    } catch (const json::exception& e) {
      throw std::runtime_error("corpus: malformed record '" + record_path.string() + "': " + e.what());
    }
    DocumentRecord doc;
    doc.id = j.at("id").get<std::string>();
    doc.width = j.at("width").get<int>();
    doc.height = j.at("height").get<int>();
    for (const auto& jr : j.at("regions")) {
      Region r;
      const auto& box = jr.at("box");
      if (!box.is_array() || box.size() != 4)
        throw std::runtime_error("corpus: malformed box in '" + record_path.string() + "'");
      r.box = BoundingBox{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(), box[3].get<int>()};
      r.tokens = jr.at("tokens").get<std::vector<int>>();
      r.type_label = region_type_from_name(jr.at("type").get<std::string>());
      if (r.box.x_lt < 0 || r.box.x_rb > doc.width || r.box.y_lt < 0 || r.box.y_rb > doc.height ||
          r.box.width() <= 0 || r.box.height() <= 0)
        throw std::runtime_error("corpus: invalid region box in '" + record_path.string() + "'");
      for (int tok : r.tokens)
        if (tok < 0 || tok >= corpus.cfg.vocab_size)
          throw std::runtime_error("corpus: token id out of range in '" + record_path.string() + "'");
      doc.regions.push_back(std::move(r));
    }
    doc.image = read_pgm(dir / j.at("image").get<std::string>());
    if (doc.image.width() != doc.width || doc.image.height() != doc.height)
      throw std::runtime_error("corpus: image/record dimension mismatch for '" + doc.id + "'");
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

bool operator==(const BoundingBox& a, const BoundingBox& b) {
  return a.x_lt == b.x_lt && a.y_lt == b.y_lt && a.x_rb == b.x_rb && a.y_rb == b.y_rb;
}

bool operator==(const Region& a, const Region& b) {
  return a.box == b.box && a.tokens == b.tokens && a.type_label == b.type_label;
}

bool operator==(const DocumentRecord& a, const DocumentRecord& b) {
  return a.id == b.id && a.width == b.width && a.height == b.height &&
         a.regions == b.regions && a.image.pixels.rows() == b.image.pixels.rows() &&
         a.image.pixels.cols() == b.image.pixels.cols() &&
         (a.image.pixels.array() == b.image.pixels.array()).all();
}

}  // namespace udoc
