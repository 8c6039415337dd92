#include "udoc/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace udoc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::runtime_error("config: bad value for '" + key + "': '" + value + "'");
}

class KvReader {
 public:
  explicit KvReader(const KvConfig& kv) : kv_(kv) {}

  void read(const std::string& key, int& out) {
    if (auto* v = find(key)) {
      try {
        std::size_t pos = 0;
        out = std::stoi(*v, &pos);
        if (pos != v->size()) bad_value(key, *v);
      } catch (const std::logic_error&) {
        bad_value(key, *v);
      }
    }
  }

  void read(const std::string& key, long& out) {
    if (auto* v = find(key)) {
      try {
        std::size_t pos = 0;
        out = std::stol(*v, &pos);
        if (pos != v->size()) bad_value(key, *v);
      } catch (const std::logic_error&) {
        bad_value(key, *v);
      }
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (auto* v = find(key)) {
      try {
        std::size_t pos = 0;
        out = std::stoull(*v, &pos);
        if (pos != v->size()) bad_value(key, *v);
      } catch (const std::logic_error&) {
        bad_value(key, *v);
      }
    }
  }

  void read(const std::string& key, Scalar& out) {
    if (auto* v = find(key)) {
      try {
        std::size_t pos = 0;
        out = std::stod(*v, &pos);
        if (pos != v->size()) bad_value(key, *v);
      } catch (const std::logic_error&) {
        bad_value(key, *v);
      }
    }
  }

  void read(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (*v == "true" || *v == "1")
        out = true;
      else if (*v == "false" || *v == "0")
        out = false;
      else
        bad_value(key, *v);
    }
  }

  void read(const std::string& key, std::string& out) {
    if (auto* v = find(key)) out = *v;
  }

  void finish() const {
    for (const auto& [key, value] : kv_.values) {
      if (!consumed_.count(key))
        throw std::runtime_error("config: unknown key '" + key + "'");
    }
  }

 private:
  const std::string* find(const std::string& key) {
    consumed_.insert(key);
    auto it = kv_.values.find(key);
    return it == kv_.values.end() ? nullptr : &it->second;
  }

  const KvConfig& kv_;
  std::set<std::string> consumed_;
};

std::string format_scalar(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not 'key = value': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    kv.values[key] = value;
  }
  return kv;
}

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

std::string KvConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [key, value] : values) out << key << " = " << value << "\n";
  return out.str();
}

void CorpusConfig::validate() const {
  if (width <= 0 || height <= 0) throw std::runtime_error("corpus: page dims must be positive");
  if (min_regions < 1 || max_regions < min_regions)
    throw std::runtime_error("corpus: bad region count range");
  if (vocab_size < 8 || vocab_size % 4 != 0)
    throw std::runtime_error("corpus: vocab_size must be >= 8 and divisible by 4");
  if (min_tokens < 1 || max_tokens < min_tokens)
    throw std::runtime_error("corpus: bad token count range");
  if (min_region_w < 2 || min_region_h < 2 || max_region_w < min_region_w ||
      max_region_h < min_region_h)
    throw std::runtime_error("corpus: bad region size range");
  if (max_region_w > width || max_region_h > height)
    throw std::runtime_error("corpus: max region size exceeds page");
  // Packability certificate: a grid of minimum-size regions must hold max_regions.
  const long cells = static_cast<long>(width / min_region_w) * (height / min_region_h);
  if (cells < max_regions)
    throw std::runtime_error("corpus: cannot pack max_regions regions of minimum size into page");
}

std::string LossConfig::tasks_string() const {
  std::string s;
  auto add = [&s](const char* name) {
    if (!s.empty()) s += ",";
    s += name;
  };
  if (msm) add("msm");
  if (vcl) add("vcl");
  if (vla) add("vla");
  if (mvm) add("mvm");
  return s;
}

void LossConfig::set_tasks(const std::string& csv) {
  msm = vcl = vla = mvm = false;
  std::string token;
  std::istringstream in(csv);
  while (std::getline(in, token, ',')) {
    token = trim(token);
    if (token == "msm")
      msm = true;
    else if (token == "vcl")
      vcl = true;
    else if (token == "vla")
      vla = true;
    else if (token == "mvm")
      mvm = true;
    else if (!token.empty())
      throw std::runtime_error("config: unknown task '" + token + "'");
  }
  if (!any()) throw std::runtime_error("config: task set is empty");
}

RunConfig RunConfig::from_kv(const KvConfig& kv) {
  RunConfig cfg;
  KvReader r(kv);

  r.read("corpus.width", cfg.corpus.width);
  r.read("corpus.height", cfg.corpus.height);
  r.read("corpus.min_regions", cfg.corpus.min_regions);
  r.read("corpus.max_regions", cfg.corpus.max_regions);
  r.read("corpus.vocab_size", cfg.corpus.vocab_size);
  r.read("corpus.min_tokens", cfg.corpus.min_tokens);
  r.read("corpus.max_tokens", cfg.corpus.max_tokens);
  r.read("corpus.min_region_w", cfg.corpus.min_region_w);
  r.read("corpus.min_region_h", cfg.corpus.min_region_h);
  r.read("corpus.max_region_w", cfg.corpus.max_region_w);
  r.read("corpus.max_region_h", cfg.corpus.max_region_h);
  r.read("corpus.token_block_weight", cfg.corpus.token_block_weight);
  r.read("corpus.noise_amp", cfg.corpus.noise_amp);

  r.read("model.dim", cfg.model.dim);
  r.read("model.heads", cfg.model.heads);
  r.read("model.layers", cfg.model.layers);
  r.read("model.sentence_dim", cfg.model.sentence_dim);
  r.read("model.roi_pool", cfg.model.roi_pool);
  r.read("model.attn_scale_per_head", cfg.model.attn_scale_per_head);
  r.read("model.text_seed", cfg.model.text_seed);

  r.read("quant.codebooks", cfg.quant.codebooks);
  r.read("quant.entries", cfg.quant.entries);
  r.read("quant.entry_dim", cfg.quant.entry_dim);
  r.read("quant.tau0", cfg.quant.tau0);
  r.read("quant.tau_min", cfg.quant.tau_min);
  r.read("quant.tau_decay", cfg.quant.tau_decay);

  std::string tasks = cfg.loss.tasks_string();
  r.read("loss.tasks", tasks);
  cfg.loss.set_tasks(tasks);
  r.read("loss.kappa", cfg.loss.kappa);
  r.read("loss.lambda", cfg.loss.lambda);

  r.read("train.steps", cfg.train.steps);
  r.read("train.batch_size", cfg.train.batch_size);
  r.read("train.seed", cfg.train.seed);
  r.read("train.lr", cfg.train.lr);
  r.read("train.weight_decay", cfg.train.weight_decay);
  r.read("train.warmup_frac", cfg.train.warmup_frac);
  r.read("train.mask_prob_sentence", cfg.train.mask_prob_sentence);
  r.read("train.mask_prob_visual", cfg.train.mask_prob_visual);
  r.read("train.checkpoint_every", cfg.train.checkpoint_every);
  r.read("train.clip_norm", cfg.train.clip_norm);

  r.read("finetune.steps", cfg.finetune.steps);
  r.read("finetune.batch_size", cfg.finetune.batch_size);
  r.read("finetune.lr", cfg.finetune.lr);
  r.read("finetune.weight_decay", cfg.finetune.weight_decay);
  r.read("finetune.warmup_frac", cfg.finetune.warmup_frac);
  r.read("finetune.train_frac", cfg.finetune.train_frac);

  r.finish();

  cfg.corpus.validate();
  if (cfg.model.dim < 1 || cfg.model.heads < 1 || cfg.model.dim % cfg.model.heads != 0)
    throw std::runtime_error("config: heads must divide model.dim");
  if (cfg.model.layers < 1) throw std::runtime_error("config: model.layers must be >= 1");
  if (cfg.quant.codebooks < 1 || cfg.quant.entries < 2)
    throw std::runtime_error("config: quantizer needs C >= 1, E >= 2");
  if (cfg.loss.kappa <= 0) throw std::runtime_error("config: loss.kappa must be > 0");
  if (cfg.loss.lambda < 0) throw std::runtime_error("config: loss.lambda must be >= 0");
  if (cfg.train.mask_prob_sentence < 0 || cfg.train.mask_prob_sentence > 1 ||
      cfg.train.mask_prob_visual < 0 || cfg.train.mask_prob_visual > 1)
    throw std::runtime_error("config: mask probabilities must lie in [0,1]");
  if (cfg.train.warmup_frac < 0 || cfg.train.warmup_frac > 1)
    throw std::runtime_error("config: train.warmup_frac must lie in [0,1]");
  return cfg;
}

KvConfig RunConfig::to_kv() const {
  KvConfig kv;
  auto seti = [&kv](const char* k, long v) { kv.set(k, std::to_string(v)); };
  auto sets = [&kv](const char* k, Scalar v) { kv.set(k, format_scalar(v)); };

  seti("corpus.width", corpus.width);
  seti("corpus.height", corpus.height);
  seti("corpus.min_regions", corpus.min_regions);
  seti("corpus.max_regions", corpus.max_regions);
  seti("corpus.vocab_size", corpus.vocab_size);
  seti("corpus.min_tokens", corpus.min_tokens);
  seti("corpus.max_tokens", corpus.max_tokens);
  seti("corpus.min_region_w", corpus.min_region_w);
  seti("corpus.min_region_h", corpus.min_region_h);
  seti("corpus.max_region_w", corpus.max_region_w);
  seti("corpus.max_region_h", corpus.max_region_h);
  sets("corpus.token_block_weight", corpus.token_block_weight);
  sets("corpus.noise_amp", corpus.noise_amp);

  seti("model.dim", model.dim);
  seti("model.heads", model.heads);
  seti("model.layers", model.layers);
  seti("model.sentence_dim", model.sentence_dim);
  seti("model.roi_pool", model.roi_pool);
  kv.set("model.attn_scale_per_head", model.attn_scale_per_head ? "true" : "false");
  kv.set("model.text_seed", std::to_string(model.text_seed));

  seti("quant.codebooks", quant.codebooks);
  seti("quant.entries", quant.entries);
  seti("quant.entry_dim", quant.entry_dim);
  sets("quant.tau0", quant.tau0);
  sets("quant.tau_min", quant.tau_min);
  sets("quant.tau_decay", quant.tau_decay);

  kv.set("loss.tasks", loss.tasks_string());
  sets("loss.kappa", loss.kappa);
  sets("loss.lambda", loss.lambda);

  seti("train.steps", train.steps);
  seti("train.batch_size", train.batch_size);
  kv.set("train.seed", std::to_string(train.seed));
  sets("train.lr", train.lr);
  sets("train.weight_decay", train.weight_decay);
  sets("train.warmup_frac", train.warmup_frac);
  sets("train.mask_prob_sentence", train.mask_prob_sentence);
  sets("train.mask_prob_visual", train.mask_prob_visual);
  seti("train.checkpoint_every", train.checkpoint_every);
  sets("train.clip_norm", train.clip_norm);

  seti("finetune.steps", finetune.steps);
  seti("finetune.batch_size", finetune.batch_size);
  sets("finetune.lr", finetune.lr);
  sets("finetune.weight_decay", finetune.weight_decay);
  sets("finetune.warmup_frac", finetune.warmup_frac);
  sets("finetune.train_frac", finetune.train_frac);
  return kv;
}

RunConfig RunConfig::tiny() {
  RunConfig cfg;
  cfg.corpus.width = 32;
  cfg.corpus.height = 32;
  cfg.corpus.min_regions = 3;
  cfg.corpus.max_regions = 3;
  cfg.corpus.min_tokens = 2;
  cfg.corpus.max_tokens = 6;
  cfg.corpus.token_block_weight = 0.4;
  cfg.corpus.noise_amp = 0.12;
  cfg.corpus.min_region_w = 7;
  cfg.corpus.min_region_h = 6;
  cfg.corpus.max_region_w = 14;
  cfg.corpus.max_region_h = 12;

  cfg.model.dim = 8;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.model.sentence_dim = 8;
  cfg.model.roi_pool = 2;

  cfg.quant.codebooks = 2;
  cfg.quant.entries = 4;
  cfg.quant.entry_dim = 4;

  // All four tasks on so every head and backward path is exercised.
  cfg.loss.mvm = true;

  cfg.train.batch_size = 2;
  cfg.train.seed = 2;
  cfg.train.mask_prob_sentence = 0.5;
  cfg.train.mask_prob_visual = 0.5;
  return cfg;
}

RunConfig RunConfig::paper() {
  RunConfig cfg;
  cfg.corpus.max_regions = 64;
  cfg.model.dim = 768;
  cfg.model.heads = 12;
  cfg.model.layers = 12;
  cfg.model.sentence_dim = 768;
  cfg.train.batch_size = 64;
  return cfg;
}

int env_thread_cap() {
  const char* v = std::getenv("UDOC_THREADS");
  if (v == nullptr) return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

}  // namespace udoc
