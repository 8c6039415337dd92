#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "udoc/types.hpp"

namespace udoc {

// Flat `key = value` text config. '#' starts a comment, blank lines ignored.
// Keys are dotted paths; values stay strings until a typed consumer reads
// them. Serialization is sorted by key so config echoes are byte-stable.
struct KvConfig {
  std::map<std::string, std::string> values;

  static KvConfig parse_string(const std::string& text);
  static KvConfig parse_file(const std::filesystem::path& path);

  std::string serialize() const;
  bool has(const std::string& key) const { return values.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values[key] = value; }
};

enum class Task { Msm, Vcl, Vla, Mvm };

struct CorpusConfig {
  int width = 128;
  int height = 128;
  int min_regions = 3;
  int max_regions = 8;
  int vocab_size = 64;
  int min_tokens = 1;
  int max_tokens = 4;
  int min_region_w = 18;
  int min_region_h = 12;
  int max_region_w = 52;
  int max_region_h = 34;
  Scalar token_block_weight = 0.3;  // P(token drawn from the type's vocab block)
  Scalar noise_amp = 0.15;          // per-pixel noise amplitude, fraction of full scale

  void validate() const;  // throws on unsatisfiable settings
};

struct ModelConfig {
  int dim = 64;           // d, transformer hidden size
  int heads = 4;          // h
  int layers = 2;         // L
  int sentence_dim = 64;  // d_s
  int roi_pool = 3;       // P, RoI-Align output grid
  bool attn_scale_per_head = false;  // false: divide scores by sqrt(d)
  std::uint64_t text_seed = 7771;    // sentence-encoder code-table seed

  // Backbone is fixed: conv(1->8, 3x3, s2, p1)-ReLU-conv(8->16, 3x3, s2, p1)-ReLU.
  static constexpr int conv_ch1 = 8;
  static constexpr int conv_ch2 = 16;
  static constexpr int conv_stride = 4;
  int roi_feature_dim() const { return conv_ch2 * roi_pool * roi_pool; }  // d_v
};

struct QuantConfig {
  int codebooks = 2;   // C
  int entries = 8;     // E
  int entry_dim = 32;  // d_e
  Scalar tau0 = 2.0;
  Scalar tau_min = 0.5;
  Scalar tau_decay = 0.999995;
};

struct LossConfig {
  Scalar kappa = 0.1;   // VCL softmax temperature
  Scalar lambda = 0.1;  // diversity weight
  bool msm = true;
  bool vcl = true;
  bool vla = true;
  bool mvm = false;

  bool any() const { return msm || vcl || vla || mvm; }
  bool freeze_backbone() const { return mvm && !vcl; }
  std::string tasks_string() const;
  void set_tasks(const std::string& csv);  // "msm,vcl,vla[,mvm]"
};

struct TrainConfig {
  long steps = 2000;
  int batch_size = 8;
  std::uint64_t seed = 1;
  Scalar lr = 1e-5;
  Scalar weight_decay = 1e-4;
  Scalar warmup_frac = 0.2;
  Scalar mask_prob_sentence = 0.15;
  Scalar mask_prob_visual = 0.075;
  long checkpoint_every = 200;
  Scalar clip_norm = 5.0;
};

struct FinetuneConfig {
  long steps = 500;
  int batch_size = 4;
  Scalar lr = 1e-4;
  Scalar weight_decay = 1e-4;
  Scalar warmup_frac = 0.1;
  Scalar train_frac = 0.4;  // leading fraction of the corpus used for training
};

struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  QuantConfig quant;
  LossConfig loss;
  TrainConfig train;
  FinetuneConfig finetune;

  // Applies overrides from a KvConfig; throws on unknown keys or bad values.
  static RunConfig from_kv(const KvConfig& kv);
  // Full resolved key set, suitable for the run-directory config echo.
  KvConfig to_kv() const;

  static RunConfig desk() { return RunConfig{}; }
  static RunConfig tiny();   // gradcheck-scale preset
  static RunConfig paper();  // paper-scale preset (not meant to run at desk)
};

int env_thread_cap();  // UDOC_THREADS, default 1

}  // namespace udoc
