#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "udoc/checkpoint.hpp"
#include "udoc/corpus.hpp"
#include "udoc/pipeline.hpp"

namespace udoc {

// Linear warmup to lr over the first warmup_frac * total steps, constant
// afterwards.
Scalar lr_at(long step, const TrainConfig& cfg);

// Adam with bias correction and decoupled weight decay (the decay multiplies
// the parameter before the Adam update). Throws on non-finite gradients,
// naming the offending tensor. `frozen` entries are name prefixes whose
// tensors are skipped entirely.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, Scalar lr,
               Scalar weight_decay, const std::vector<std::string>& frozen = {});

struct PretrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  Scalar best_loss = 0.0;
  long best_step = -1;
  std::vector<Scalar> total_per_step;
};

// Runs the pretraining loop, writing metrics.tsv, config.txt and
// checkpoints/{best,last} under out_dir. Resumes from `resume_from` when
// given (bit-exact with an uninterrupted run). stop_after (when >= 0) halts
// the loop early without altering the schedules, modelling an interruption.
PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg,
                        const std::filesystem::path& out_dir,
                        const std::filesystem::path* resume_from = nullptr,
                        long stop_after = -1);

struct GradcheckEntry {
  std::string name;
  Scalar max_rel = 0.0;
  Index count = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass = false;
  Scalar tolerance = 1e-4;
  std::string summary() const;
};

// Central finite differences (h = 1e-5) of the full pretraining loss against
// the analytic gradient, per tensor, with Gumbel draws, selections, and
// straight-through residuals frozen across evaluations. `corrupt_tensor`
// perturbs the analytic gradient of one tensor to verify the harness flags it.
GradcheckReport gradcheck(const RunConfig& cfg, std::uint64_t seed,
                          const std::string& corrupt_tensor = "");

}  // namespace udoc
