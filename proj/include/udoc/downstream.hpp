#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "udoc/checkpoint.hpp"
#include "udoc/corpus.hpp"
#include "udoc/pipeline.hpp"

namespace udoc {

enum class FinetuneTask { Entity, Doc };
const char* finetune_task_name(FinetuneTask task);
FinetuneTask finetune_task_from_name(const std::string& name);

Scalar f1_micro(const std::vector<int>& preds, const std::vector<int>& labels);

struct EvalReport {
  int num_classes = 0;
  std::vector<long> support;      // per class
  std::vector<Scalar> precision;  // per class
  std::vector<Scalar> recall;
  std::vector<Scalar> f1;
  Scalar micro_f1 = 0.0;
  Scalar accuracy = 0.0;

  std::string serialize(const std::vector<std::string>& class_names) const;
};

EvalReport classification_report(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int num_classes);

// Mean over the region rows 1..n, excluding the CLS/SEP slots.
Vec pool_regions(const Mat& H, int n);

struct FinetunedModel {
  ModelParams params;
  Linear head;  // entity: #classes <- 2d; doc: #classes <- d
  FinetuneTask task = FinetuneTask::Entity;
};

// Per-region logits from the concatenated [H_V ; H_S] representations, or
// per-document logits from the element-wise product of the pooled streams.
// Both enforce their input width.
Mat entity_logits(const Mat& Hv, const Mat& Hs, int n, const Linear& head);
Vec doc_logits(const Mat& Hv, const Mat& Hs, int n, const Linear& head);

struct FinetuneResult {
  FinetunedModel model;
  EvalReport train_report;
  EvalReport eval_report;
  std::vector<Scalar> loss_per_step;
};

// Fine-tunes on the leading train_frac split and reports on the held-out
// remainder. `init` null means random initialization (seeded). Masking is
// disabled; the text encoder stays frozen.
FinetuneResult finetune(const Corpus& corpus, FinetuneTask task, const ModelParams* init,
                        const RunConfig& cfg, std::uint64_t seed);

EvalReport evaluate_model(const FinetunedModel& model, const Corpus& corpus, const RunConfig& cfg,
                          std::size_t begin_doc, std::size_t end_doc);

// Trains a bare linear softmax head on fixed features; used by tests and as
// the shared head-update rule inside finetune.
Linear fit_linear_head(const Mat& features, const std::vector<int>& labels, int num_classes,
                       long steps, Scalar lr, std::uint64_t seed);

void save_finetuned(const std::filesystem::path& dir, const FinetunedModel& model,
                    const RunConfig& cfg);
FinetunedModel load_finetuned(const std::filesystem::path& dir, RunConfig* cfg_out = nullptr);

}  // namespace udoc
