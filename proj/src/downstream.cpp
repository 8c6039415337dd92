#include "udoc/downstream.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "udoc/text_encoder.hpp"
#include "udoc/trainer.hpp"

namespace udoc {

namespace {

constexpr Scalar kBeta1 = 0.9;
constexpr Scalar kBeta2 = 0.999;
constexpr Scalar kAdamEps = 1e-8;

std::string fmt(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Minimal Adam for the task head, matching adam_step's update rule.
struct HeadAdam {
  Mat mW, vW;
  Vec mb, vb;
  long step = 0;

  explicit HeadAdam(const Linear& head)
      : mW(Mat::Zero(head.W.rows(), head.W.cols())),
        vW(Mat::Zero(head.W.rows(), head.W.cols())),
        mb(Vec::Zero(head.b.size())),
        vb(Vec::Zero(head.b.size())) {}

  void update(Linear& head, const Linear& g, Scalar lr, Scalar wd) {
    ++step;
    const Scalar bc1 = 1.0 - std::pow(kBeta1, static_cast<Scalar>(step));
    const Scalar bc2 = 1.0 - std::pow(kBeta2, static_cast<Scalar>(step));
    head.W *= (1.0 - lr * wd);
    head.b *= (1.0 - lr * wd);
    mW = kBeta1 * mW + (1.0 - kBeta1) * g.W;
    vW = (kBeta2 * vW).array() + (1.0 - kBeta2) * g.W.array().square();
    head.W.array() -= lr * (mW.array() / bc1) / ((vW.array() / bc2).sqrt() + kAdamEps);
    mb = kBeta1 * mb + (1.0 - kBeta1) * g.b;
    vb = (kBeta2 * vb).array() + (1.0 - kBeta2) * g.b.array().square();
    head.b.array() -= lr * (mb.array() / bc1) / ((vb.array() / bc2).sqrt() + kAdamEps);
  }
};

// Cross entropy over logit rows; returns mean loss, writes dLogits.
Scalar cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dLogits) {
  const Index n = logits.rows();
  if (n == 0) throw std::runtime_error("cross_entropy: empty input");
  const Mat probs = softmax_rows(logits);
  Scalar loss = 0.0;
  if (dLogits != nullptr) *dLogits = probs / static_cast<Scalar>(n);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss += -std::log(std::max(probs(i, y), 1e-300));
    if (dLogits != nullptr) (*dLogits)(i, y) -= 1.0 / static_cast<Scalar>(n);
  }
  return loss / static_cast<Scalar>(n);
}

std::vector<int> entity_labels(const DocumentRecord& doc) {
  std::vector<int> labels;
  labels.reserve(doc.regions.size());
  for (const auto& r : doc.regions) labels.push_back(static_cast<int>(r.type_label));
  return labels;
}

}  // namespace

const char* finetune_task_name(FinetuneTask task) {
  return task == FinetuneTask::Entity ? "entity" : "doc";
}

FinetuneTask finetune_task_from_name(const std::string& name) {
  if (name == "entity") return FinetuneTask::Entity;
  if (name == "doc") return FinetuneTask::Doc;
  throw std::runtime_error("unknown finetune task '" + name + "'");
}

Scalar f1_micro(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw std::runtime_error("f1_micro: length mismatch");
  if (preds.empty()) throw std::runtime_error("f1_micro: empty input");
  int num_classes = 0;
  for (int v : preds) num_classes = std::max(num_classes, v + 1);
  for (int v : labels) num_classes = std::max(num_classes, v + 1);
  long tp = 0, fp = 0, fn = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c;
      const bool l = labels[i] == c;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
  }
  const Scalar denom = 2.0 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

EvalReport classification_report(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int num_classes) {
  if (preds.size() != labels.size() || preds.empty())
    throw std::runtime_error("classification_report: bad input");
  EvalReport r;
  r.num_classes = num_classes;
  r.support.assign(static_cast<std::size_t>(num_classes), 0);
  r.precision.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.recall.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.f1.assign(static_cast<std::size_t>(num_classes), 0.0);

  long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  r.accuracy = static_cast<Scalar>(correct) / static_cast<Scalar>(preds.size());

  for (int c = 0; c < num_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c;
      const bool l = labels[i] == c;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
    r.support[static_cast<std::size_t>(c)] = tp + fn;
    const Scalar prec = tp + fp > 0 ? static_cast<Scalar>(tp) / (tp + fp) : 0.0;
    const Scalar rec = tp + fn > 0 ? static_cast<Scalar>(tp) / (tp + fn) : 0.0;
    r.precision[static_cast<std::size_t>(c)] = prec;
    r.recall[static_cast<std::size_t>(c)] = rec;
    r.f1[static_cast<std::size_t>(c)] = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  r.micro_f1 = f1_micro(preds, labels);
  return r;
}

std::string EvalReport::serialize(const std::vector<std::string>& class_names) const {
  std::ostringstream out;
  for (int c = 0; c < num_classes; ++c) {
    const std::string& name = class_names[static_cast<std::size_t>(c)];
    out << "class." << name << ".support = " << support[static_cast<std::size_t>(c)] << "\n";
    out << "class." << name << ".precision = " << fmt(precision[static_cast<std::size_t>(c)])
        << "\n";
    out << "class." << name << ".recall = " << fmt(recall[static_cast<std::size_t>(c)]) << "\n";
    out << "class." << name << ".f1 = " << fmt(f1[static_cast<std::size_t>(c)]) << "\n";
  }
  out << "micro_f1 = " << fmt(micro_f1) << "\n";
  out << "accuracy = " << fmt(accuracy) << "\n";
  return out.str();
}

Vec pool_regions(const Mat& H, int n) {
  if (H.rows() != n + 2) throw std::runtime_error("pool_regions: expected N+2 rows");
  return H.middleRows(1, n).colwise().mean().transpose();
}

Mat entity_logits(const Mat& Hv, const Mat& Hs, int n, const Linear& head) {
  if (head.W.cols() != Hv.cols() + Hs.cols())
    throw std::runtime_error("entity head must consume the 2d concatenation");
  Mat features(n, Hv.cols() + Hs.cols());
  features << Hv.middleRows(1, n), Hs.middleRows(1, n);
  return linear_forward(features, head);
}

Vec doc_logits(const Mat& Hv, const Mat& Hs, int n, const Linear& head) {
  if (head.W.cols() != Hv.cols())
    throw std::runtime_error("doc head must consume the d-dim pooled product");
  const Vec pv = pool_regions(Hv, n);
  const Vec ps = pool_regions(Hs, n);
  const Vec prod = pv.cwiseProduct(ps);
  return head.W * prod + head.b;
}

Linear fit_linear_head(const Mat& features, const std::vector<int>& labels, int num_classes,
                       long steps, Scalar lr, std::uint64_t seed) {
  Rng rng(seed);
  Linear head = init_linear(rng, num_classes, features.cols());
  HeadAdam adam(head);
  for (long s = 0; s < steps; ++s) {
    Mat dLogits;
    cross_entropy(linear_forward(features, head), labels, &dLogits);
    Linear g = Linear::zeros(num_classes, features.cols());
    linear_backward(features, dLogits, head, g);
    adam.update(head, g, lr, 0.0);
  }
  return head;
}

FinetuneResult finetune(const Corpus& corpus, FinetuneTask task, const ModelParams* init,
                        const RunConfig& cfg, std::uint64_t seed) {
  if (corpus.docs.empty()) throw std::runtime_error("finetune: empty corpus");
  const auto train_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.finetune.train_frac *
                                               static_cast<Scalar>(corpus.docs.size()))));
  if (train_count >= corpus.docs.size())
    throw std::runtime_error("finetune: train_frac leaves no held-out split");

  const TextEncoder text(cfg.model.text_seed, cfg.corpus.vocab_size, cfg.model.sentence_dim);
  const std::uint64_t text_checksum = text.checksum();

  FinetuneResult result;
  result.model.task = task;
  result.model.params = init != nullptr ? *init : init_model(cfg, seed);

  Rng head_rng = Rng(seed).child(21);
  const int d = cfg.model.dim;
  const int classes = kNumRegionTypes;
  result.model.head =
      init_linear(head_rng, classes, task == FinetuneTask::Entity ? 2 * d : d);

  ModelParams& params = result.model.params;
  Linear& head = result.model.head;
  AdamState adam;
  adam.m = zero_like(params);
  adam.v = zero_like(params);
  HeadAdam head_adam(head);

  ModelParams grads = zero_like(params);
  const int B = cfg.finetune.batch_size;
  std::vector<ModelParams> scratch(static_cast<std::size_t>(B), zero_like(params));
  std::vector<Linear> head_scratch(static_cast<std::size_t>(B));

  TrainConfig lr_cfg;  // reuse the warmup ramp for the fine-tune schedule
  lr_cfg.steps = cfg.finetune.steps;
  lr_cfg.lr = cfg.finetune.lr;
  lr_cfg.warmup_frac = cfg.finetune.warmup_frac;

  const MaskPlan no_mask;  // masking disabled during fine-tuning

  for (long step = 0; step < cfg.finetune.steps; ++step) {
    Rng step_rng = Rng(seed).child(31).child(static_cast<std::uint64_t>(step));
    std::vector<int> doc_idx(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
      doc_idx[static_cast<std::size_t>(b)] = step_rng.uniform_int(static_cast<int>(train_count));

    Scalar batch_loss = 0.0;
    for (int b = 0; b < B; ++b) {
      const auto& doc = corpus.docs[static_cast<std::size_t>(doc_idx[static_cast<std::size_t>(b)])];
      const int n = static_cast<int>(doc.regions.size());
      ModelParams& gbuf = scratch[static_cast<std::size_t>(b)];
      set_zero(gbuf);
      Linear& hbuf = head_scratch[static_cast<std::size_t>(b)];
      hbuf = Linear::zeros(head.W.rows(), head.W.cols());

      DocForward fwd = doc_forward(doc, no_mask, params, cfg, text, false, 1.0, nullptr, nullptr,
                                   false, true);

      Mat dHv = Mat::Zero(n + 2, d);
      Mat dHs = Mat::Zero(n + 2, d);
      if (task == FinetuneTask::Entity) {
        const std::vector<int> labels = entity_labels(doc);
        Mat features(n, 2 * d);
        features << fwd.enc.Hv.middleRows(1, n), fwd.enc.Hs.middleRows(1, n);
        Mat dLogits;
        batch_loss += cross_entropy(linear_forward(features, head), labels, &dLogits);
        Mat dFeatures = linear_backward(features, dLogits, head, hbuf);
        dHv.middleRows(1, n) = dFeatures.leftCols(d);
        dHs.middleRows(1, n) = dFeatures.rightCols(d);
      } else {
        const int label = static_cast<int>(document_class(doc));
        const Vec pv = pool_regions(fwd.enc.Hv, n);
        const Vec ps = pool_regions(fwd.enc.Hs, n);
        const Vec prod = pv.cwiseProduct(ps);
        Mat dLogits;
        batch_loss += cross_entropy((head.W * prod + head.b).transpose(), {label}, &dLogits);
        const Vec dl = dLogits.row(0).transpose();
        hbuf.W.noalias() += dl * prod.transpose();
        hbuf.b.noalias() += dl;
        const Vec dProd = head.W.transpose() * dl;
        const Vec dPv = dProd.cwiseProduct(ps);
        const Vec dPs = dProd.cwiseProduct(pv);
        // Mean pooling spreads the gradient uniformly over region rows.
        dHv.middleRows(1, n).rowwise() += (dPv / static_cast<Scalar>(n)).transpose();
        dHs.middleRows(1, n).rowwise() += (dPs / static_cast<Scalar>(n)).transpose();
      }
      doc_backward(fwd, doc, params, cfg, Mat(), Mat(), Mat(), Mat(), dHv, dHs, Mat(), gbuf);
    }

    set_zero(grads);
    Linear head_grad = Linear::zeros(head.W.rows(), head.W.cols());
    for (int b = 0; b < B; ++b) {
      accumulate(grads, scratch[static_cast<std::size_t>(b)]);
      head_grad.W += head_scratch[static_cast<std::size_t>(b)].W;
      head_grad.b += head_scratch[static_cast<std::size_t>(b)].b;
    }
    const Scalar inv_b = 1.0 / static_cast<Scalar>(B);
    scale_grads(grads, inv_b);
    head_grad.W *= inv_b;
    head_grad.b *= inv_b;

    if (cfg.train.clip_norm > 0) {
      const Scalar gn = std::sqrt(grad_global_norm(grads) * grad_global_norm(grads) +
                                  head_grad.W.squaredNorm() + head_grad.b.squaredNorm());
      if (gn > cfg.train.clip_norm) {
        const Scalar scale = cfg.train.clip_norm / gn;
        scale_grads(grads, scale);
        head_grad.W *= scale;
        head_grad.b *= scale;
      }
    }

    const Scalar lr = lr_at(step, lr_cfg);
    adam_step(params, grads, adam, lr, cfg.finetune.weight_decay);
    head_adam.update(head, head_grad, lr, cfg.finetune.weight_decay);
    result.loss_per_step.push_back(batch_loss * inv_b);
  }

  if (text.checksum() != text_checksum)
    throw std::runtime_error("finetune: frozen text encoder changed");

  result.train_report = evaluate_model(result.model, corpus, cfg, 0, train_count);
  result.eval_report = evaluate_model(result.model, corpus, cfg, train_count, corpus.docs.size());
  return result;
}

EvalReport evaluate_model(const FinetunedModel& model, const Corpus& corpus, const RunConfig& cfg,
                          std::size_t begin_doc, std::size_t end_doc) {
  const TextEncoder text(cfg.model.text_seed, cfg.corpus.vocab_size, cfg.model.sentence_dim);
  const MaskPlan no_mask;
  std::vector<int> preds, labels;
  for (std::size_t k = begin_doc; k < end_doc; ++k) {
    const auto& doc = corpus.docs[k];
    const int n = static_cast<int>(doc.regions.size());
    DocForward fwd = doc_forward(doc, no_mask, model.params, cfg, text, false, 1.0, nullptr,
                                 nullptr, false, false);
    if (model.task == FinetuneTask::Entity) {
      const Mat logits = entity_logits(fwd.enc.Hv, fwd.enc.Hs, n, model.head);
      for (int i = 0; i < n; ++i) {
        Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        preds.push_back(static_cast<int>(arg));
        labels.push_back(static_cast<int>(doc.regions[static_cast<std::size_t>(i)].type_label));
      }
    } else {
      const Vec logits = doc_logits(fwd.enc.Hv, fwd.enc.Hs, n, model.head);
      Index arg = 0;
      logits.maxCoeff(&arg);
      preds.push_back(static_cast<int>(arg));
      labels.push_back(static_cast<int>(document_class(doc)));
    }
  }
  return classification_report(preds, labels, kNumRegionTypes);
}

void save_finetuned(const std::filesystem::path& dir, const FinetunedModel& model,
                    const RunConfig& cfg) {
  CheckpointMeta meta;
  meta.task = finetune_task_name(model.task);
  std::vector<NamedTensor> extra;
  extra.push_back(NamedTensor{"task_head.weight", model.head.W});
  extra.push_back(NamedTensor{"task_head.bias", Mat(model.head.b)});
  save_checkpoint(dir, model.params, nullptr, meta, cfg.to_kv(), extra);
}

FinetunedModel load_finetuned(const std::filesystem::path& dir, RunConfig* cfg_out) {
  Checkpoint ckpt = load_checkpoint(dir);
  FinetunedModel model;
  model.params = std::move(ckpt.params);
  model.task = finetune_task_from_name(ckpt.meta.task);
  bool have_w = false, have_b = false;
  for (const auto& nt : ckpt.extra) {
    if (nt.name == "task_head.weight") {
      model.head.W = nt.value;
      have_w = true;
    } else if (nt.name == "task_head.bias") {
      model.head.b = nt.value.col(0);
      have_b = true;
    }
  }
  if (!have_w || !have_b)
    throw std::runtime_error("load_finetuned: checkpoint lacks task head tensors");
  if (cfg_out != nullptr) *cfg_out = RunConfig::from_kv(ckpt.config);
  return model;
}

}  // namespace udoc
