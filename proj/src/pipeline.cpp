#include "udoc/pipeline.hpp"

#include <functional>
#include <stdexcept>
#include <thread>

namespace udoc {

namespace {

// Stable salts for substream derivation.
constexpr std::uint64_t kSaltBatch = 11;
constexpr std::uint64_t kSaltMask = 12;
constexpr std::uint64_t kSaltGumbel = 13;
constexpr std::uint64_t kSaltReplace = 14;

Mat encode_all_sentences(const DocumentRecord& doc, const TextEncoder& text) {
  const int n = static_cast<int>(doc.regions.size());
  Mat S(n, text.dim());
  for (int i = 0; i < n; ++i)
    S.row(i) = text.encode_sentence(doc.regions[static_cast<std::size_t>(i)].tokens).transpose();
  return S;
}

void run_over_docs(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const int threads = std::min<int>(env_thread_cap(), static_cast<int>(count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&fn, t, threads, count] {
      for (std::size_t i = static_cast<std::size_t>(t); i < count;
           i += static_cast<std::size_t>(threads))
        fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

StepPlan make_step_plan(const Corpus& corpus, const RunConfig& cfg, const TextEncoder& text,
                        std::uint64_t seed, long step) {
  if (corpus.docs.empty()) throw std::runtime_error("make_step_plan: empty corpus");
  Rng step_rng = Rng(seed).child(static_cast<std::uint64_t>(step));
  Rng batch_rng = step_rng.child(kSaltBatch);

  StepPlan plan;
  const int B = cfg.train.batch_size;
  plan.docs.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b)
    plan.docs[static_cast<std::size_t>(b)].doc_index =
        batch_rng.uniform_int(static_cast<int>(corpus.docs.size()));

  for (int b = 0; b < B; ++b) {
    auto& dp = plan.docs[static_cast<std::size_t>(b)];
    const auto& doc = corpus.docs[static_cast<std::size_t>(dp.doc_index)];
    const int n = static_cast<int>(doc.regions.size());
    Rng slot_rng = step_rng.child(100 + static_cast<std::uint64_t>(b));

    Rng mask_rng = slot_rng.child(kSaltMask);
    dp.plan = sample_mask_plan(n, cfg.train.mask_prob_sentence, cfg.train.mask_prob_visual,
                               mask_rng);

    Rng gumbel_rng = slot_rng.child(kSaltGumbel);
    dp.gumbel.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng region_rng = gumbel_rng.child(static_cast<std::uint64_t>(i));
      Mat g(cfg.quant.codebooks, cfg.quant.entries);
      for (int c = 0; c < cfg.quant.codebooks; ++c)
        for (int e = 0; e < cfg.quant.entries; ++e) g(c, e) = region_rng.gumbel();
      dp.gumbel[static_cast<std::size_t>(i)] = std::move(g);
    }

    Rng replace_rng = slot_rng.child(kSaltReplace);
    for (auto& m : dp.plan.sentence_masks) {
      if (m.category != MaskCategory::Random10) continue;
      const DocumentRecord* src_doc = nullptr;
      int src_region = -1;
      if (B > 1) {
        int other = replace_rng.uniform_int(B - 1);
        if (other >= b) ++other;
        src_doc = &corpus.docs[static_cast<std::size_t>(
            plan.docs[static_cast<std::size_t>(other)].doc_index)];
        src_region = replace_rng.uniform_int(static_cast<int>(src_doc->regions.size()));
      } else if (n > 1) {
        int other = replace_rng.uniform_int(n - 1);
        if (other >= m.slot - 1) ++other;
        src_doc = &doc;
        src_region = other;
      } else {
        // Single doc with a single region: nothing to swap in, keep the original.
        src_doc = &doc;
        src_region = m.slot - 1;
      }
      m.replacement =
          text.encode_sentence(src_doc->regions[static_cast<std::size_t>(src_region)].tokens);
    }
  }
  return plan;
}

DocForward doc_forward(const DocumentRecord& doc, const MaskPlan& plan, const ModelParams& params,
                       const RunConfig& cfg, const TextEncoder& text, bool with_quant, Scalar tau,
                       const std::vector<Mat>* gumbel, const std::vector<Mat>* residuals,
                       bool with_mvm, bool need_caches) {
  DocForward fwd;
  fwd.feats = extract_region_features(doc, params.conv, cfg.model.roi_pool);
  fwd.sentences = encode_all_sentences(doc, text);

  const int n = static_cast<int>(doc.regions.size());
  if (with_quant) {
    if (gumbel == nullptr || static_cast<int>(gumbel->size()) != n)
      throw std::runtime_error("doc_forward: gumbel draws missing");
    fwd.quantized.resize(static_cast<std::size_t>(n));
    if (need_caches) fwd.quant_caches.resize(static_cast<std::size_t>(n));
    fwd.vq_all.resize(n, cfg.model.dim);
    for (int i = 0; i < n; ++i) {
      const Mat* res = nullptr;
      if (residuals != nullptr) {
        if (static_cast<int>(residuals->size()) != n)
          throw std::runtime_error("doc_forward: residuals missing");
        res = &(*residuals)[static_cast<std::size_t>(i)];
      }
      fwd.quantized[static_cast<std::size_t>(i)] = quantize(
          fwd.feats.region[static_cast<std::size_t>(i)], params.quant, tau,
          (*gumbel)[static_cast<std::size_t>(i)],
          need_caches ? &fwd.quant_caches[static_cast<std::size_t>(i)] : nullptr, res);
      fwd.vq_all.row(i) = fwd.quantized[static_cast<std::size_t>(i)].v_q.transpose();
    }
  }

  fwd.seq = build_sequence(doc, fwd.feats.region, fwd.feats.page, fwd.sentences, plan,
                           params.embed, text.special_embedding(SpecialSentence::Cls),
                           text.special_embedding(SpecialSentence::Sep),
                           text.special_embedding(SpecialSentence::Mask));
  fwd.enc = encode(fwd.seq, params.encoder, params.heads, with_mvm,
                   need_caches ? &fwd.enc_cache : nullptr);
  return fwd;
}

void doc_backward(const DocForward& fwd, const DocumentRecord& doc, const ModelParams& params,
                  const RunConfig& cfg, const Mat& dShat, const Mat& dVhat, const Mat& dZvla,
                  const Mat& dMhat, const Mat& dHvExtra, const Mat& dHsExtra,
                  const Mat& extra_droi, ModelParams& grads) {
  ModelParams& g = grads;
  const auto enc_grads = encode_backward(fwd.seq, params.encoder, params.heads, fwd.enc_cache,
                                         dShat, dVhat, dZvla, dMhat, dHvExtra, dHsExtra,
                                         g.encoder, g.heads);
  SequenceGrads seq_grads = sequence_backward(fwd.seq, enc_grads.dVisualIn, enc_grads.dTextualIn,
                                              params.embed, g.embed);
  if (extra_droi.size() > 0) seq_grads.d_roi += extra_droi;

  Mat dFmap = Mat::Zero(fwd.feats.fmap.values.rows(), fwd.feats.fmap.values.cols());
  const int n = static_cast<int>(doc.regions.size());
  for (int i = 0; i < n; ++i) {
    if (seq_grads.d_roi.row(i).isZero(0.0)) continue;
    roi_align_backward(fwd.feats.fmap, doc.regions[static_cast<std::size_t>(i)].box,
                       cfg.model.roi_pool, seq_grads.d_roi.row(i).transpose(), dFmap);
  }
  roi_align_backward(fwd.feats.fmap, BoundingBox{0, 0, doc.width, doc.height}, cfg.model.roi_pool,
                     seq_grads.d_page, dFmap);
  conv_backward(params.conv, fwd.feats.conv_cache, dFmap, g.conv);
}

LossReport pretrain_batch(const Corpus& corpus, StepPlan& plan, const ModelParams& params,
                          const RunConfig& cfg, Scalar tau, const TextEncoder& text,
                          ModelParams* grads, std::vector<ModelParams>* scratch,
                          bool use_residuals, bool capture_residuals) {
  const auto B = plan.docs.size();
  if (B == 0) throw std::runtime_error("pretrain_batch: empty plan");
  if (grads != nullptr && (scratch == nullptr || scratch->size() < B))
    throw std::runtime_error("pretrain_batch: scratch buffers missing");
  const bool need_backward = grads != nullptr;
  const LossConfig& tasks = cfg.loss;

  struct DocEval {
    DocForward fwd;
    Scalar msm = 0, vcl = 0, vla = 0, mvm = 0;
    std::vector<int> visual_idx;      // 0-based masked region indices
    std::vector<int> sentence_idx;    // 0-based masked sentence indices
    Mat dShat, dVhat, dZvla, dMhat;   // head-output grads (pre 1/B scaling)
    Mat dVqAll;                       // gradient on quantized candidates
    Mat mvm_dtarget;                  // target-side gradient for MVM
  };
  std::vector<DocEval> evals(B);

  // Phase 1: forward (and per-document loss gradients, which are independent
  // of the batch-level diversity term).
  run_over_docs(B, [&](std::size_t b) {
    auto& ev = evals[b];
    auto& dp = plan.docs[b];
    const auto& doc = corpus.docs[static_cast<std::size_t>(dp.doc_index)];
    const int n = static_cast<int>(doc.regions.size());

    const std::vector<Mat>* residuals = use_residuals ? &dp.residual : nullptr;
    ev.fwd = doc_forward(doc, dp.plan, params, cfg, text, tasks.vcl || capture_residuals,
                         tau, &dp.gumbel, residuals, tasks.mvm, need_backward);

    if (capture_residuals) {
      dp.residual.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const auto& qf = ev.fwd.quantized[static_cast<std::size_t>(i)];
        Mat res = -qf.probs;
        for (int c = 0; c < cfg.quant.codebooks; ++c)
          res(c, qf.selections[static_cast<std::size_t>(c)]) += 1.0;
        dp.residual[static_cast<std::size_t>(i)] = std::move(res);
      }
    }

    for (const auto& m : dp.plan.sentence_masks) ev.sentence_idx.push_back(m.slot - 1);
    for (int slot : dp.plan.visual_masks) ev.visual_idx.push_back(slot - 1);

    if (tasks.msm) {
      const auto k = static_cast<Index>(ev.sentence_idx.size());
      Mat pred(k, cfg.model.sentence_dim), target(k, cfg.model.sentence_dim);
      for (Index j = 0; j < k; ++j) {
        pred.row(j) = ev.fwd.enc.s_hat.row(ev.sentence_idx[static_cast<std::size_t>(j)]);
        target.row(j) = ev.fwd.seq.sentence_targets.row(ev.sentence_idx[static_cast<std::size_t>(j)]);
      }
      Mat dPred;
      ev.msm = msm_loss(pred, target, need_backward ? &dPred : nullptr);
      if (need_backward) {
        ev.dShat = Mat::Zero(n, cfg.model.sentence_dim);
        for (Index j = 0; j < k; ++j)
          ev.dShat.row(ev.sentence_idx[static_cast<std::size_t>(j)]) += dPred.row(j);
      }
    }

    if (tasks.vcl) {
      if (need_backward) {
        ev.dVhat = Mat::Zero(n, cfg.model.dim);
        ev.dVqAll = Mat::Zero(n, cfg.model.dim);
        ev.vcl = vcl_first_term(ev.fwd.enc.v_hat, ev.fwd.vq_all, ev.visual_idx, tasks.kappa,
                                &ev.dVhat, &ev.dVqAll);
      } else {
        ev.vcl = vcl_first_term(ev.fwd.enc.v_hat, ev.fwd.vq_all, ev.visual_idx, tasks.kappa,
                                nullptr, nullptr);
      }
    }

    if (tasks.vla) {
      if (need_backward) {
        ev.dZvla = Mat::Zero(n, cfg.model.sentence_dim);
        ev.vla = vla_loss(ev.fwd.seq.sentence_targets, ev.fwd.enc.z_vla, &ev.dZvla);
      } else {
        ev.vla = vla_loss(ev.fwd.seq.sentence_targets, ev.fwd.enc.z_vla, nullptr);
      }
    }

    if (tasks.mvm) {
      const auto k = static_cast<Index>(ev.visual_idx.size());
      Mat pred(k, cfg.model.roi_feature_dim());
      Mat target(k, cfg.model.roi_feature_dim());
      for (Index j = 0; j < k; ++j) {
        pred.row(j) = ev.fwd.enc.m_hat.row(ev.visual_idx[static_cast<std::size_t>(j)]);
        target.row(j) = ev.fwd.seq.roi_targets.row(ev.visual_idx[static_cast<std::size_t>(j)]);
      }
      Mat dPred, dTarget;
      ev.mvm = mvm_loss(pred, target, need_backward ? &dPred : nullptr,
                        need_backward ? &dTarget : nullptr);
      if (need_backward) {
        ev.dMhat = Mat::Zero(n, cfg.model.roi_feature_dim());
        ev.mvm_dtarget = Mat::Zero(n, cfg.model.roi_feature_dim());
        for (Index j = 0; j < k; ++j) {
          ev.dMhat.row(ev.visual_idx[static_cast<std::size_t>(j)]) += dPred.row(j);
          if (!tasks.freeze_backbone())
            ev.mvm_dtarget.row(ev.visual_idx[static_cast<std::size_t>(j)]) += dTarget.row(j);
        }
      }
    }
  });

  // Phase 2: batch-level diversity over the noise-free probabilities of
  // every quantized region in the batch.
  std::vector<Mat> probs_batch;
  DiversityStats diversity;
  const bool quantized_any = tasks.vcl || capture_residuals;
  if (quantized_any) {
    for (const auto& ev : evals)
      for (const auto& qf : ev.fwd.quantized) probs_batch.push_back(qf.probs_nf);
  }
  if (tasks.vcl) {
    diversity = diversity_stats(probs_batch);
  } else {
    diversity.perplexity = Vec::Zero(cfg.quant.codebooks);
  }

  const Scalar inv_b = 1.0 / static_cast<Scalar>(B);

  // Phase 3: backward per document into its own buffer; fixed-order reduce.
  if (need_backward) {
    Mat dProbsNf;
    if (tasks.vcl)
      dProbsNf = (tasks.lambda * diversity_penalty_backward(probs_batch)).eval();

    run_over_docs(B, [&](std::size_t b) {
      auto& ev = evals[b];
      const auto& dp = plan.docs[b];
      const auto& doc = corpus.docs[static_cast<std::size_t>(dp.doc_index)];
      const int n = static_cast<int>(doc.regions.size());
      ModelParams& gbuf = (*scratch)[b];
      set_zero(gbuf);

      // Scale per-document head gradients by 1/B (batch mean of per-doc losses).
      auto scaled = [inv_b](Mat& m) {
        if (m.size() > 0) m *= inv_b;
      };
      scaled(ev.dShat);
      scaled(ev.dVhat);
      scaled(ev.dZvla);
      scaled(ev.dMhat);
      scaled(ev.dVqAll);
      scaled(ev.mvm_dtarget);

      // Quantizer backward: dVq from VCL candidates, dProbsNf from diversity.
      Mat extra_droi = Mat::Zero(n, cfg.model.roi_feature_dim());
      if (ev.fwd.quant_caches.size() == static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) {
          Vec dVq = Vec::Zero(cfg.model.dim);
          if (tasks.vcl && ev.dVqAll.size() > 0) dVq = ev.dVqAll.row(i).transpose();
          const bool any_vq = dVq.size() > 0 && !dVq.isZero(0.0);
          const bool any_nf = tasks.vcl && dProbsNf.size() > 0;
          if (!any_vq && !any_nf) continue;
          extra_droi.row(i) += quantize_backward(ev.fwd.quant_caches[static_cast<std::size_t>(i)],
                                                 params.quant, any_vq ? dVq : Vec(),
                                                 any_nf ? dProbsNf : Mat(), gbuf.quant)
                                   .transpose();
        }
      }
      if (ev.mvm_dtarget.size() > 0) extra_droi += ev.mvm_dtarget;

      doc_backward(ev.fwd, doc, params, cfg, ev.dShat, ev.dVhat, ev.dZvla, ev.dMhat, Mat(), Mat(),
                   extra_droi, gbuf);
    });

    set_zero(*grads);
    for (std::size_t b = 0; b < B; ++b) accumulate(*grads, (*scratch)[b]);
  }

  Scalar msm = 0, vcl = 0, vla = 0, mvm = 0;
  for (const auto& ev : evals) {
    msm += ev.msm;
    vcl += ev.vcl;
    vla += ev.vla;
    mvm += ev.mvm;
  }
  msm *= inv_b;
  vcl *= inv_b;
  vla *= inv_b;
  mvm *= inv_b;
  if (tasks.vcl) vcl += tasks.lambda * diversity.penalty;

  LossReport report = total_loss(msm, vcl, vla, mvm, tasks);
  report.perplexity = diversity.perplexity;
  return report;
}

}  // namespace udoc
