#include "udoc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>

namespace udoc {

namespace {

constexpr Scalar kBeta1 = 0.9;
constexpr Scalar kBeta2 = 0.999;
constexpr Scalar kAdamEps = 1e-8;

std::string fmt17(Scalar v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool name_frozen(const std::string& name, const std::vector<std::string>& frozen) {
  for (const auto& prefix : frozen)
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

Scalar lr_at(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.steps) throw std::runtime_error("lr_at: step out of range");
  const Scalar warmup = cfg.warmup_frac * static_cast<Scalar>(cfg.steps);
  if (warmup <= 0.0 || static_cast<Scalar>(step) >= warmup) return cfg.lr;
  return cfg.lr * static_cast<Scalar>(step) / warmup;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, Scalar lr,
               Scalar weight_decay, const std::vector<std::string>& frozen) {
  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(const_cast<ModelParams&>(grads));
  auto m_refs = tensor_refs(state.m);
  auto v_refs = tensor_refs(state.v);
  const long t = state.step + 1;
  const Scalar bc1 = 1.0 - std::pow(kBeta1, static_cast<Scalar>(t));
  const Scalar bc2 = 1.0 - std::pow(kBeta2, static_cast<Scalar>(t));

  for (std::size_t k = 0; k < p_refs.size(); ++k) {
    if (name_frozen(p_refs[k].name, frozen)) continue;
    Eigen::Map<Vec> p(p_refs[k].data, p_refs[k].size());
    Eigen::Map<const Vec> g(g_refs[k].data, g_refs[k].size());
    Eigen::Map<Vec> m(m_refs[k].data, m_refs[k].size());
    Eigen::Map<Vec> v(v_refs[k].data, v_refs[k].size());
    if (!g.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in tensor '" + p_refs[k].name + "'");
    p *= (1.0 - lr * weight_decay);
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = (kBeta2 * v).array() + (1.0 - kBeta2) * g.array().square();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEps);
  }
  state.step = t;
}

PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg,
                        const std::filesystem::path& out_dir,
                        const std::filesystem::path* resume_from, long stop_after) {
  if (corpus.docs.empty()) throw std::runtime_error("pretrain: empty corpus");
  if (!cfg.loss.any()) throw std::runtime_error("pretrain: no tasks enabled");
  std::filesystem::create_directories(out_dir);
  const auto ckpt_root = out_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_root);

  {
    std::ofstream cfg_echo(out_dir / "config.txt");
    cfg_echo << cfg.to_kv().serialize();
  }

  const TextEncoder text(cfg.model.text_seed, cfg.corpus.vocab_size, cfg.model.sentence_dim);
  const std::uint64_t text_checksum_before = text.checksum();

  ModelParams params;
  AdamState adam;
  long start_step = 0;
  CheckpointMeta meta;
  if (resume_from != nullptr) {
    Checkpoint ckpt = load_checkpoint(*resume_from);
    params = std::move(ckpt.params);
    if (!ckpt.adam) throw std::runtime_error("pretrain: resume checkpoint lacks optimizer state");
    adam = std::move(*ckpt.adam);
    meta = ckpt.meta;
    start_step = ckpt.meta.step;
  } else {
    params = init_model(cfg, cfg.train.seed);
    adam.m = zero_like(params);
    adam.v = zero_like(params);
  }

  ModelParams grads = zero_like(params);
  std::vector<ModelParams> scratch(static_cast<std::size_t>(cfg.train.batch_size),
                                   zero_like(params));

  std::vector<std::string> frozen;
  if (cfg.loss.freeze_backbone()) frozen.push_back("conv.");

  std::ofstream metrics(out_dir / "metrics.tsv");
  metrics << "# step\tlr\ttau\tmsm\tvcl\tvla\tmvm\ttotal";
  for (int c = 0; c < cfg.quant.codebooks; ++c) metrics << "\tperplexity" << c;
  metrics << "\n";

  PretrainResult result;
  result.run_dir = out_dir;
  result.best_loss = meta.best_loss;
  result.best_step = meta.best_step;

  std::deque<Scalar> window;  // trailing totals for smoothed loss
  constexpr std::size_t kWindow = 50;

  const KvConfig cfg_echo = cfg.to_kv();
  auto save_to = [&](const std::filesystem::path& dir, long next_step) {
    CheckpointMeta m;
    m.step = next_step;
    m.tau = tau_at(next_step, cfg.quant);
    m.best_loss = result.best_loss;
    m.best_step = result.best_step;
    m.task = "pretrain";
    save_checkpoint(dir, params, &adam, m, cfg_echo);
  };

  const long stop_step =
      stop_after >= 0 ? std::min(stop_after, cfg.train.steps) : cfg.train.steps;
  for (long step = start_step; step < stop_step; ++step) {
    const Scalar tau = tau_at(step, cfg.quant);
    StepPlan plan = make_step_plan(corpus, cfg, text, cfg.train.seed, step);
    LossReport report =
        pretrain_batch(corpus, plan, params, cfg, tau, text, &grads, &scratch, false, false);
    if (!report.finite()) {
      std::ofstream diag(out_dir / "ABORTED.txt");
      diag << "non-finite loss at step " << step << "\n";
      throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step) +
                               "; last checkpoint retained");
    }

    if (cfg.train.clip_norm > 0) {
      const Scalar gn = grad_global_norm(grads);
      if (gn > cfg.train.clip_norm) scale_grads(grads, cfg.train.clip_norm / gn);
    }

    const Scalar lr = lr_at(step, cfg.train);
    adam_step(params, grads, adam, lr, cfg.train.weight_decay, frozen);

    metrics << step << "\t" << fmt17(lr) << "\t" << fmt17(tau) << "\t" << fmt17(report.msm)
            << "\t" << fmt17(report.vcl) << "\t" << fmt17(report.vla) << "\t" << fmt17(report.mvm)
            << "\t" << fmt17(report.total);
    for (int c = 0; c < cfg.quant.codebooks; ++c)
      metrics << "\t" << fmt17(report.perplexity.size() > c ? report.perplexity(c) : 0.0);
    metrics << "\n";

    result.total_per_step.push_back(report.total);
    window.push_back(report.total);
    if (window.size() > kWindow) window.pop_front();

    const long done = step + 1;
    if (done % cfg.train.checkpoint_every == 0 || done == cfg.train.steps) {
      Scalar smoothed = 0.0;
      for (Scalar v : window) smoothed += v;
      smoothed /= static_cast<Scalar>(window.size());
      if (smoothed < result.best_loss) {
        result.best_loss = smoothed;
        result.best_step = done;
      }
      save_to(ckpt_root / "last", done);
      if (result.best_step == done) save_to(ckpt_root / "best", done);
    }
  }

  if (text.checksum() != text_checksum_before)
    throw std::runtime_error("pretrain: frozen text encoder changed");

  result.best_checkpoint = ckpt_root / "best";
  result.last_checkpoint = ckpt_root / "last";
  metrics.flush();
  return result;
}

std::string GradcheckReport::summary() const {
  std::ostringstream out;
  Scalar worst = 0.0;
  std::string worst_name;
  for (const auto& e : entries) {
    if (e.max_rel >= worst) {
      worst = e.max_rel;
      worst_name = e.name;
    }
  }
  out << (pass ? "PASS" : "FAIL") << ": " << entries.size() << " tensors, worst rel err "
      << worst << " (" << worst_name << "), tolerance " << tolerance;
  return out.str();
}

GradcheckReport gradcheck(const RunConfig& cfg, std::uint64_t seed,
                          const std::string& corrupt_tensor) {
  constexpr Scalar kStep = 1e-5;

  const Corpus corpus = generate_corpus(seed, std::max(2, cfg.train.batch_size), cfg.corpus);
  const TextEncoder text(cfg.model.text_seed, cfg.corpus.vocab_size, cfg.model.sentence_dim);
  ModelParams params = init_model(cfg, seed);
  ModelParams grads = zero_like(params);
  std::vector<ModelParams> scratch(static_cast<std::size_t>(cfg.train.batch_size),
                                   zero_like(params));

  const Scalar tau = tau_at(0, cfg.quant);
  StepPlan plan = make_step_plan(corpus, cfg, text, seed, 0);

  // The harness needs every loss term live; the tiny preset's elevated mask
  // rates make this overwhelmingly likely under any seed.
  std::size_t sentence_masks = 0, visual_masks = 0;
  for (const auto& dp : plan.docs) {
    sentence_masks += dp.plan.sentence_masks.size();
    visual_masks += dp.plan.visual_masks.size();
  }
  if (sentence_masks == 0 || visual_masks == 0)
    throw std::runtime_error("gradcheck: seed produced an empty mask plan; pick another seed");

  // Analytic gradients; capture straight-through residuals for the replays.
  pretrain_batch(corpus, plan, params, cfg, tau, text, &grads, &scratch, false, true);

  if (!corrupt_tensor.empty()) {
    bool found = false;
    grads.visit([&](const std::string& name, auto& t) {
      if (name == corrupt_tensor && t.size() > 0) {
        t.data()[0] += 1e-2;
        found = true;
      }
    });
    if (!found) throw std::runtime_error("gradcheck: unknown tensor '" + corrupt_tensor + "'");
  }

  auto eval_loss = [&]() {
    return pretrain_batch(corpus, plan, params, cfg, tau, text, nullptr, nullptr, true, false)
        .total;
  };

  GradcheckReport report;
  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(grads);
  for (std::size_t k = 0; k < p_refs.size(); ++k) {
    GradcheckEntry entry;
    entry.name = p_refs[k].name;
    entry.count = p_refs[k].size();
    for (Index j = 0; j < p_refs[k].size(); ++j) {
      Scalar& x = p_refs[k].data[j];
      const Scalar saved = x;
      x = saved + kStep;
      const Scalar up = eval_loss();
      x = saved - kStep;
      const Scalar down = eval_loss();
      x = saved;
      const Scalar fd = (up - down) / (2.0 * kStep);
      const Scalar an = g_refs[k].data[j];
      // The absolute floor keeps ~1e-11 finite-difference noise on
      // near-zero gradients from registering as relative error.
      const Scalar denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      entry.max_rel = std::max(entry.max_rel, std::abs(fd - an) / denom);
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = true;
  for (const auto& e : report.entries)
    if (!(e.max_rel <= report.tolerance)) report.pass = false;
  return report;
}

}  // namespace udoc
