#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "udoc/trainer.hpp"

using namespace udoc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("udoc_trainer_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

RunConfig small_run_config() {
  RunConfig cfg = RunConfig::tiny();
  cfg.train.steps = 10;
  cfg.train.checkpoint_every = 5;
  cfg.train.batch_size = 2;
  cfg.train.mask_prob_sentence = 0.3;
  cfg.train.mask_prob_visual = 0.3;
  return cfg;
}

}  // namespace

TEST_CASE("lr warmup ramp") {
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.lr = 1e-5;
  cfg.warmup_frac = 0.2;
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(200, cfg) == doctest::Approx(0.5e-5).epsilon(1e-15));
  CHECK(lr_at(400, cfg) == 1e-5);  // exactly at 20% of total steps
  CHECK(lr_at(1200, cfg) == 1e-5);
  CHECK(lr_at(2000, cfg) == 1e-5);
  CHECK_THROWS_AS(lr_at(-1, cfg), std::runtime_error);

  TrainConfig no_warmup = cfg;
  no_warmup.warmup_frac = 0.0;
  CHECK(lr_at(0, no_warmup) == 1e-5);
}

TEST_CASE("adam single-step oracle") {
  // Scalar parameter 1.0, gradient 1.0, lr 1e-5, wd 0: after one step
  // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
  RunConfig cfg = RunConfig::tiny();
  ModelParams params = init_model(cfg, 1);
  ModelParams grads = zero_like(params);
  AdamState state{zero_like(params), zero_like(params), 0};

  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(grads);
  const Scalar before = 1.0;
  p_refs[0].data[0] = before;
  g_refs[0].data[0] = 1.0;

  adam_step(params, grads, state, 1e-5, 0.0);
  const Scalar expected = before - 1e-5 * (1.0 / (1.0 + 1e-8));
  CHECK(p_refs[0].data[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(state.step == 1);
}

TEST_CASE("adam: zero grad is a fixed point; decay-only scales exactly") {
  RunConfig cfg = RunConfig::tiny();
  ModelParams params = init_model(cfg, 2);
  const ModelParams grads = zero_like(params);
  AdamState state{zero_like(params), zero_like(params), 0};

  const std::uint64_t before = model_checksum(params);
  adam_step(params, grads, state, 1e-3, 0.0);
  CHECK(model_checksum(params) == before);

  // Decoupled decay with zero grad multiplies every parameter by (1 - lr wd).
  ModelParams params2 = init_model(cfg, 3);
  auto refs = tensor_refs(params2);
  const Scalar probe = refs[2].data[1];
  AdamState state2{zero_like(params2), zero_like(params2), 0};
  adam_step(params2, grads, state2, 1e-2, 1e-4);
  CHECK(refs[2].data[1] == doctest::Approx(probe * (1.0 - 1e-2 * 1e-4)).epsilon(1e-15));
}

TEST_CASE("adam rejects non-finite gradients naming the tensor") {
  RunConfig cfg = RunConfig::tiny();
  ModelParams params = init_model(cfg, 4);
  ModelParams grads = zero_like(params);
  AdamState state{zero_like(params), zero_like(params), 0};
  grads.quant.logit.W(0, 0) = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state, 1e-3, 0.0),
                       doctest::Contains("quant.logit.weight"), std::runtime_error);
}

TEST_CASE("frozen prefixes are skipped entirely") {
  RunConfig cfg = RunConfig::tiny();
  ModelParams params = init_model(cfg, 5);
  ModelParams grads = zero_like(params);
  grads.visit([](const std::string&, auto& t) { t.setConstant(0.5); });
  AdamState state{zero_like(params), zero_like(params), 0};

  const std::uint64_t conv_before = conv_checksum(params.conv);
  adam_step(params, grads, state, 1e-3, 1e-4, {"conv."});
  CHECK(conv_checksum(params.conv) == conv_before);
  // Something else moved.
  CHECK(params.embed.visual.W(0, 0) != init_model(cfg, 5).embed.visual.W(0, 0));
}

TEST_CASE("model visitation: stable names, every tensor exactly once") {
  RunConfig cfg = RunConfig::tiny();
  const ModelParams params = init_model(cfg, 6);
  const auto names = tensor_names(params);
  std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
  CHECK(unique.count("conv.0.weight") == 1);
  CHECK(unique.count("quant.entries") == 1);
  CHECK(unique.count("block0.v.attn.query.weight") == 1);
  CHECK(unique.count("block0.gate.hidden.weight") == 1);
  CHECK(unique.count("head.mvm.bias") == 1);
  CHECK(total_parameters(params) > 0);
}

TEST_CASE("checkpoint round-trips params, optimizer state and config") {
  RunConfig cfg = RunConfig::tiny();
  ModelParams params = init_model(cfg, 7);
  AdamState adam{zero_like(params), zero_like(params), 42};
  adam.m.embed.visual.W.setConstant(0.25);
  CheckpointMeta meta;
  meta.step = 17;
  meta.tau = 1.75;
  meta.task = "pretrain";

  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir, params, &adam, meta, cfg.to_kv());
  const Checkpoint loaded = load_checkpoint(dir);
  CHECK(model_checksum(loaded.params) == model_checksum(params));
  REQUIRE(loaded.adam.has_value());
  CHECK(loaded.adam->step == 42);
  CHECK(model_checksum(loaded.adam->m) == model_checksum(adam.m));
  CHECK(loaded.meta.step == 17);
  CHECK(loaded.meta.tau == doctest::Approx(1.75));
  CHECK(RunConfig::from_kv(loaded.config).model.dim == cfg.model.dim);
}

TEST_CASE("pretraining is bit-deterministic across runs") {
  const RunConfig cfg = small_run_config();
  const Corpus corpus = generate_corpus(3, 6, cfg.corpus);

  const auto dir1 = temp_dir("det1");
  const auto dir2 = temp_dir("det2");
  pretrain(corpus, cfg, dir1);
  pretrain(corpus, cfg, dir2);

  CHECK(slurp(dir1 / "metrics.tsv") == slurp(dir2 / "metrics.tsv"));
  CHECK(slurp(dir1 / "checkpoints/last/weights.bin") ==
        slurp(dir2 / "checkpoints/last/weights.bin"));
  CHECK(slurp(dir1 / "checkpoints/last/manifest.json") ==
        slurp(dir2 / "checkpoints/last/manifest.json"));
}

TEST_CASE("checkpoint resume is bit-exact with the uninterrupted run") {
  const RunConfig cfg = small_run_config();  // 10 steps, checkpoint every 5
  const Corpus corpus = generate_corpus(4, 6, cfg.corpus);

  const auto full_dir = temp_dir("full");
  pretrain(corpus, cfg, full_dir);

  const auto half_dir = temp_dir("half");
  pretrain(corpus, cfg, half_dir, nullptr, /*stop_after=*/5);

  const auto resumed_dir = temp_dir("resumed");
  const fs::path resume_from = half_dir / "checkpoints" / "last";
  pretrain(corpus, cfg, resumed_dir, &resume_from);

  CHECK(slurp(full_dir / "checkpoints/last/weights.bin") ==
        slurp(resumed_dir / "checkpoints/last/weights.bin"));
}

TEST_CASE("metrics stream has one record per step with schedule columns exact") {
  const RunConfig cfg = small_run_config();
  const Corpus corpus = generate_corpus(5, 6, cfg.corpus);
  const auto dir = temp_dir("metrics");
  pretrain(corpus, cfg, dir);

  std::ifstream in(dir / "metrics.tsv");
  std::string line;
  std::getline(in, line);  // header
  CHECK(line.rfind("# step", 0) == 0);
  long rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    long step;
    Scalar lr, tau;
    ss >> step >> lr >> tau;
    CHECK(step == rows);
    CHECK(lr == lr_at(step, cfg.train));
    CHECK(tau == tau_at(step, cfg.quant));
    ++rows;
  }
  CHECK(rows == cfg.train.steps);
}

TEST_CASE("multithreaded batch gradients match the single-threaded ones bitwise") {
  const RunConfig cfg = small_run_config();
  const Corpus corpus = generate_corpus(6, 6, cfg.corpus);
  const TextEncoder text(cfg.model.text_seed, cfg.corpus.vocab_size, cfg.model.sentence_dim);
  const ModelParams params = init_model(cfg, 9);
  std::vector<ModelParams> scratch(2, zero_like(params));

  StepPlan plan = make_step_plan(corpus, cfg, text, 1, 0);
  ModelParams g1 = zero_like(params);
  pretrain_batch(corpus, plan, params, cfg, 2.0, text, &g1, &scratch, false, false);

  setenv("UDOC_THREADS", "2", 1);
  StepPlan plan2 = make_step_plan(corpus, cfg, text, 1, 0);
  ModelParams g2 = zero_like(params);
  pretrain_batch(corpus, plan2, params, cfg, 2.0, text, &g2, &scratch, false, false);
  setenv("UDOC_THREADS", "1", 1);

  CHECK(model_checksum(g1) == model_checksum(g2));
}

TEST_CASE("gradcheck passes on the tiny config and covers every tensor once") {
  const RunConfig cfg = RunConfig::tiny();
  const GradcheckReport report = gradcheck(cfg, cfg.train.seed);
  INFO(report.summary());
  CHECK(report.pass);

  const auto names = tensor_names(init_model(cfg, cfg.train.seed));
  REQUIRE(report.entries.size() == names.size());
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(report.entries[i].name == names[i]);
}

TEST_CASE("gradcheck flags a corrupted gradient") {
  const RunConfig cfg = RunConfig::tiny();
  const GradcheckReport report = gradcheck(cfg, cfg.train.seed, "block0.gate.hidden.weight");
  CHECK_FALSE(report.pass);
  for (const auto& e : report.entries) {
    if (e.name == "block0.gate.hidden.weight")
      CHECK(e.max_rel > report.tolerance);
  }
}
