#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "udoc/downstream.hpp"
#include "udoc/trainer.hpp"

namespace fs = std::filesystem;
using namespace udoc;

namespace {

RunConfig load_config(const std::string& path, bool tiny_default) {
  if (path.empty()) return tiny_default ? RunConfig::tiny() : RunConfig::desk();
  return RunConfig::from_kv(KvConfig::parse_file(path));
}

std::vector<std::string> class_names() {
  std::vector<std::string> names;
  for (int c = 0; c < kNumRegionTypes; ++c)
    names.emplace_back(region_type_name(static_cast<RegionType>(c)));
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"udoc: multimodal document pretraining at desk scale"};
  app.require_subcommand(1);

  std::string config_path, out_dir, corpus_dir, init_path, task_name = "entity", inspect_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  long steps = -1;
  int count = 0;

  auto add_common = [&](CLI::App* cmd, bool with_config = true) {
    if (with_config) cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_given = true;
    });
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic document corpus");
  add_common(gen);
  gen->add_option("--count", count, "number of documents")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "run the self-supervised pretraining loop");
  add_common(pre);
  pre->add_option("--corpus", corpus_dir, "corpus directory")->required();
  pre->add_option("--out", out_dir, "run directory")->required();
  pre->add_option("--init", init_path, "checkpoint to resume from");
  pre->add_option("--steps", steps, "override train.steps");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc);

  auto* ft = app.add_subcommand("finetune", "fine-tune on a labeled synthetic task");
  add_common(ft);
  ft->add_option("--task", task_name, "entity | doc")->required();
  ft->add_option("--corpus", corpus_dir, "labeled corpus directory")->required();
  ft->add_option("--init", init_path, "pretrained checkpoint directory, or 'random'")->required();
  ft->add_option("--out", out_dir, "output directory")->required();
  ft->add_option("--steps", steps, "override finetune.steps");

  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model on a corpus");
  add_common(ev);
  ev->add_option("--init", init_path, "fine-tuned checkpoint directory")->required();
  ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ev->add_option("--out", out_dir, "optional report file");

  auto* ins = app.add_subcommand("inspect", "print a checkpoint's tensor table");
  ins->add_option("checkpoint", inspect_path, "checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = load_config(config_path, false);
      const std::uint64_t s = seed_given ? seed : cfg.train.seed;
      const Corpus corpus = generate_corpus(s, count, cfg.corpus);
      save_corpus(corpus, out_dir);
      std::cout << "wrote " << corpus.docs.size() << " documents to " << out_dir << "\n";
      return 0;
    }

    if (pre->parsed()) {
      RunConfig cfg = load_config(config_path, false);
      if (seed_given) cfg.train.seed = seed;
      if (steps >= 0) cfg.train.steps = steps;
      const Corpus corpus = load_corpus(corpus_dir);
      cfg.corpus = corpus.cfg;  // the corpus on disk wins
      const fs::path resume = init_path;
      PretrainResult res =
          pretrain(corpus, cfg, out_dir, init_path.empty() ? nullptr : &resume);
      std::cout << "pretraining done; best smoothed loss " << res.best_loss << " at step "
                << res.best_step << "\nbest checkpoint: " << res.best_checkpoint.string() << "\n";
      return 0;
    }

    if (gc->parsed()) {
      RunConfig cfg = load_config(config_path, true);
      const std::uint64_t s = seed_given ? seed : cfg.train.seed;
      GradcheckReport report = gradcheck(cfg, s);
      std::cout << report.summary() << "\n";
      for (const auto& e : report.entries)
        if (!(e.max_rel <= report.tolerance))
          std::cout << "  FAILED " << e.name << " rel err " << e.max_rel << "\n";
      return report.pass ? 0 : 2;
    }

    if (ft->parsed()) {
      RunConfig cfg = load_config(config_path, false);
      if (steps >= 0) cfg.finetune.steps = steps;
      const std::uint64_t s = seed_given ? seed : cfg.train.seed;
      const Corpus corpus = load_corpus(corpus_dir);
      cfg.corpus = corpus.cfg;
      const FinetuneTask task = finetune_task_from_name(task_name);

      ModelParams init_params;
      const ModelParams* init = nullptr;
      if (init_path != "random") {
        Checkpoint ckpt = load_checkpoint(init_path);
        init_params = std::move(ckpt.params);
        init = &init_params;
      }
      FinetuneResult res = finetune(corpus, task, init, cfg, s);
      fs::create_directories(out_dir);
      save_finetuned(fs::path(out_dir) / "model", res.model, cfg);
      {
        std::ofstream echo(fs::path(out_dir) / "config.txt");
        echo << cfg.to_kv().serialize();
      }
      const std::string report = res.eval_report.serialize(class_names());
      {
        std::ofstream rf(fs::path(out_dir) / "eval_report.txt");
        rf << report;
      }
      std::cout << report;
      return 0;
    }

    if (ev->parsed()) {
      RunConfig cfg;
      FinetunedModel model = load_finetuned(init_path, &cfg);
      const Corpus corpus = load_corpus(corpus_dir);
      cfg.corpus = corpus.cfg;
      EvalReport report = evaluate_model(model, corpus, cfg, 0, corpus.docs.size());
      const std::string text = report.serialize(class_names());
      if (!out_dir.empty()) {
        std::ofstream rf(out_dir);
        rf << text;
      }
      std::cout << text;
      return 0;
    }

    if (ins->parsed()) {
      std::cout << describe_checkpoint(inspect_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
