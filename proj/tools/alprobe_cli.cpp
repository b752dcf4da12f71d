// Command-line front end: subsampling, scoring, generation, probing and the
// full pipeline over a single run directory.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "alprobe/corpus.hpp"
#include "alprobe/run.hpp"
#include "alprobe/synth.hpp"

namespace {

alprobe::RunConfig load(const std::string& config_path) {
  return alprobe::load_run_config(config_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aligned toxicity probing"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;

  // subsample options
  std::string in_path, out_path;
  std::size_t target = 0;
  double alpha = 0.05;
  double step_fraction = 0.05;
  std::size_t max_rejects = 50;
  std::uint64_t seed = 0;

  auto* sub = app.add_subcommand("subsample",
                                 "distribution-preserving corpus reduction");
  sub->add_option("--in", in_path, "input corpus (jsonl)")->required();
  sub->add_option("--out", out_path, "output corpus (jsonl)")->required();
  sub->add_option("--target", target, "target record count")->required();
  sub->add_option("--alpha", alpha, "per-attribute KS acceptance level");
  sub->add_option("--step", step_fraction, "fraction removed per proposal");
  sub->add_option("--max-rejects", max_rejects,
                  "consecutive rejections before stopping");
  sub->add_option("--seed", seed, "rng seed");

  // synth-corpus options
  std::size_t n_prompts = 500;

  auto* synth = app.add_subcommand(
      "synth-corpus", "write a pre-scored corpus for the built-in model");
  synth->add_option("--out", out_path, "output corpus (jsonl)")->required();
  synth->add_option("--n", n_prompts, "number of prompts");
  synth->add_option("--seed", seed, "rng seed");

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config file")->required();
  };

  auto* score = app.add_subcommand("score", "score the corpus");
  add_config(score);
  auto* generate = app.add_subcommand("generate",
                                      "sample continuations and dump states");
  add_config(generate);
  auto* extract = app.add_subcommand(
      "extract", "write the activation dump (runs the generate stage)");
  add_config(extract);
  auto* probe = app.add_subcommand("probe", "train probes, write profiles");
  add_config(probe);
  auto* validate = app.add_subcommand("validate",
                                      "selectivity and MDL probe controls");
  add_config(validate);
  auto* behavior = app.add_subcommand("behavior", "EMT / TC tables");
  add_config(behavior);
  auto* interplay = app.add_subcommand("interplay",
                                       "probe-vs-behavior correlation");
  add_config(interplay);
  auto* intervene = app.add_subcommand("intervene", "layer-skip experiment");
  add_config(intervene);
  auto* pipeline = app.add_subcommand("pipeline", "all stages in order");
  add_config(pipeline);
  auto* report = app.add_subcommand("report", "plot-ready csv bundle");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sub->parsed()) {
      const auto corpus = alprobe::load_corpus(in_path);
      const auto reduced = alprobe::subsample(corpus, target, alpha,
                                              step_fraction, max_rejects, seed);
      alprobe::save_corpus(reduced, out_path);
      std::printf("kept %zu of %zu records\n", reduced.size(), corpus.size());
      return 0;
    }
    if (synth->parsed()) {
      const auto world = alprobe::make_synthetic_world();
      const auto corpus = alprobe::make_synthetic_corpus(world, n_prompts, seed);
      alprobe::save_corpus(corpus, out_path);
      std::printf("wrote %zu prompts\n", corpus.size());
      return 0;
    }
    if (report->parsed()) {
      alprobe::cmd_report(run_dir);
      return 0;
    }

    const auto cfg = load(config_path);
    if (score->parsed()) {
      alprobe::stage_score(cfg);
    } else if (generate->parsed() || extract->parsed()) {
      alprobe::stage_generate(cfg);
    } else if (probe->parsed()) {
      alprobe::stage_probe(cfg);
    } else if (behavior->parsed()) {
      alprobe::stage_behavior(cfg);
    } else if (interplay->parsed()) {
      alprobe::stage_interplay(cfg);
    } else if (intervene->parsed()) {
      alprobe::stage_intervene(cfg);
    } else if (validate->parsed()) {
      const auto rows = alprobe::cmd_validate(cfg);
      std::size_t flagged = 0;
      for (const auto& r : rows) flagged += r.flagged ? 1 : 0;
      std::printf("%zu of %zu probes flagged untrusted\n", flagged, rows.size());
    } else if (pipeline->parsed()) {
      const auto dir = alprobe::cmd_pipeline(cfg);
      std::printf("run complete: %s\n", dir.c_str());
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
