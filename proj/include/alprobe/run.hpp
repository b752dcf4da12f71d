#ifndef ALPROBE_RUN_HPP
#define ALPROBE_RUN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "alprobe/activations.hpp"
#include "alprobe/probing.hpp"
#include "alprobe/scoring.hpp"
#include "alprobe/tinylm.hpp"

namespace alprobe {

// Table 8 completion prompts; the default multi-prompt template set.
extern const std::vector<std::string> kCompletionTemplates;

struct RunConfig {
  std::string corpus_path;

  std::string scorer_kind = "lexicon";  // "lexicon" | "remote"
  std::string lexicon_path;             // empty = built-in synthetic lexicon
  RemoteScorerConfig remote;

  std::string model_source = "tinylm";  // "tinylm" | "dump"
  TinyLMConfig tinylm;
  std::string dump_path;          // dump ingestion
  std::string generations_path;   // scored-generation sidecar for dump runs

  GenerationConfig generation;
  TrainConfig train;
  FoldPlan folds;

  std::vector<Scenario> scenarios = {Scenario::Input, Scenario::Forward,
                                     Scenario::Output, Scenario::Backward};
  std::vector<AttributeId> attributes = {AttributeId::GeneralToxicity};
  std::vector<int> layers;              // validate selection; empty = all
  std::vector<std::string> templates;   // multi-prompt runs
  std::vector<int> intervention_layers; // empty = no intervention stage

  std::string output_dir = "run";
  std::uint64_t seed = 0;
  bool record_timestamps = false;  // off by default: byte-stable run dirs
};

RunConfig load_run_config(const std::string& path);

// Orchestrated stages; each returns after persisting its artifacts and
// updating the run manifest. Stages whose recorded input hashes match a
// previous run are skipped.
std::string cmd_pipeline(const RunConfig& cfg);

struct ValidationRow {
  Scenario scenario;
  AttributeId attribute;
  int layer = 0;
  double s_true = 0.0;
  double s_shuffled = 0.0;
  double selectivity_value = 0.0;
  double compression = 0.0;
  bool flagged = false;  // probe result untrusted
};

std::vector<ValidationRow> cmd_validate(const RunConfig& cfg);

void cmd_report(const std::string& run_dir);

// Individual stage entry points (CLI subcommands).
void stage_score(const RunConfig& cfg);
void stage_generate(const RunConfig& cfg);
void stage_probe(const RunConfig& cfg);
void stage_behavior(const RunConfig& cfg);
void stage_interplay(const RunConfig& cfg);
void stage_intervene(const RunConfig& cfg);

std::string file_sha256(const std::string& path);

}  // namespace alprobe

#endif  // ALPROBE_RUN_HPP
