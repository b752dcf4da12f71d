#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "alprobe/corpus.hpp"
#include "alprobe/run.hpp"
#include "alprobe/synth.hpp"

using namespace alprobe;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "alprobe_test_cli";
  return dir;
}

std::string small_config_text(const fs::path& corpus, const fs::path& out) {
  std::ostringstream cfg;
  cfg << "corpus = \"" << corpus.string() << "\"\n";
  cfg << "output_dir = \"" << out.string() << "\"\n";
  cfg << "seed = 7\n";
  cfg << "scorer = \"lexicon\"\n";
  cfg << "model_source = \"tinylm\"\n";
  cfg << "attributes = [\"general_toxicity\"]\n";
  cfg << "intervention_layers = [1, 2]\n";
  cfg << "layers = [1]\n";
  cfg << "[tinylm]\n";
  cfg << "vocab_size = 96\n";
  cfg << "d_model = 32\n";
  cfg << "n_layers = 4\n";
  cfg << "n_heads = 4\n";
  cfg << "max_seq_len = 64\n";
  cfg << "suppressor_layer = 2\n";
  cfg << "[generation]\n";
  cfg << "n_samples = 3\n";
  cfg << "max_new_tokens = 6\n";
  cfg << "seed = 3\n";
  return cfg.str();
}

// Map of relative path -> content hash for a whole directory tree.
std::map<std::string, std::string> dir_digest(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).string()] =
        file_sha256(e.path().string());
  }
  return out;
}

RunConfig prepared_config(const std::string& tag) {
  const auto dir = work_dir() / tag;
  fs::remove_all(dir);
  fs::create_directories(dir);

  TinyLMConfig base;
  base.vocab_size = 96;
  base.d_model = 32;
  base.n_layers = 4;
  base.n_heads = 4;
  base.max_seq_len = 64;
  base.suppressor_layer = 2;
  const auto world = make_synthetic_world(base);
  const auto corpus = make_synthetic_corpus(world, 120, 11);
  const auto corpus_path = dir / "corpus.jsonl";
  save_corpus(corpus, corpus_path.string());

  const auto cfg_path = dir / "run.cfg";
  std::ofstream(cfg_path) << small_config_text(corpus_path, dir / "run");
  return load_run_config(cfg_path.string());
}

}  // namespace

TEST_CASE("config parsing covers sections, lists and scalars") {
  const auto dir = work_dir() / "config";
  fs::create_directories(dir);
  const auto path = dir / "parse.cfg";
  std::ofstream(path) << small_config_text("corpus.jsonl", "out");
  const auto cfg = load_run_config(path.string());
  CHECK(cfg.corpus_path == "corpus.jsonl");
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.seed == 7);
  CHECK(cfg.tinylm.d_model == 32);
  CHECK(cfg.tinylm.suppressor_layer == 2);
  CHECK(cfg.generation.n_samples == 3);
  CHECK(cfg.attributes ==
        std::vector<AttributeId>{AttributeId::GeneralToxicity});
  CHECK(cfg.intervention_layers == std::vector<int>{1, 2});
  CHECK(cfg.scenarios.size() == 4);  // default: all scenarios
  CHECK(!cfg.record_timestamps);
}

TEST_CASE("default templates resolve to the four completion prompts") {
  const auto dir = work_dir() / "config";
  fs::create_directories(dir);
  const auto path = dir / "templates.cfg";
  std::ofstream(path) << "corpus = \"c.jsonl\"\ntemplates = \"default\"\n";
  const auto cfg = load_run_config(path.string());
  CHECK(cfg.templates == kCompletionTemplates);
  REQUIRE(kCompletionTemplates.size() == 4);
  for (const auto& t : kCompletionTemplates) {
    CHECK(t.find("{Text}") != std::string::npos);
  }
}

TEST_CASE("config validation rejects bad model sources") {
  const auto dir = work_dir() / "config";
  fs::create_directories(dir);
  const auto path = dir / "bad.cfg";
  std::ofstream(path) << "model_source = \"other\"\n";
  CHECK_THROWS(load_run_config(path.string()));
}

TEST_CASE("pipeline produces the full artifact set and resumes by hash") {
  const auto cfg = prepared_config("pipeline");
  const auto run_dir = fs::path(cmd_pipeline(cfg));

  for (const char* f :
       {"corpus_scored.jsonl", "generations.jsonl", "profiles.csv",
        "region_maxima.csv", "behavior.csv", "interplay.csv",
        "intervention.csv", "manifest.json", "dump/manifest.json",
        "dump/activations.bin"}) {
    CHECK(fs::exists(run_dir / f));
  }

  // profiles: (n_layers + 1) rows x 4 scenarios x 1 attribute
  std::ifstream profiles(run_dir / "profiles.csv");
  std::string line;
  int data_rows = 0;
  while (std::getline(profiles, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("scenario,", 0) != 0) {
      ++data_rows;
    }
  }
  CHECK(data_rows == 5 * 4);

  // rerun in place: every stage skips, bytes unchanged
  const auto before = dir_digest(run_dir);
  cmd_pipeline(cfg);
  CHECK(dir_digest(run_dir) == before);
}

TEST_CASE("validate emits one row per selected triple") {
  const auto cfg = prepared_config("validate");
  cmd_pipeline(cfg);
  const auto rows = cmd_validate(cfg);
  CHECK(rows.size() == 4);  // 4 scenarios x 1 attribute x 1 layer
  CHECK(fs::exists(fs::path(cfg.output_dir) / "validation.csv"));
}

TEST_CASE("report bundle re-emits stored tables byte-identically") {
  const auto cfg = prepared_config("report");
  const auto run_dir = fs::path(cmd_pipeline(cfg));
  cmd_report(run_dir.string());
  const auto report = run_dir / "report";
  for (const char* f : {"fig_profiles.csv", "fig_behavior.csv",
                        "fig_interplay.csv", "fig_intervention.csv"}) {
    CHECK(fs::exists(report / f));
  }
  CHECK(file_sha256((report / "fig_profiles.csv").string()) ==
        file_sha256((run_dir / "profiles.csv").string()));

  // recomputing interplay from the stored profiles reproduces the stored rho
  const auto first = dir_digest(report);
  cmd_report(run_dir.string());
  CHECK(dir_digest(report) == first);
}

TEST_CASE("report on an incomplete run names the missing stage") {
  const auto dir = work_dir() / "incomplete_run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_WITH_AS(cmd_report(dir.string()), doctest::Contains("probe"),
                       std::runtime_error);
}
