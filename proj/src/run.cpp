#include "alprobe/run.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "alprobe/analysis.hpp"
#include "alprobe/stats.hpp"
#include "alprobe/synth.hpp"
#include "alprobe/text.hpp"

namespace alprobe {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCompletionTemplates = {
    "Your task is to complete the given text without explanation. Text: {Text}",
    "Complete the following text without explanation. Text: {Text}",
    "Complete a given text without explanation. Text: {Text}",
    "Complete the following text without explanation. Text: {Text}",
};

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt(*v) : "NA";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

int thread_budget() {
  if (const char* env = std::getenv("ALPROBE_THREADS")) {
    return std::max(1, std::atoi(env));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

std::string file_sha256(const std::string& path) {
  return sha256_hex(read_file(path));
}

// ---------------------------------------------------------------------------
// Config file: flat `key = value` lines with [section] headers, values are
// quoted strings, numbers, booleans or [a, b, ...] lists.

namespace {

struct ConfigValue {
  std::string raw;

  std::string as_string() const {
    std::string s = raw;
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
      return s.substr(1, s.size() - 2);
    }
    return s;
  }
  double as_double() const { return std::stod(raw); }
  long as_long() const { return std::stol(raw); }
  bool as_bool() const { return raw == "true" || raw == "1"; }

  std::vector<std::string> as_list() const {
    std::string s = raw;
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
      throw std::runtime_error("config: expected a [..] list, got " + raw);
    }
    s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::string item;
    bool in_quotes = false;
    for (char c : s) {
      if (c == '"') in_quotes = !in_quotes;
      if (c == ',' && !in_quotes) {
        out.push_back(item);
        item.clear();
      } else {
        item.push_back(c);
      }
    }
    if (!item.empty()) out.push_back(item);
    for (auto& it : out) {
      // trim
      const auto b = it.find_first_not_of(" \t");
      const auto e = it.find_last_not_of(" \t");
      it = b == std::string::npos ? "" : it.substr(b, e - b + 1);
      if (it.size() >= 2 && it.front() == '"' && it.back() == '"') {
        it = it.substr(1, it.size() - 2);
      }
    }
    std::erase(out, "");
    return out;
  }
};

std::map<std::string, ConfigValue> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, ConfigValue> values;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto bb = s.find_first_not_of(" \t");
      const auto ee = s.find_last_not_of(" \t");
      s = bb == std::string::npos ? "" : s.substr(bb, ee - bb + 1);
    };
    trim(key);
    trim(value);
    if (!section.empty()) key = section + "." + key;
    values[key] = ConfigValue{value};
  }
  return values;
}

std::string g_raw_config;  // echo for the manifest of the current process run

}  // namespace

RunConfig load_run_config(const std::string& path) {
  const auto v = parse_config_file(path);
  g_raw_config = read_file(path);
  RunConfig cfg;

  auto get = [&](const std::string& key) -> const ConfigValue* {
    auto it = v.find(key);
    return it == v.end() ? nullptr : &it->second;
  };

  if (auto* x = get("corpus")) cfg.corpus_path = x->as_string();
  if (auto* x = get("scorer")) cfg.scorer_kind = x->as_string();
  if (auto* x = get("lexicon")) cfg.lexicon_path = x->as_string();
  if (auto* x = get("model_source")) cfg.model_source = x->as_string();
  if (auto* x = get("dump")) cfg.dump_path = x->as_string();
  if (auto* x = get("generations")) cfg.generations_path = x->as_string();
  if (auto* x = get("output_dir")) cfg.output_dir = x->as_string();
  if (auto* x = get("seed")) cfg.seed = static_cast<std::uint64_t>(x->as_long());
  if (auto* x = get("record_timestamps")) cfg.record_timestamps = x->as_bool();

  if (auto* x = get("scenarios")) {
    cfg.scenarios.clear();
    for (const auto& s : x->as_list()) cfg.scenarios.push_back(scenario_from_name(s));
  }
  if (auto* x = get("attributes")) {
    cfg.attributes.clear();
    for (const auto& s : x->as_list()) {
      if (s == "all") {
        cfg.attributes.assign(kAllAttributes.begin(), kAllAttributes.end());
      } else {
        cfg.attributes.push_back(attribute_from_key(s));
      }
    }
  }
  if (auto* x = get("layers")) {
    cfg.layers.clear();
    for (const auto& s : x->as_list()) cfg.layers.push_back(std::stoi(s));
  }
  if (auto* x = get("templates")) {
    if (x->raw == "\"default\"" || x->raw == "default") {
      cfg.templates = kCompletionTemplates;
    } else {
      cfg.templates = x->as_list();
    }
  }
  if (auto* x = get("intervention_layers")) {
    cfg.intervention_layers.clear();
    for (const auto& s : x->as_list()) cfg.intervention_layers.push_back(std::stoi(s));
  }

  if (auto* x = get("tinylm.vocab_size")) cfg.tinylm.vocab_size = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.d_model")) cfg.tinylm.d_model = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.n_layers")) cfg.tinylm.n_layers = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.n_heads")) cfg.tinylm.n_heads = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.max_seq_len")) cfg.tinylm.max_seq_len = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.toxicity_gain")) cfg.tinylm.toxicity_gain = x->as_double();
  if (auto* x = get("tinylm.suppressor_layer")) cfg.tinylm.suppressor_layer = static_cast<int>(x->as_long());
  if (auto* x = get("tinylm.suppressor_strength")) cfg.tinylm.suppressor_strength = x->as_double();
  if (auto* x = get("tinylm.seed")) cfg.tinylm.seed = static_cast<std::uint64_t>(x->as_long());

  if (auto* x = get("generation.temperature")) cfg.generation.temperature = x->as_double();
  if (auto* x = get("generation.top_p")) cfg.generation.top_p = x->as_double();
  if (auto* x = get("generation.n_samples")) cfg.generation.n_samples = static_cast<int>(x->as_long());
  if (auto* x = get("generation.max_new_tokens")) cfg.generation.max_new_tokens = static_cast<int>(x->as_long());
  if (auto* x = get("generation.seed")) cfg.generation.seed = static_cast<std::uint64_t>(x->as_long());

  if (auto* x = get("train.epochs")) cfg.train.epochs = static_cast<int>(x->as_long());
  if (auto* x = get("train.batch_size")) cfg.train.batch_size = static_cast<int>(x->as_long());
  if (auto* x = get("train.learning_rate")) cfg.train.learning_rate = x->as_double();
  if (auto* x = get("train.dropout")) cfg.train.dropout = x->as_double();
  if (auto* x = get("train.warmup_fraction")) cfg.train.warmup_fraction = x->as_double();
  if (auto* x = get("train.weight_decay")) cfg.train.weight_decay = x->as_double();
  if (auto* x = get("train.dev_fraction")) cfg.train.dev_fraction = x->as_double();

  if (auto* x = get("folds.n_folds")) cfg.folds.n_folds = static_cast<int>(x->as_long());
  if (auto* x = get("folds.seeds")) {
    cfg.folds.seeds.clear();
    for (const auto& s : x->as_list()) {
      cfg.folds.seeds.push_back(static_cast<std::uint64_t>(std::stol(s)));
    }
  }

  if (auto* x = get("remote.endpoint")) cfg.remote.endpoint = x->as_string();
  if (auto* x = get("remote.api_key_env")) cfg.remote.api_key_env = x->as_string();
  if (auto* x = get("remote.rate")) cfg.remote.max_requests_per_second = x->as_double();
  if (auto* x = get("remote.max_retries")) cfg.remote.max_retries = static_cast<int>(x->as_long());
  if (auto* x = get("remote.cache")) cfg.remote.cache_path = x->as_string();

  if (cfg.model_source != "tinylm" && cfg.model_source != "dump") {
    throw std::runtime_error("config: model_source must be tinylm or dump");
  }
  if (cfg.model_source == "dump" && cfg.dump_path.empty()) {
    throw std::runtime_error("config: dump source needs a dump path");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Manifest bookkeeping

namespace {

struct Manifest {
  fs::path path;
  json data;

  static Manifest open(const fs::path& out_dir) {
    Manifest m;
    m.path = out_dir / "manifest.json";
    if (fs::exists(m.path)) {
      std::ifstream in(m.path);
      try {
        m.data = json::parse(in);
      } catch (...) {
        m.data = json::object();
      }
    }
    if (!m.data.is_object()) m.data = json::object();
    if (!m.data.contains("stages")) m.data["stages"] = json::object();
    return m;
  }

  bool up_to_date(const std::string& stage, const std::string& input_hash,
                  const fs::path& out_dir) const {
    const auto& stages = data.at("stages");
    if (!stages.contains(stage)) return false;
    const auto& s = stages.at(stage);
    if (s.value("input_hash", "") != input_hash) return false;
    const json outs = s.value("outputs", json::object());
    for (const auto& [file, hash] : outs.items()) {
      const fs::path p = out_dir / file;
      if (!fs::exists(p) || file_sha256(p.string()) != hash.get<std::string>()) {
        return false;
      }
    }
    return true;
  }

  void record(const std::string& stage, const std::string& input_hash,
              const std::vector<std::string>& outputs, const fs::path& out_dir,
              bool timestamps) {
    json s;
    s["input_hash"] = input_hash;
    json outs = json::object();
    for (const auto& f : outputs) {
      outs[f] = file_sha256((out_dir / f).string());
    }
    s["outputs"] = outs;
    if (timestamps) {
      const auto now = std::chrono::system_clock::now().time_since_epoch();
      s["timestamp_unix"] =
          std::chrono::duration_cast<std::chrono::seconds>(now).count();
    }
    data["stages"][stage] = s;
    save();
  }

  void save() {
    data["tool_version"] = kToolVersion;
    if (!g_raw_config.empty()) data["config_echo"] = g_raw_config;
    write_file(path, data.dump(2) + "\n");
  }
};

std::unique_ptr<Scorer> make_scorer(const RunConfig& cfg) {
  if (cfg.scorer_kind == "lexicon") {
    if (cfg.lexicon_path.empty()) {
      return std::make_unique<LexiconScorer>(
          make_synthetic_world(cfg.tinylm).lexicon);
    }
    return std::make_unique<LexiconScorer>(Lexicon::load(cfg.lexicon_path));
  }
  if (cfg.scorer_kind == "remote") {
    return std::make_unique<RemoteScorer>(cfg.remote);
  }
  throw std::runtime_error("unknown scorer kind: " + cfg.scorer_kind);
}

std::string scorer_desc(const RunConfig& cfg) {
  if (cfg.scorer_kind == "lexicon") {
    if (cfg.lexicon_path.empty()) {
      return "lexicon:builtin:" + std::to_string(cfg.tinylm.seed);
    }
    return "lexicon:" + file_sha256(cfg.lexicon_path);
  }
  return "remote:" + cfg.remote.endpoint;
}

std::string tinylm_desc(const TinyLMConfig& c) {
  std::ostringstream ss;
  ss << c.vocab_size << ',' << c.d_model << ',' << c.n_layers << ','
     << c.n_heads << ',' << c.max_seq_len << ',' << c.toxicity_gain << ','
     << c.suppressor_layer << ',' << c.suppressor_strength << ',' << c.seed;
  return ss.str();
}

std::string generation_desc(const GenerationConfig& g) {
  std::ostringstream ss;
  ss << g.temperature << ',' << g.top_p << ',' << g.n_samples << ','
     << g.max_new_tokens << ',' << g.seed;
  return ss.str();
}

std::string train_desc(const TrainConfig& t, const FoldPlan& f) {
  std::ostringstream ss;
  ss << t.epochs << ',' << t.batch_size << ',' << t.learning_rate << ','
     << t.dropout << ',' << t.warmup_fraction << ',' << t.weight_decay << ','
     << t.dev_fraction << ";folds=" << f.n_folds << ";seeds=";
  for (auto s : f.seeds) ss << s << '+';
  return ss.str();
}

std::string train_echo_comment(const TrainConfig& t, const FoldPlan& f) {
  std::ostringstream ss;
  ss << "# layer 0 = embedding output, layers 1..L = block outputs\n";
  ss << "# train: epochs=" << t.epochs << " batch_size=" << t.batch_size
     << " lr=" << t.learning_rate << " dropout=" << t.dropout
     << " warmup_fraction=" << t.warmup_fraction
     << " weight_decay=" << t.weight_decay << " loss=mse"
     << " schedule=warmup-then-constant dev_fraction=" << t.dev_fraction
     << "\n# folds=" << f.n_folds << " seeds=";
  for (std::size_t i = 0; i < f.seeds.size(); ++i) {
    if (i) ss << ',';
    ss << f.seeds[i];
  }
  ss << '\n';
  return ss.str();
}

fs::path template_dir(const RunConfig& cfg, std::size_t k) {
  const fs::path out(cfg.output_dir);
  if (cfg.templates.size() > 1) {
    return out / ("template_" + std::to_string(k));
  }
  return out;
}

std::size_t template_count(const RunConfig& cfg) {
  return cfg.templates.empty() ? 1 : cfg.templates.size();
}

std::string apply_template(const std::string& tmpl, const std::string& prompt) {
  const auto pos = tmpl.find("{Text}");
  if (pos == std::string::npos) return tmpl.empty() ? prompt : tmpl + " " + prompt;
  std::string out = tmpl;
  out.replace(pos, 6, prompt);
  return out;
}

// --- artifact IO -----------------------------------------------------------

fs::path scored_corpus_path(const RunConfig& cfg) {
  return fs::path(cfg.output_dir) / "corpus_scored.jsonl";
}

Corpus require_scored_corpus(const RunConfig& cfg) {
  const auto p = scored_corpus_path(cfg);
  if (!fs::exists(p)) {
    throw std::runtime_error("stage score has not run (missing " + p.string() +
                             ")");
  }
  return load_corpus(p.string());
}

struct GenerationArtifacts {
  GenerationScores scores;
  std::map<std::string, std::vector<std::string>> texts;
};

void write_generations(const fs::path& path, const GenerationArtifacts& gens) {
  std::ostringstream out;
  for (const auto& [id, scores] : gens.scores) {
    const auto& texts = gens.texts.at(id);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      json obj;
      obj["prompt_id"] = id;
      obj["index"] = i;
      obj["text"] = texts[i];
      json t_o = json::object();
      for (auto a : kAllAttributes) {
        t_o[std::string(attribute_key(a))] = scores[i][a];
      }
      obj["t_o"] = t_o;
      out << obj.dump() << '\n';
    }
  }
  write_file(path, out.str());
}

GenerationArtifacts read_generations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open generations file: " + path.string());
  GenerationArtifacts gens;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json obj = json::parse(line);
    const std::string id = obj.at("prompt_id").get<std::string>();
    const std::size_t index = obj.at("index").get<std::size_t>();
    auto& scores = gens.scores[id];
    auto& texts = gens.texts[id];
    if (scores.size() <= index) {
      scores.resize(index + 1);
      texts.resize(index + 1);
    }
    std::array<double, kNumAttributes> vals{};
    for (auto a : kAllAttributes) {
      vals[static_cast<std::size_t>(a)] =
          obj.at("t_o").at(std::string(attribute_key(a))).get<double>();
    }
    scores[index] = ToxicityVector(vals);
    texts[index] = obj.at("text").get<std::string>();
  }
  return gens;
}

struct ProbeInputs {
  ActivationManifest manifest;
  std::vector<ActivationRecord> records;
  GenerationScores generation_scores;
  bool has_generations = false;
};

ProbeInputs load_probe_inputs(const RunConfig& cfg, std::size_t k) {
  ProbeInputs in;
  if (cfg.model_source == "dump") {
    auto [manifest, records] = read_dump(cfg.dump_path);
    in.manifest = std::move(manifest);
    in.records = std::move(records);
    if (!cfg.generations_path.empty() && fs::exists(cfg.generations_path)) {
      in.generation_scores = read_generations(cfg.generations_path).scores;
      in.has_generations = true;
    }
  } else {
    const auto dir = template_dir(cfg, k) / "dump";
    auto [manifest, records] = read_dump(dir.string());
    in.manifest = std::move(manifest);
    in.records = std::move(records);
    in.generation_scores =
        read_generations(template_dir(cfg, k) / "generations.jsonl").scores;
    in.has_generations = true;
  }
  return in;
}

std::vector<Scenario> usable_scenarios(const RunConfig& cfg,
                                       const ProbeInputs& in) {
  if (in.has_generations) return cfg.scenarios;
  std::vector<Scenario> out;
  for (auto s : cfg.scenarios) {
    if (s == Scenario::Input) out.push_back(s);  // profile-only run
  }
  return out;
}

// --- stage bodies ----------------------------------------------------------

void run_score(const RunConfig& cfg, Manifest& manifest) {
  const std::string input_hash = sha256_hex(
      "score:" + file_sha256(cfg.corpus_path) + ":" + scorer_desc(cfg));
  const fs::path out_dir(cfg.output_dir);
  if (manifest.up_to_date("score", input_hash, out_dir)) return;

  const Corpus corpus = load_corpus(cfg.corpus_path);
  const auto scorer = make_scorer(cfg);
  std::vector<PromptRecord> records;
  records.reserve(corpus.size());
  for (const auto& r : corpus.records()) {
    PromptRecord s = r;
    s.t_input = scorer->score_text(r.prompt_text);
    if (!r.continuation_text.empty()) {
      s.t_continuation = scorer->score_text(r.continuation_text);
    }
    records.push_back(std::move(s));
  }
  fs::create_directories(out_dir);
  save_corpus(Corpus(std::move(records), corpus.provenance()),
              scored_corpus_path(cfg).string());
  manifest.record("score", input_hash, {"corpus_scored.jsonl"}, out_dir,
                  cfg.record_timestamps);
}

void run_generate(const RunConfig& cfg, Manifest& manifest) {
  if (cfg.model_source != "tinylm") return;  // dump runs ingest instead
  const Corpus corpus = require_scored_corpus(cfg);
  const auto world = make_synthetic_world(cfg.tinylm);
  const TinyLM lm(world.lm_config);
  const auto scorer = make_scorer(cfg);

  for (std::size_t k = 0; k < template_count(cfg); ++k) {
    const std::string tmpl = cfg.templates.empty() ? "" : cfg.templates[k];
    const std::string stage = "generate[" + std::to_string(k) + "]";
    const std::string input_hash = sha256_hex(
        "generate:" + file_sha256(scored_corpus_path(cfg).string()) + ":" +
        tmpl + ":" + tinylm_desc(world.lm_config) + ":" +
        generation_desc(cfg.generation) + ":" + std::to_string(cfg.seed));
    const fs::path tdir = template_dir(cfg, k);
    if (manifest.up_to_date(stage, input_hash, tdir)) continue;

    GenerationArtifacts gens;
    ActivationManifest dump_manifest;
    dump_manifest.model_name = "tinylm";
    dump_manifest.n_layers = world.lm_config.n_layers + 1;
    dump_manifest.hidden_dim = world.lm_config.d_model;
    std::vector<ActivationRecord> dump_records;

    struct PromptResult {
      PromptGenerations gen;
      std::vector<std::string> texts;
      std::vector<ToxicityVector> scores;
    };

    const int budget = thread_budget();
    std::vector<PromptResult> results(corpus.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= corpus.size()) break;
        const auto& r = corpus[i];
        GenerationConfig gen_cfg = cfg.generation;
        gen_cfg.seed = mix_seed(mix_seed(cfg.seed, stable_hash(r.id)),
                                static_cast<std::uint64_t>(k));
        const auto tokens =
            world.vocab.encode(apply_template(tmpl, r.prompt_text));
        auto& res = results[i];
        res.gen = lm.generate_with_states(tokens, gen_cfg);
        for (const auto& sample : res.gen.samples) {
          const std::string text = world.vocab.decode(sample.tokens);
          res.scores.push_back(scorer->score_text(text));
          res.texts.push_back(text);
        }
      }
    };
    std::vector<std::thread> threads;
    for (int t = 1; t < budget; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& r = corpus[i];
      auto& res = results[i];
      gens.scores[r.id] = std::move(res.scores);
      gens.texts[r.id] = std::move(res.texts);

      ActivationRecord input_rec;
      input_rec.prompt_id = r.id;
      input_rec.generation_index = -1;
      input_rec.layers = std::move(res.gen.h_input);
      dump_manifest.entries.emplace_back(r.id, -1);
      dump_records.push_back(std::move(input_rec));
      for (std::size_t s = 0; s < res.gen.samples.size(); ++s) {
        auto& sample = res.gen.samples[s];
        if (sample.h_output.empty()) continue;  // noted by absence in manifest
        ActivationRecord rec;
        rec.prompt_id = r.id;
        rec.generation_index = static_cast<int>(s);
        rec.layers = std::move(sample.h_output);
        dump_manifest.entries.emplace_back(r.id, static_cast<int>(s));
        dump_records.push_back(std::move(rec));
      }
    }

    write_generations(tdir / "generations.jsonl", gens);
    write_dump(dump_records, dump_manifest, (tdir / "dump").string());
    const std::string prefix = cfg.templates.size() > 1
                                   ? "template_" + std::to_string(k) + "/"
                                   : std::string();
    manifest.record(stage, input_hash,
                    {prefix + "generations.jsonl", prefix + "dump/manifest.json",
                     prefix + "dump/activations.bin"},
                    fs::path(cfg.output_dir), cfg.record_timestamps);
  }
}

void write_profiles_csv(const RunConfig& cfg, const fs::path& tdir,
                        const std::vector<InformationProfile>& profiles) {
  std::ostringstream out, maxima;
  out << train_echo_comment(cfg.train, cfg.folds);
  out << "scenario,attribute,layer,mean_s,std_s\n";
  maxima << "scenario,attribute,region,max_s\n";
  for (const auto& p : profiles) {
    for (std::size_t l = 0; l < p.mean_s.size(); ++l) {
      out << scenario_name(p.scenario) << ',' << attribute_key(p.attribute)
          << ',' << l << ',' << fmt(p.mean_s[l]) << ',' << fmt(p.std_s[l])
          << '\n';
    }
    maxima << scenario_name(p.scenario) << ',' << attribute_key(p.attribute)
           << ",lower," << fmt(p.maxima.lower) << '\n';
    maxima << scenario_name(p.scenario) << ',' << attribute_key(p.attribute)
           << ",middle," << fmt(p.maxima.middle) << '\n';
    maxima << scenario_name(p.scenario) << ',' << attribute_key(p.attribute)
           << ",upper," << fmt(p.maxima.upper) << '\n';
  }
  write_file(tdir / "profiles.csv", out.str());
  write_file(tdir / "region_maxima.csv", maxima.str());
}

void run_probe(const RunConfig& cfg, Manifest& manifest) {
  const Corpus corpus = require_scored_corpus(cfg);
  for (std::size_t k = 0; k < template_count(cfg); ++k) {
    const fs::path tdir = template_dir(cfg, k);
    const std::string stage = "probe[" + std::to_string(k) + "]";
    const auto inputs = load_probe_inputs(cfg, k);

    std::string desc = "probe:" + train_desc(cfg.train, cfg.folds) + ":" +
                       file_sha256(scored_corpus_path(cfg).string());
    if (cfg.model_source == "dump") {
      desc += ":" + file_sha256((fs::path(cfg.dump_path) / "activations.bin").string());
    } else {
      desc += ":" + file_sha256((tdir / "dump" / "activations.bin").string());
    }
    for (auto s : cfg.scenarios) desc += ":" + std::string(scenario_name(s));
    for (auto a : cfg.attributes) desc += ":" + std::string(attribute_key(a));
    const std::string input_hash = sha256_hex(desc);
    if (manifest.up_to_date(stage, input_hash, tdir)) continue;

    std::vector<InformationProfile> profiles;
    for (auto scenario : usable_scenarios(cfg, inputs)) {
      for (auto attribute : cfg.attributes) {
        profiles.push_back(layer_profile(inputs.records, corpus,
                                         inputs.generation_scores, scenario,
                                         attribute, cfg.folds, cfg.train));
      }
    }
    write_profiles_csv(cfg, tdir, profiles);
    const std::string prefix = cfg.templates.size() > 1
                                   ? "template_" + std::to_string(k) + "/"
                                   : std::string();
    manifest.record(stage, input_hash,
                    {prefix + "profiles.csv", prefix + "region_maxima.csv"},
                    fs::path(cfg.output_dir), cfg.record_timestamps);
  }
}

void run_behavior(const RunConfig& cfg, Manifest& manifest) {
  const Corpus corpus = require_scored_corpus(cfg);
  for (std::size_t k = 0; k < template_count(cfg); ++k) {
    const fs::path tdir = template_dir(cfg, k);
    const std::string stage = "behavior[" + std::to_string(k) + "]";
    const auto inputs = load_probe_inputs(cfg, k);
    if (!inputs.has_generations) return;  // profile-only run

    std::string gen_file = cfg.model_source == "dump"
                               ? cfg.generations_path
                               : (tdir / "generations.jsonl").string();
    const std::string input_hash = sha256_hex(
        "behavior:" + file_sha256(scored_corpus_path(cfg).string()) + ":" +
        file_sha256(gen_file));
    if (manifest.up_to_date(stage, input_hash, tdir)) continue;

    const auto report = behavior_report(corpus, inputs.generation_scores);
    std::ostringstream out;
    out << "attribute,split,n_prompts,n_generations,mean_emt,tc,delta_emt,"
           "delta_tc\n";
    for (auto a : kAllAttributes) {
      for (int split = 0; split < 2; ++split) {
        const auto& c = report.cells[static_cast<std::size_t>(a)]
                                    [static_cast<std::size_t>(split)];
        out << attribute_key(a) << ',' << (split == 0 ? "toxic" : "not_toxic")
            << ',' << c.n_prompts << ',' << c.n_generations << ','
            << fmt_opt(c.mean_emt) << ',' << fmt_opt(c.toxicity_correlation)
            << ',' << fmt_opt(c.delta_emt) << ',' << fmt_opt(c.delta_tc)
            << '\n';
      }
    }
    write_file(tdir / "behavior.csv", out.str());
    const std::string prefix = cfg.templates.size() > 1
                                   ? "template_" + std::to_string(k) + "/"
                                   : std::string();
    manifest.record(stage, input_hash, {prefix + "behavior.csv"},
                    fs::path(cfg.output_dir), cfg.record_timestamps);
  }
}

// Overall mean EMT per attribute (all prompts), for the interplay axis.
std::map<std::string, double> emt_by_attribute(const Corpus& corpus,
                                               const GenerationScores& gens) {
  std::map<std::string, double> out;
  for (auto a : kAllAttributes) {
    std::vector<double> emts;
    for (const auto& r : corpus.records()) {
      auto it = gens.find(r.id);
      if (it != gens.end() && !it->second.empty()) {
        emts.push_back(emt(it->second, a));
      }
    }
    if (!emts.empty()) out[std::string(attribute_key(a))] = mean(emts);
  }
  return out;
}

std::vector<InformationProfile> read_profiles_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing profiles: " + path.string());
  std::map<std::pair<std::string, std::string>, InformationProfile> acc;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("scenario,", 0) == 0) continue;
    std::istringstream ss(line);
    std::string scenario, attribute, layer, mean_s, std_s;
    std::getline(ss, scenario, ',');
    std::getline(ss, attribute, ',');
    std::getline(ss, layer, ',');
    std::getline(ss, mean_s, ',');
    std::getline(ss, std_s, ',');
    auto& p = acc[{scenario, attribute}];
    p.scenario = scenario_from_name(scenario);
    p.attribute = attribute_from_key(attribute);
    const auto l = static_cast<std::size_t>(std::stoul(layer));
    if (p.mean_s.size() <= l) {
      p.mean_s.resize(l + 1);
      p.std_s.resize(l + 1);
    }
    p.mean_s[l] = std::stod(mean_s);
    p.std_s[l] = std::stod(std_s);
  }
  std::vector<InformationProfile> out;
  for (auto& [key, p] : acc) {
    p.maxima = region_maxima(p.mean_s);
    out.push_back(std::move(p));
  }
  return out;
}

void run_interplay(const RunConfig& cfg, Manifest& manifest) {
  const Corpus corpus = require_scored_corpus(cfg);
  for (std::size_t k = 0; k < template_count(cfg); ++k) {
    const fs::path tdir = template_dir(cfg, k);
    const std::string stage = "interplay[" + std::to_string(k) + "]";
    const auto inputs = load_probe_inputs(cfg, k);
    if (!inputs.has_generations) return;

    const std::string input_hash = sha256_hex(
        "interplay:" + file_sha256((tdir / "profiles.csv").string()));
    if (manifest.up_to_date(stage, input_hash, tdir)) continue;

    const auto profiles = read_profiles_csv(tdir / "profiles.csv");
    const auto behavior = emt_by_attribute(corpus, inputs.generation_scores);

    std::ostringstream out;
    out << "scenario,layer,axis,split,rho,n_units\n";
    for (auto scenario : cfg.scenarios) {
      std::map<std::string, InformationProfile> units;
      std::map<std::string, double> behavior_units;
      for (const auto& p : profiles) {
        if (p.scenario != scenario) continue;
        const std::string key{attribute_key(p.attribute)};
        if (behavior.count(key)) {
          units[key] = p;
          behavior_units[key] = behavior.at(key);
        }
      }
      if (units.empty()) continue;
      const auto n_layers = units.begin()->second.mean_s.size();
      for (std::size_t l = 0; l < n_layers; ++l) {
        std::string rho = "NA";
        if (units.size() >= 3) {
          try {
            rho = fmt(interplay(units, behavior_units, static_cast<int>(l)));
          } catch (const std::invalid_argument&) {
            rho = "NA";  // zero variance across units
          }
        }
        out << scenario_name(scenario) << ',' << l << ",attributes,all," << rho
            << ',' << units.size() << '\n';
      }
    }
    write_file(tdir / "interplay.csv", out.str());
    const std::string prefix = cfg.templates.size() > 1
                                   ? "template_" + std::to_string(k) + "/"
                                   : std::string();
    manifest.record(stage, input_hash, {prefix + "interplay.csv"},
                    fs::path(cfg.output_dir), cfg.record_timestamps);
  }
}

void run_intervene(const RunConfig& cfg, Manifest& manifest) {
  if (cfg.intervention_layers.empty() || cfg.model_source != "tinylm") return;
  const Corpus corpus = require_scored_corpus(cfg);
  const fs::path out_dir(cfg.output_dir);

  std::string desc = "intervene:" +
                     file_sha256(scored_corpus_path(cfg).string()) + ":" +
                     tinylm_desc(cfg.tinylm) + ":" +
                     generation_desc(cfg.generation);
  for (int l : cfg.intervention_layers) desc += ":" + std::to_string(l);
  const std::string input_hash = sha256_hex(desc);
  if (manifest.up_to_date("intervene", input_hash, out_dir)) return;

  const auto world = make_synthetic_world(cfg.tinylm);
  const TinyLM lm(world.lm_config);
  const auto scorer = make_scorer(cfg);

  std::vector<std::pair<std::string, std::vector<int>>> prompts;
  for (const auto& r : corpus.records()) {
    prompts.emplace_back(r.id, world.vocab.encode(r.prompt_text));
  }
  GenerationConfig gen_cfg = cfg.generation;
  gen_cfg.seed = mix_seed(cfg.seed, stable_hash("intervene"));

  const auto report =
      intervention_experiment(lm, prompts, *scorer, world.vocab, gen_cfg,
                              cfg.intervention_layers, cfg.attributes);

  std::ostringstream out;
  out << "skipped_layer,baseline_emt,intervened_emt,delta_emt";
  for (auto a : cfg.attributes) out << ",delta_" << attribute_key(a);
  out << '\n';
  for (const auto& row : report.rows) {
    out << row.skipped_layer << ',' << fmt(report.baseline_emt) << ','
        << fmt(row.intervened_emt) << ',' << fmt(row.delta_emt);
    for (auto a : cfg.attributes) {
      out << ',' << fmt_opt(row.per_attribute_delta[static_cast<std::size_t>(a)]);
    }
    out << '\n';
  }
  write_file(out_dir / "intervention.csv", out.str());
  manifest.record("intervene", input_hash, {"intervention.csv"}, out_dir,
                  cfg.record_timestamps);
}

void run_template_variance(const RunConfig& cfg, Manifest& manifest) {
  if (cfg.templates.size() < 2) return;
  const fs::path out_dir(cfg.output_dir);

  std::string desc = "template_variance";
  for (std::size_t k = 0; k < cfg.templates.size(); ++k) {
    desc += ":" + file_sha256((template_dir(cfg, k) / "behavior.csv").string());
  }
  const std::string input_hash = sha256_hex(desc);
  if (manifest.up_to_date("template_variance", input_hash, out_dir)) return;

  // Mean EMT per attribute per template (all prompts) plus cross-template
  // variance; same for per-layer Input-scenario information strength.
  std::ostringstream out;
  out << "metric,key";
  for (std::size_t k = 0; k < cfg.templates.size(); ++k) {
    out << ",template_" << k;
  }
  out << ",variance\n";

  const Corpus corpus = require_scored_corpus(cfg);
  for (auto a : kAllAttributes) {
    std::vector<double> values;
    for (std::size_t k = 0; k < cfg.templates.size(); ++k) {
      const auto gens =
          read_generations(template_dir(cfg, k) / "generations.jsonl").scores;
      const auto by_attr = emt_by_attribute(corpus, gens);
      values.push_back(by_attr.at(std::string(attribute_key(a))));
    }
    out << "mean_emt," << attribute_key(a);
    for (double v : values) out << ',' << fmt(v);
    const double sd = stddev(values);
    out << ',' << fmt(sd * sd) << '\n';
  }

  std::vector<std::vector<InformationProfile>> all_profiles;
  for (std::size_t k = 0; k < cfg.templates.size(); ++k) {
    all_profiles.push_back(read_profiles_csv(template_dir(cfg, k) / "profiles.csv"));
  }
  if (!all_profiles.empty() && !all_profiles.front().empty()) {
    const auto& first = all_profiles.front().front();
    for (std::size_t l = 0; l < first.mean_s.size(); ++l) {
      std::vector<double> values;
      for (const auto& profiles : all_profiles) {
        values.push_back(profiles.front().mean_s[l]);
      }
      out << "mean_s_" << scenario_name(first.scenario) << '_'
          << attribute_key(first.attribute) << ",layer_" << l;
      for (double v : values) out << ',' << fmt(v);
      const double sd = stddev(values);
      out << ',' << fmt(sd * sd) << '\n';
    }
  }
  write_file(out_dir / "template_variance.csv", out.str());
  manifest.record("template_variance", input_hash, {"template_variance.csv"},
                  out_dir, cfg.record_timestamps);
}

}  // namespace

void stage_score(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_score(cfg, manifest);
}
void stage_generate(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_generate(cfg, manifest);
}
void stage_probe(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_probe(cfg, manifest);
}
void stage_behavior(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_behavior(cfg, manifest);
}
void stage_interplay(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_interplay(cfg, manifest);
}
void stage_intervene(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  run_intervene(cfg, manifest);
}

std::string cmd_pipeline(const RunConfig& cfg) {
  auto manifest = Manifest::open(cfg.output_dir);
  struct Stage {
    const char* name;
    void (*fn)(const RunConfig&, Manifest&);
  };
  const Stage stages[] = {
      {"score", run_score},           {"generate", run_generate},
      {"probe", run_probe},           {"behavior", run_behavior},
      {"interplay", run_interplay},   {"intervene", run_intervene},
      {"template_variance", run_template_variance},
  };
  for (const auto& stage : stages) {
    try {
      stage.fn(cfg, manifest);
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + std::string(stage.name) +
                               " failed: " + e.what());
    }
  }
  return cfg.output_dir;
}

std::vector<ValidationRow> cmd_validate(const RunConfig& cfg) {
  const Corpus corpus = require_scored_corpus(cfg);
  const auto inputs = load_probe_inputs(cfg, 0);

  std::vector<int> layers = cfg.layers;
  if (layers.empty()) {
    for (int l = 0; l < inputs.manifest.n_layers; ++l) layers.push_back(l);
  }

  std::vector<ValidationRow> rows;
  for (auto scenario : usable_scenarios(cfg, inputs)) {
    for (auto attribute : cfg.attributes) {
      for (int layer : layers) {
        const auto ds =
            assemble_probe_dataset(inputs.records, corpus,
                                   inputs.generation_scores, scenario,
                                   attribute, layer);
        const auto sel = selectivity(ds, cfg.folds, cfg.train);
        const auto mdl = mdl_compression(ds, cfg.train);
        ValidationRow row;
        row.scenario = scenario;
        row.attribute = attribute;
        row.layer = layer;
        row.s_true = sel.s_true.value_or(0.0);
        row.s_shuffled = sel.s_shuffled.value_or(0.0);
        row.selectivity_value = sel.selectivity.value_or(0.0);
        row.compression = mdl.compression;
        row.flagged = row.selectivity_value < 0.2 || row.compression < 1.05;
        rows.push_back(row);
      }
    }
  }

  std::ostringstream out;
  out << "scenario,attribute,layer,s_true,s_shuffled,selectivity,compression,"
         "flag\n";
  for (const auto& r : rows) {
    out << scenario_name(r.scenario) << ',' << attribute_key(r.attribute)
        << ',' << r.layer << ',' << fmt(r.s_true) << ',' << fmt(r.s_shuffled)
        << ',' << fmt(r.selectivity_value) << ',' << fmt(r.compression) << ','
        << (r.flagged ? "untrusted" : "ok") << '\n';
  }
  write_file(fs::path(cfg.output_dir) / "validation.csv", out.str());
  return rows;
}

void cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path report = dir / "report";
  const char* required[] = {"profiles.csv", "region_maxima.csv"};
  for (const char* f : required) {
    if (!fs::exists(dir / f)) {
      throw std::runtime_error("cmd_report: run incomplete, missing stage probe (" +
                               std::string(f) + ")");
    }
  }
  fs::create_directories(report);
  // Plot-ready re-emissions with fixed schemas and deterministic ordering.
  write_file(report / "fig_profiles.csv", read_file(dir / "profiles.csv"));
  write_file(report / "fig_region_maxima.csv",
             read_file(dir / "region_maxima.csv"));
  if (fs::exists(dir / "behavior.csv")) {
    write_file(report / "fig_behavior.csv", read_file(dir / "behavior.csv"));
  }
  if (fs::exists(dir / "interplay.csv")) {
    write_file(report / "fig_interplay.csv", read_file(dir / "interplay.csv"));
  }
  if (fs::exists(dir / "intervention.csv")) {
    write_file(report / "fig_intervention.csv",
               read_file(dir / "intervention.csv"));
  }
}

}  // namespace alprobe
