#include "alprobe/activations.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <stdexcept>

namespace alprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;

void put_f32_le(std::vector<unsigned char>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  buf.push_back(static_cast<unsigned char>(bits & 0xff));
  buf.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
  buf.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
  buf.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Input: return "Input";
    case Scenario::Forward: return "Forward";
    case Scenario::Output: return "Output";
    case Scenario::Backward: return "Backward";
  }
  throw std::logic_error("bad scenario");
}

Scenario scenario_from_name(std::string_view name) {
  if (name == "Input") return Scenario::Input;
  if (name == "Forward") return Scenario::Forward;
  if (name == "Output") return Scenario::Output;
  if (name == "Backward") return Scenario::Backward;
  throw std::invalid_argument("unknown scenario: " + std::string(name));
}

Eigen::VectorXf mean_pool(const Eigen::MatrixXf& token_states,
                          Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > token_states.rows() || begin >= end) {
    throw std::invalid_argument("mean_pool: empty or out-of-bounds span");
  }
  return token_states.middleRows(begin, end - begin).colwise().mean();
}

void write_dump(const std::vector<ActivationRecord>& records,
                const ActivationManifest& manifest, const std::string& dir) {
  if (records.size() != manifest.entries.size()) {
    throw std::invalid_argument("write_dump: records inconsistent with manifest");
  }
  fs::create_directories(dir);

  std::vector<unsigned char> buf;
  buf.reserve(records.size() * static_cast<std::size_t>(manifest.n_layers) *
              static_cast<std::size_t>(manifest.hidden_dim) * 4);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.prompt_id != manifest.entries[i].first ||
        r.generation_index != manifest.entries[i].second) {
      throw std::invalid_argument("write_dump: record order disagrees with manifest");
    }
    if (static_cast<int>(r.layers.size()) != manifest.n_layers) {
      throw std::invalid_argument("write_dump: layer count mismatch for " +
                                  r.prompt_id);
    }
    for (const auto& layer : r.layers) {
      if (layer.size() != manifest.hidden_dim) {
        throw std::invalid_argument("write_dump: hidden_dim mismatch for " +
                                    r.prompt_id);
      }
      for (Eigen::Index k = 0; k < layer.size(); ++k) {
        if (!std::isfinite(layer[k])) {
          throw std::invalid_argument("write_dump: non-finite value for " +
                                      r.prompt_id);
        }
        put_f32_le(buf, layer[k]);
      }
    }
  }

  json m;
  m["format_version"] = kFormatVersion;
  m["model_name"] = manifest.model_name;
  m["n_layers"] = manifest.n_layers;
  m["hidden_dim"] = manifest.hidden_dim;
  m["dtype"] = "float32-le";
  json entries = json::array();
  for (const auto& [id, gi] : manifest.entries) {
    entries.push_back(json::array({id, gi}));
  }
  m["entries"] = entries;

  std::ofstream mout(fs::path(dir) / "manifest.json");
  mout << m.dump(2) << '\n';
  std::ofstream bout(fs::path(dir) / "activations.bin", std::ios::binary);
  bout.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
}

std::pair<ActivationManifest, std::vector<ActivationRecord>> read_dump(
    const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  const fs::path bpath = fs::path(dir) / "activations.bin";
  std::ifstream min(mpath);
  if (!min) throw std::runtime_error("read_dump: missing " + mpath.string());
  json m = json::parse(min);
  if (m.value("format_version", -1) != kFormatVersion) {
    throw std::runtime_error("read_dump: unsupported format version");
  }

  ActivationManifest manifest;
  manifest.model_name = m.at("model_name").get<std::string>();
  manifest.n_layers = m.at("n_layers").get<int>();
  manifest.hidden_dim = m.at("hidden_dim").get<int>();
  if (manifest.n_layers <= 0 || manifest.hidden_dim <= 0) {
    throw std::runtime_error("read_dump: invalid manifest dimensions");
  }
  std::set<std::pair<std::string, int>> seen;
  for (const auto& e : m.at("entries")) {
    auto entry = std::make_pair(e.at(0).get<std::string>(), e.at(1).get<int>());
    if (!seen.insert(entry).second) {
      throw std::runtime_error("read_dump: duplicate manifest entry " +
                               entry.first);
    }
    manifest.entries.push_back(std::move(entry));
  }

  std::ifstream bin(bpath, std::ios::binary | std::ios::ate);
  if (!bin) throw std::runtime_error("read_dump: missing " + bpath.string());
  const std::size_t actual = static_cast<std::size_t>(bin.tellg());
  const std::size_t expected = manifest.entries.size() *
                               static_cast<std::size_t>(manifest.n_layers) *
                               static_cast<std::size_t>(manifest.hidden_dim) * 4;
  if (actual != expected) {
    throw std::runtime_error("read_dump: corrupt activations.bin, expected " +
                             std::to_string(expected) + " bytes, found " +
                             std::to_string(actual));
  }
  bin.seekg(0);
  std::vector<unsigned char> buf(actual);
  bin.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(actual));

  std::vector<ActivationRecord> records;
  records.reserve(manifest.entries.size());
  const unsigned char* p = buf.data();
  for (const auto& [id, gi] : manifest.entries) {
    ActivationRecord r;
    r.prompt_id = id;
    r.generation_index = gi;
    r.layers.resize(manifest.n_layers);
    for (int l = 0; l < manifest.n_layers; ++l) {
      r.layers[l].resize(manifest.hidden_dim);
      for (int k = 0; k < manifest.hidden_dim; ++k) {
        r.layers[l][k] = get_f32_le(p);
        p += 4;
      }
    }
    records.push_back(std::move(r));
  }
  return {std::move(manifest), std::move(records)};
}

ProbeDataset assemble_probe_dataset(const std::vector<ActivationRecord>& records,
                                    const Corpus& corpus,
                                    const GenerationScores& generation_scores,
                                    Scenario scenario, AttributeId attribute,
                                    int layer) {
  const bool wants_input =
      scenario == Scenario::Input || scenario == Scenario::Backward;

  std::map<std::string, double> t_input;
  for (const auto& r : corpus.records()) t_input[r.id] = r.t_input[attribute];

  // EMT per prompt, needed for Backward targets.
  std::map<std::string, double> emt_by_prompt;
  if (scenario == Scenario::Backward) {
    for (const auto& [id, gens] : generation_scores) {
      double m = 0.0;
      bool any = false;
      for (const auto& v : gens) {
        m = any ? std::max(m, v[attribute]) : v[attribute];
        any = true;
      }
      if (any) emt_by_prompt[id] = m;
    }
  }

  std::vector<std::string> missing;
  std::vector<const ActivationRecord*> selected;
  std::vector<double> targets;
  std::vector<std::string> unit_ids;

  for (const auto& r : records) {
    const bool is_input = r.generation_index < 0;
    if (is_input != wants_input) continue;
    if (layer < 0 || layer >= static_cast<int>(r.layers.size())) {
      throw std::invalid_argument("assemble_probe_dataset: layer out of range");
    }
    std::string unit_id = r.prompt_id;
    if (!is_input) unit_id += "#" + std::to_string(r.generation_index);

    double target = 0.0;
    bool found = true;
    switch (scenario) {
      case Scenario::Input:
      case Scenario::Forward: {
        auto it = t_input.find(r.prompt_id);
        if (it == t_input.end()) found = false;
        else target = it->second;
        break;
      }
      case Scenario::Output: {
        auto it = generation_scores.find(r.prompt_id);
        if (it == generation_scores.end() ||
            r.generation_index >= static_cast<int>(it->second.size())) {
          found = false;
        } else {
          target = it->second[static_cast<std::size_t>(r.generation_index)]
                       [attribute];
        }
        break;
      }
      case Scenario::Backward: {
        auto it = emt_by_prompt.find(r.prompt_id);
        if (it == emt_by_prompt.end()) found = false;
        else target = it->second;
        break;
      }
    }
    if (!found) {
      missing.push_back(unit_id);
      continue;
    }
    selected.push_back(&r);
    targets.push_back(target);
    unit_ids.push_back(std::move(unit_id));
  }

  if (!missing.empty()) {
    std::string msg = "assemble_probe_dataset: missing scores for:";
    for (const auto& id : missing) msg += " " + id;
    throw std::runtime_error(msg);
  }
  if (selected.empty()) {
    throw std::runtime_error("assemble_probe_dataset: no usable records for " +
                             std::string(scenario_name(scenario)));
  }

  ProbeDataset ds;
  ds.scenario = scenario;
  ds.attribute = attribute;
  ds.layer = layer;
  ds.unit_ids = std::move(unit_ids);
  ds.features.resize(static_cast<Eigen::Index>(selected.size()),
                     selected.front()->layers[layer].size());
  ds.targets.resize(static_cast<Eigen::Index>(selected.size()));
  for (std::size_t i = 0; i < selected.size(); ++i) {
    ds.features.row(static_cast<Eigen::Index>(i)) =
        selected[i]->layers[layer].cast<double>();
    ds.targets[static_cast<Eigen::Index>(i)] = targets[i];
  }
  return ds;
}

}  // namespace alprobe
