#ifndef ALPROBE_ACTIVATIONS_HPP
#define ALPROBE_ACTIVATIONS_HPP

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "alprobe/attributes.hpp"
#include "alprobe/corpus.hpp"

namespace alprobe {

// Which pooled span predicts which toxicity score.
enum class Scenario { Input, Forward, Output, Backward };

std::string_view scenario_name(Scenario s);
Scenario scenario_from_name(std::string_view name);

struct ActivationManifest {
  std::string model_name;
  int n_layers = 0;    // hidden-state layers, embedding output = layer 0
  int hidden_dim = 0;
  // generation_index -1 marks an input-only entry (h_I); >= 0 is h_O of
  // that generation.
  std::vector<std::pair<std::string, int>> entries;
};

struct ActivationRecord {
  std::string prompt_id;
  int generation_index = -1;
  // One hidden_dim vector per layer for the present span (h_I when
  // generation_index == -1, h_O otherwise).
  std::vector<Eigen::VectorXf> layers;
};

// Arithmetic mean over the rows [begin, end) of per-token states.
Eigen::VectorXf mean_pool(const Eigen::MatrixXf& token_states,
                          Eigen::Index begin, Eigen::Index end);

// Dump = directory with manifest.json and activations.bin (row of
// n_layers * hidden_dim float32 little-endian values per entry, in
// manifest order, no padding).
void write_dump(const std::vector<ActivationRecord>& records,
                const ActivationManifest& manifest, const std::string& dir);

std::pair<ActivationManifest, std::vector<ActivationRecord>> read_dump(
    const std::string& dir);

struct ProbeDataset {
  Eigen::MatrixXd features;  // N x hidden_dim, one layer
  Eigen::VectorXd targets;   // N scores in [0,1]
  std::vector<std::string> unit_ids;
  Scenario scenario = Scenario::Input;
  AttributeId attribute = AttributeId::GeneralToxicity;
  int layer = 0;
};

// Per-prompt scored generations; index in the vector == generation_index.
using GenerationScores = std::map<std::string, std::vector<ToxicityVector>>;

ProbeDataset assemble_probe_dataset(const std::vector<ActivationRecord>& records,
                                    const Corpus& corpus,
                                    const GenerationScores& generation_scores,
                                    Scenario scenario, AttributeId attribute,
                                    int layer);

}  // namespace alprobe

#endif  // ALPROBE_ACTIVATIONS_HPP
