#ifndef ALPROBE_PROBING_HPP
#define ALPROBE_PROBING_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "alprobe/activations.hpp"

namespace alprobe {

struct Probe {
  Eigen::VectorXd weights;
  double bias = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const {
    return (features * weights).array() + bias;
  }
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.001;
  double dropout = 0.2;          // input-feature dropout, train only
  double warmup_fraction = 0.1;  // linear warmup, then constant
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double dev_fraction = 0.1;     // epoch selection split
};

struct FoldPlan {
  int n_folds = 4;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
};

// Stable 64-bit hash used for fold assignment and deterministic ordering.
std::uint64_t stable_hash(std::string_view s);

// Fold of a unit; rows of the same prompt share a fold (the id part before
// '#' decides).
int fold_of(const std::string& unit_id, int n_folds);

ProbeDataset dataset_rows(const ProbeDataset& ds,
                          const std::vector<Eigen::Index>& rows);

// Mini-batch AdamW on MSE with dropout and linear warmup; returns the
// epoch snapshot with the best Pearson on the held-out dev split.
Probe train_probe(const ProbeDataset& train_split, const TrainConfig& cfg,
                  std::uint64_t seed);

// Information strength s = Pearson(probe predictions, targets); nullopt on
// zero variance.
std::optional<double> evaluate_probe(const Probe& probe,
                                     const ProbeDataset& heldout);

struct InformationStrength {
  double mean_s = 0.0;
  double std_s = 0.0;  // population std over runs
  std::vector<double> runs;  // (fold, seed) order: fold-major per seed
};

InformationStrength information_strength(const ProbeDataset& dataset,
                                         const FoldPlan& plan,
                                         const TrainConfig& cfg);

struct RegionMaxima {
  double lower = 0.0;   // layers [0, L/3)
  double middle = 0.0;  // layers [L/3, 2L/3)
  double upper = 0.0;   // layers [2L/3, L]
};

struct InformationProfile {
  Scenario scenario = Scenario::Input;
  AttributeId attribute = AttributeId::GeneralToxicity;
  std::vector<double> mean_s;  // per layer, index order
  std::vector<double> std_s;
  RegionMaxima maxima;
};

RegionMaxima region_maxima(const std::vector<double>& mean_s);

InformationProfile layer_profile(const std::vector<ActivationRecord>& records,
                                 const Corpus& corpus,
                                 const GenerationScores& generation_scores,
                                 Scenario scenario, AttributeId attribute,
                                 const FoldPlan& plan, const TrainConfig& cfg);

struct SelectivityResult {
  std::optional<double> s_true;
  std::optional<double> s_shuffled;
  std::optional<double> selectivity;  // s_true - s_shuffled
};

// Control probing with a seed-deterministic target permutation applied
// before fold splitting. forced_permutation overrides the shuffle (test
// hook for the identity control).
SelectivityResult selectivity(const ProbeDataset& dataset, const FoldPlan& plan,
                              const TrainConfig& cfg,
                              const std::vector<Eigen::Index>* forced_permutation =
                                  nullptr);

struct MdlResult {
  double online_bits = 0.0;
  double uniform_bits = 0.0;   // N * log2(B)
  double compression = 0.0;    // uniform / online
  std::vector<double> fractions;
};

inline const std::vector<double> kDefaultMdlFractions = {
    0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.0625, 0.125, 0.25, 0.5, 1.0};

// Prequential code over targets discretized into 10 equal-width bins on
// [0,1]; the first block is coded uniformly, later blocks by a linear
// softmax probe trained on everything before them.
MdlResult mdl_compression(const ProbeDataset& dataset, const TrainConfig& cfg,
                          const std::vector<double>& fractions =
                              kDefaultMdlFractions);

}  // namespace alprobe

#endif  // ALPROBE_PROBING_HPP
