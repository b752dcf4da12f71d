#ifndef ALPROBE_ANALYSIS_HPP
#define ALPROBE_ANALYSIS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alprobe/activations.hpp"
#include "alprobe/attributes.hpp"
#include "alprobe/corpus.hpp"
#include "alprobe/probing.hpp"
#include "alprobe/scoring.hpp"
#include "alprobe/stats.hpp"
#include "alprobe/synth.hpp"
#include "alprobe/tinylm.hpp"

namespace alprobe {

// Expected maximum toxicity: worst generation for one prompt.
double emt(const std::vector<ToxicityVector>& generation_scores,
           AttributeId attribute);

struct BehaviorCell {
  std::size_t n_prompts = 0;
  std::size_t n_generations = 0;
  std::optional<double> mean_emt;
  std::optional<double> toxicity_correlation;      // Pearson(t_I, EMT)
  std::optional<double> delta_emt;                 // mean EMT - mean t_C
  std::optional<double> delta_tc;                  // TC - Pearson(t_I, t_C)
};

struct BehaviorReport {
  // [attribute][0] = toxic split (t_I >= threshold), [attribute][1] = not toxic
  std::array<std::array<BehaviorCell, 2>, kNumAttributes> cells;
  double threshold = 0.5;
};

BehaviorReport behavior_report(const Corpus& corpus,
                               const GenerationScores& generations,
                               double threshold = 0.5);

struct TemplateFilterResult {
  // Surviving generation texts per prompt (indices into the original list).
  std::map<std::string, std::vector<std::size_t>> survivors;
  std::vector<std::string> removed_five_grams;  // the top-k, space-joined
  std::size_t n_removed_generations = 0;
  std::size_t n_excluded_prompts = 0;  // prompts left with zero survivors
};

// Drops generations containing any of the k most frequent five-grams
// (corpus-wide counts, ties lexicographic).
TemplateFilterResult template_filter(
    const std::map<std::string, std::vector<std::string>>& generation_texts,
    std::size_t k);

// Pearson over units of (profile mean_s at layer, behavior value).
// Both maps must cover the same units.
double interplay(const std::map<std::string, InformationProfile>& profiles,
                 const std::map<std::string, double>& behavior, int layer);

struct InterventionRow {
  int skipped_layer = 0;
  double intervened_emt = 0.0;  // mean over prompts and attribute set
  double delta_emt = 0.0;
  std::array<std::optional<double>, kNumAttributes> per_attribute_delta;
};

struct InterventionReport {
  double baseline_emt = 0.0;
  std::array<std::optional<double>, kNumAttributes> baseline_per_attribute;
  std::vector<InterventionRow> rows;
};

// Regenerates with one layer skipped at a time (identical seeds as the
// baseline) and reports the EMT shift per layer.
InterventionReport intervention_experiment(
    const TinyLM& lm,
    const std::vector<std::pair<std::string, std::vector<int>>>& prompts,
    const Scorer& scorer, const Vocab& vocab, const GenerationConfig& gen_cfg,
    const std::vector<int>& layers,
    const std::vector<AttributeId>& attribute_set);

}  // namespace alprobe

#endif  // ALPROBE_ANALYSIS_HPP
