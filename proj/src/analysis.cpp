#include "alprobe/analysis.hpp"

#include <algorithm>
#include <stdexcept>

#include "alprobe/text.hpp"

namespace alprobe {

double emt(const std::vector<ToxicityVector>& generation_scores,
           AttributeId attribute) {
  if (generation_scores.empty()) {
    throw std::invalid_argument("emt: no generations");
  }
  double m = generation_scores.front()[attribute];
  for (const auto& v : generation_scores) m = std::max(m, v[attribute]);
  return m;
}

BehaviorReport behavior_report(const Corpus& corpus,
                               const GenerationScores& generations,
                               double threshold) {
  std::vector<std::string> missing;
  for (const auto& r : corpus.records()) {
    auto it = generations.find(r.id);
    if (it == generations.end() || it->second.empty()) missing.push_back(r.id);
  }
  if (!missing.empty()) {
    std::string msg = "behavior_report: prompts without generations:";
    for (const auto& id : missing) msg += " " + id;
    throw std::runtime_error(msg);
  }

  BehaviorReport report;
  report.threshold = threshold;
  for (auto a : kAllAttributes) {
    for (int split = 0; split < 2; ++split) {
      const bool toxic_split = split == 0;
      std::vector<double> emts, t_in, t_cont;
      std::size_t n_gens = 0;
      bool all_have_continuation = true;
      for (const auto& r : corpus.records()) {
        const bool is_toxic = r.t_input[a] >= threshold;
        if (is_toxic != toxic_split) continue;
        const auto& gens = generations.at(r.id);
        emts.push_back(emt(gens, a));
        t_in.push_back(r.t_input[a]);
        n_gens += gens.size();
        if (r.t_continuation) {
          t_cont.push_back((*r.t_continuation)[a]);
        } else {
          all_have_continuation = false;
        }
      }

      auto& cell = report.cells[static_cast<std::size_t>(a)]
                              [static_cast<std::size_t>(split)];
      cell.n_prompts = emts.size();
      cell.n_generations = n_gens;
      if (emts.empty()) continue;
      cell.mean_emt = mean(emts);
      if (emts.size() >= 3) cell.toxicity_correlation = pearson(t_in, emts);
      if (all_have_continuation && !t_cont.empty()) {
        cell.delta_emt = *cell.mean_emt - mean(t_cont);
        if (t_cont.size() >= 3 && cell.toxicity_correlation) {
          if (auto human_tc = pearson(t_in, t_cont)) {
            cell.delta_tc = *cell.toxicity_correlation - *human_tc;
          }
        }
      }
    }
  }
  return report;
}

TemplateFilterResult template_filter(
    const std::map<std::string, std::vector<std::string>>& generation_texts,
    std::size_t k) {
  auto five_grams = [](const std::string& text) {
    std::vector<std::string> grams;
    const auto words = tokenize(text);
    for (std::size_t i = 0; i + 5 <= words.size(); ++i) {
      std::string g = words[i];
      for (std::size_t j = 1; j < 5; ++j) g += " " + words[i + j];
      grams.push_back(std::move(g));
    }
    return grams;
  };

  std::map<std::string, std::size_t> counts;
  for (const auto& [id, texts] : generation_texts) {
    for (const auto& t : texts) {
      for (auto& g : five_grams(t)) ++counts[g];
    }
  }

  // top-k by count, ties by lexicographic order (map iteration is sorted,
  // so stable_sort by count keeps lexicographic ties)
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  TemplateFilterResult result;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    result.removed_five_grams.push_back(ranked[i].first);
  }

  for (const auto& [id, texts] : generation_texts) {
    auto& kept = result.survivors[id];
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto grams = five_grams(texts[i]);
      const bool hit = std::any_of(
          result.removed_five_grams.begin(), result.removed_five_grams.end(),
          [&](const std::string& g) {
            return std::find(grams.begin(), grams.end(), g) != grams.end();
          });
      if (hit) {
        ++result.n_removed_generations;
      } else {
        kept.push_back(i);
      }
    }
    if (kept.empty()) {
      ++result.n_excluded_prompts;
      result.survivors.erase(id);
    }
  }
  return result;
}

double interplay(const std::map<std::string, InformationProfile>& profiles,
                 const std::map<std::string, double>& behavior, int layer) {
  std::string missing;
  for (const auto& [unit, _] : profiles) {
    if (!behavior.count(unit)) missing += " " + unit;
  }
  for (const auto& [unit, _] : behavior) {
    if (!profiles.count(unit)) missing += " " + unit;
  }
  if (!missing.empty()) {
    throw std::invalid_argument("interplay: unit mismatch:" + missing);
  }
  std::vector<double> s, b;
  for (const auto& [unit, profile] : profiles) {
    if (layer < 0 || layer >= static_cast<int>(profile.mean_s.size())) {
      throw std::invalid_argument("interplay: layer out of range for " + unit);
    }
    s.push_back(profile.mean_s[static_cast<std::size_t>(layer)]);
    b.push_back(behavior.at(unit));
  }
  if (s.size() < 3) throw std::invalid_argument("interplay: need >= 3 units");
  auto rho = pearson(s, b);
  if (!rho) throw std::invalid_argument("interplay: zero variance");
  return *rho;
}

namespace {

// Per-prompt EMT under one intervention, averaged over prompts.
struct EmtSummary {
  std::array<std::vector<double>, kNumAttributes> per_prompt;
};

EmtSummary run_emt(const TinyLM& lm,
                   const std::vector<std::pair<std::string, std::vector<int>>>& prompts,
                   const Scorer& scorer, const Vocab& vocab,
                   const GenerationConfig& gen_cfg,
                   const InterventionSpec& intervention,
                   const std::vector<AttributeId>& attribute_set) {
  EmtSummary out;
  for (const auto& [id, tokens] : prompts) {
    const auto sequences = lm.generate(tokens, gen_cfg, intervention);
    std::vector<ToxicityVector> scores;
    scores.reserve(sequences.size());
    for (const auto& seq : sequences) {
      scores.push_back(scorer.score_text(vocab.decode(seq)));
    }
    for (auto a : attribute_set) {
      out.per_prompt[static_cast<std::size_t>(a)].push_back(emt(scores, a));
    }
  }
  return out;
}

}  // namespace

InterventionReport intervention_experiment(
    const TinyLM& lm,
    const std::vector<std::pair<std::string, std::vector<int>>>& prompts,
    const Scorer& scorer, const Vocab& vocab, const GenerationConfig& gen_cfg,
    const std::vector<int>& layers,
    const std::vector<AttributeId>& attribute_set) {
  if (prompts.empty()) {
    throw std::invalid_argument("intervention_experiment: no prompts");
  }
  for (int l : layers) {
    if (l < 1 || l > lm.config().n_layers) {
      throw std::invalid_argument("intervention_experiment: layer outside model");
    }
  }

  const auto baseline =
      run_emt(lm, prompts, scorer, vocab, gen_cfg, {}, attribute_set);

  InterventionReport report;
  std::vector<double> base_means;
  for (auto a : attribute_set) {
    const auto& v = baseline.per_prompt[static_cast<std::size_t>(a)];
    const double m = mean(v);
    report.baseline_per_attribute[static_cast<std::size_t>(a)] = m;
    base_means.push_back(m);
  }
  report.baseline_emt = mean(base_means);

  for (int l : layers) {
    InterventionSpec spec;
    spec.skip_layers = {l};
    const auto intervened =
        run_emt(lm, prompts, scorer, vocab, gen_cfg, spec, attribute_set);

    InterventionRow row;
    row.skipped_layer = l;
    std::vector<double> means;
    for (auto a : attribute_set) {
      const auto idx = static_cast<std::size_t>(a);
      const double m = mean(intervened.per_prompt[idx]);
      row.per_attribute_delta[idx] = m - *report.baseline_per_attribute[idx];
      means.push_back(m);
    }
    row.intervened_emt = mean(means);
    row.delta_emt = row.intervened_emt - report.baseline_emt;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace alprobe
