#ifndef ALPROBE_CORPUS_HPP
#define ALPROBE_CORPUS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "alprobe/attributes.hpp"

namespace alprobe {

class Scorer;

struct PromptRecord {
  std::string id;
  std::string prompt_text;
  ToxicityVector t_input;                    // t_I
  std::string continuation_text;             // may be empty
  std::optional<ToxicityVector> t_continuation;  // t_C, absent without human text
};

// Ordered record collection; ids unique, insertion order preserved.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<PromptRecord> records,
                  std::string provenance = {});

  const std::vector<PromptRecord>& records() const { return records_; }
  const std::string& provenance() const { return provenance_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const PromptRecord& operator[](std::size_t i) const { return records_[i]; }
  const PromptRecord* find(const std::string& id) const;

 private:
  std::vector<PromptRecord> records_;
  std::string provenance_;
};

// Line-delimited record file, one JSON object per line with keys
// id / prompt / continuation / t_i / t_c.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

// Iteratively removes a random step_fraction of the current subset and keeps
// the reduction only while every attribute's t_I distribution stays
// indistinguishable (two-sample KS, p >= alpha) from the full corpus.
// Stops at target_size or after max_rejects consecutive rejected proposals.
Corpus subsample(const Corpus& corpus, std::size_t target_size, double alpha,
                 double step_fraction, std::size_t max_rejects,
                 std::uint64_t seed);

struct WordSensitivityResult {
  AttributeId attribute;
  double zeta;  // max_word_score - prompt_score
  std::string max_word;
  double max_word_score;
  double prompt_score;
};

// zeta > 0: toxicity driven by an individual word; zeta < 0: contextual.
WordSensitivityResult word_sensitivity(const PromptRecord& record,
                                       const Scorer& scorer,
                                       AttributeId attribute);

struct AttributeCorrelationMatrix {
  Eigen::Matrix<double, 6, 6> values;
  std::array<bool, kNumAttributes> defined;  // false = zero-variance attribute
};

AttributeCorrelationMatrix attribute_correlation_matrix(const Corpus& corpus);

struct SplitResult {
  Corpus toxic;      // t_I[attribute] >= threshold
  Corpus not_toxic;
};

SplitResult split_by_toxicity(const Corpus& corpus, AttributeId attribute,
                              double threshold);

struct AttributeSummary {
  double mean_t_input = 0.0;
  double std_t_input = 0.0;
  std::optional<double> corr_input_continuation;  // Pearson(t_I, t_C)
  std::size_t n_paired = 0;
};

std::array<AttributeSummary, kNumAttributes> summary_stats(const Corpus& corpus);

std::vector<double> attribute_scores(const Corpus& corpus, AttributeId a);

}  // namespace alprobe

#endif  // ALPROBE_CORPUS_HPP
