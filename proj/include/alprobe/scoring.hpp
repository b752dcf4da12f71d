#ifndef ALPROBE_SCORING_HPP
#define ALPROBE_SCORING_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "alprobe/attributes.hpp"

namespace alprobe {

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ToxicityVector score_text(const std::string& text) const = 0;
  // One vector per word of the tokenized text, each equal to
  // score_text(word); order preserved.
  virtual std::vector<std::pair<std::string, ToxicityVector>> score_words(
      const std::string& text) const;
};

enum class CombinerMode {
  Dilution,       // base * (0.4 + 0.6 * matched/total)
  NoisyOr,        // 1 - prod(1 - w_i) over matched words
  PhraseBoosted,  // noisy-OR over matched words and n-grams
};

// Word and n-gram weights per attribute, plus a combiner mode per attribute.
class Lexicon {
 public:
  Lexicon();

  void add_word(const std::string& word, AttributeId attribute, double weight);
  void add_phrase(const std::vector<std::string>& words, AttributeId attribute,
                  double weight);
  void set_mode(AttributeId attribute, CombinerMode mode);
  CombinerMode mode(AttributeId attribute) const {
    return modes_[static_cast<std::size_t>(attribute)];
  }

  std::optional<double> word_weight(const std::string& word,
                                    AttributeId attribute) const;
  const std::map<std::vector<std::string>,
                 std::array<std::optional<double>, kNumAttributes>>&
  phrases() const {
    return phrases_;
  }

  // File format: word_or_n+gram <TAB> attribute <TAB> weight, one per line.
  static Lexicon load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::unordered_map<std::string,
                     std::array<std::optional<double>, kNumAttributes>>
      words_;
  std::map<std::vector<std::string>,
           std::array<std::optional<double>, kNumAttributes>>
      phrases_;
  std::array<CombinerMode, kNumAttributes> modes_;
};

// Deterministic offline scorer over a lexicon.
class LexiconScorer : public Scorer {
 public:
  explicit LexiconScorer(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}
  ToxicityVector score_text(const std::string& text) const override;
  const Lexicon& lexicon() const { return lexicon_; }

 private:
  Lexicon lexicon_;
};

struct RemoteScorerConfig {
  std::string endpoint;          // e.g. http://localhost:8080/score
  std::string api_key_env;       // environment variable holding the key
  double max_requests_per_second = 1.0;  // 0 = unlimited
  int max_retries = 2;
  std::string cache_path;        // empty = in-memory cache only
};

struct BatchEntry {
  bool ok = false;
  ToxicityVector scores;
  std::string error;
};

// Client for a hosted toxicity scoring service. POSTs
// {"text": ..., "attributes": [...]} and expects an object mapping
// service attribute names to summary scores in [0,1].
class RemoteScorer : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerConfig cfg);
  ~RemoteScorer() override;

  ToxicityVector score_text(const std::string& text) const override;
  std::vector<BatchEntry> score_batch(const std::vector<std::string>& texts) const;

  std::size_t requests_issued() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<BatchEntry> remote_score_batch(const RemoteScorerConfig& cfg,
                                           const std::vector<std::string>& texts);

std::string sha256_hex(std::string_view data);

}  // namespace alprobe

#endif  // ALPROBE_SCORING_HPP
