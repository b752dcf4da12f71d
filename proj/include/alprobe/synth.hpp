#ifndef ALPROBE_SYNTH_HPP
#define ALPROBE_SYNTH_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "alprobe/corpus.hpp"
#include "alprobe/scoring.hpp"
#include "alprobe/tinylm.hpp"

namespace alprobe {

// Fixed word <-> id table covering the planted lexicon, the completion
// prompt templates and filler words.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> words);

  int id_of(const std::string& word) const;
  const std::string& word_of(int id) const;
  int size() const { return static_cast<int>(words_.size()); }

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// A self-contained desk-scale setup: vocabulary, scoring lexicon and the
// model config with the planted token ids filled in.
struct SyntheticWorld {
  Vocab vocab;
  Lexicon lexicon;
  TinyLMConfig lm_config;
};

SyntheticWorld make_synthetic_world(const TinyLMConfig& base = {});

// Prompts with varying planted-word density per attribute; t_I and t_C come
// from the world's lexicon scorer.
Corpus make_synthetic_corpus(const SyntheticWorld& world, std::size_t n_prompts,
                             std::uint64_t seed);

}  // namespace alprobe

#endif  // ALPROBE_SYNTH_HPP
