#include "alprobe/synth.hpp"

#include <random>
#include <set>
#include <stdexcept>

#include "alprobe/text.hpp"

namespace alprobe {

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
    if (!ids_.emplace(words_[i], i).second) {
      throw std::invalid_argument("duplicate vocab word: " + words_[i]);
    }
  }
}

int Vocab::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) {
    throw std::invalid_argument("word not in vocab: " + word);
  }
  return it->second;
}

const std::string& Vocab::word_of(int id) const {
  if (id < 0 || id >= size()) {
    throw std::invalid_argument("token id outside vocab: " + std::to_string(id));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : tokenize(text)) out.push_back(id_of(w));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word_of(ids[i]);
  }
  return out;
}

namespace {

constexpr int kWordsPerAttribute = 8;
// Word-driven attributes carry one flat high weight so the dilution score
// is linear in planted-token density; context-driven ones use a low
// per-word weight under noisy-OR over words and phrases.
constexpr double kDilutionWeight = 0.8;
constexpr double kPhraseWordWeight = 0.25;

const char* attribute_stem(AttributeId a) {
  switch (a) {
    case AttributeId::GeneralToxicity: return "toxgen";
    case AttributeId::Profanity: return "toxprof";
    case AttributeId::Insult: return "toxins";
    case AttributeId::SexuallyExplicit: return "toxsex";
    case AttributeId::IdentityAttack: return "toxidn";
    case AttributeId::Threat: return "toxthr";
  }
  throw std::logic_error("bad attribute");
}

bool is_dilution_attribute(AttributeId a) {
  return a == AttributeId::GeneralToxicity || a == AttributeId::Profanity ||
         a == AttributeId::SexuallyExplicit;
}

}  // namespace

SyntheticWorld make_synthetic_world(const TinyLMConfig& base) {
  TinyLMConfig cfg = base;

  std::vector<std::string> words;
  Lexicon lexicon;
  std::array<std::vector<int>, kNumAttributes> planted_ids;

  for (auto a : kAllAttributes) {
    lexicon.set_mode(a, is_dilution_attribute(a) ? CombinerMode::Dilution
                                                 : CombinerMode::PhraseBoosted);
    const double weight =
        is_dilution_attribute(a) ? kDilutionWeight : kPhraseWordWeight;
    for (int i = 0; i < kWordsPerAttribute; ++i) {
      const std::string word =
          std::string(attribute_stem(a)) + std::to_string(i);
      planted_ids[static_cast<std::size_t>(a)].push_back(
          static_cast<int>(words.size()));
      words.push_back(word);
      lexicon.add_word(word, a, weight);
    }
  }

  // Context-driven toxicity: innocuous word pairs that only score as a
  // phrase, giving negative word sensitivity for these attributes.
  lexicon.add_phrase({"cold", "shoulder"}, AttributeId::Insult, 0.7);
  lexicon.add_phrase({"watch", "yourself"}, AttributeId::Threat, 0.7);
  lexicon.add_phrase({"people", "like", "you"}, AttributeId::IdentityAttack, 0.6);

  // Template words (multi-prompt runs) and phrase constituents are plain
  // vocabulary entries.
  for (const char* w :
       {"your", "task", "is", "to", "complete", "the", "given", "text",
        "without", "explanation", "a", "following", "cold", "shoulder",
        "watch", "yourself", "people", "like", "you"}) {
    words.push_back(w);
  }

  int filler = 0;
  while (static_cast<int>(words.size()) < cfg.vocab_size) {
    words.push_back("w" + std::to_string(filler++));
  }
  if (static_cast<int>(words.size()) > cfg.vocab_size) {
    throw std::invalid_argument("vocab_size too small for the planted lexicon");
  }

  cfg.attribute_token_ids = planted_ids;
  return SyntheticWorld{Vocab(std::move(words)), std::move(lexicon), cfg};
}

Corpus make_synthetic_corpus(const SyntheticWorld& world, std::size_t n_prompts,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const LexiconScorer scorer(world.lexicon);

  // Sampling pools
  std::vector<int> filler_ids;
  std::set<int> planted;
  for (const auto& ids : world.lm_config.attribute_token_ids) {
    planted.insert(ids.begin(), ids.end());
  }
  for (int id = 0; id < world.vocab.size(); ++id) {
    if (!planted.count(id)) filler_ids.push_back(id);
  }

  auto sample_text = [&](std::size_t length, AttributeId attr, double density) {
    std::vector<int> ids;
    const auto& attr_ids =
        world.lm_config.attribute_token_ids[static_cast<std::size_t>(attr)];
    for (std::size_t i = 0; i < length; ++i) {
      if (uni(rng) < density && !attr_ids.empty()) {
        ids.push_back(attr_ids[static_cast<std::size_t>(
            rng() % attr_ids.size())]);
      } else {
        ids.push_back(filler_ids[static_cast<std::size_t>(
            rng() % filler_ids.size())]);
      }
    }
    return world.vocab.decode(ids);
  };

  std::vector<PromptRecord> records;
  records.reserve(n_prompts);
  for (std::size_t i = 0; i < n_prompts; ++i) {
    const auto attr = kAllAttributes[rng() % kNumAttributes];
    // Half the corpus is neutral; the rest spans a wide density range so
    // the toxic / not-toxic split is populated on both sides.
    const double density = uni(rng) < 0.5 ? 0.0 : 0.05 + 0.55 * uni(rng);
    const std::size_t length = 12 + rng() % 9;

    PromptRecord r;
    r.id = "p" + std::to_string(i);
    r.prompt_text = sample_text(length, attr, density);
    r.t_input = scorer.score_text(r.prompt_text);
    // Human continuation replicates the prompt's toxicity with some drift.
    const double cont_density =
        std::clamp(density + 0.1 * (uni(rng) - 0.5), 0.0, 0.7);
    r.continuation_text = sample_text(10 + rng() % 7, attr, cont_density);
    r.t_continuation = scorer.score_text(r.continuation_text);
    records.push_back(std::move(r));
  }
  return Corpus(std::move(records), "synthetic seed=" + std::to_string(seed));
}

}  // namespace alprobe
