#include "alprobe/scoring.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "alprobe/text.hpp"

// httplib is pulled in only here to keep the header light;
// CPPHTTPLIB_OPENSSL_SUPPORT comes from the build so every translation
// unit sees the same layout.
#include <httplib.h>

namespace alprobe {

using nlohmann::json;

std::vector<std::pair<std::string, ToxicityVector>> Scorer::score_words(
    const std::string& text) const {
  const auto words = tokenize(text);
  if (words.empty()) {
    throw std::invalid_argument("score_words: text has no words");
  }
  std::vector<std::pair<std::string, ToxicityVector>> out;
  out.reserve(words.size());
  for (const auto& w : words) out.emplace_back(w, score_text(w));
  return out;
}

Lexicon::Lexicon() {
  modes_.fill(CombinerMode::Dilution);
}

void Lexicon::add_word(const std::string& word, AttributeId attribute,
                       double weight) {
  if (weight < 0.0 || weight > 1.0) {
    throw std::invalid_argument("lexicon weight outside [0,1]");
  }
  words_[to_lower(word)][static_cast<std::size_t>(attribute)] = weight;
}

void Lexicon::add_phrase(const std::vector<std::string>& words,
                         AttributeId attribute, double weight) {
  if (words.size() < 2 || words.size() > 4) {
    throw std::invalid_argument("lexicon phrases span 2..4 words");
  }
  if (weight < 0.0 || weight > 1.0) {
    throw std::invalid_argument("lexicon weight outside [0,1]");
  }
  std::vector<std::string> key;
  key.reserve(words.size());
  for (const auto& w : words) key.push_back(to_lower(w));
  phrases_[key][static_cast<std::size_t>(attribute)] = weight;
}

void Lexicon::set_mode(AttributeId attribute, CombinerMode mode) {
  modes_[static_cast<std::size_t>(attribute)] = mode;
}

std::optional<double> Lexicon::word_weight(const std::string& word,
                                           AttributeId attribute) const {
  auto it = words_.find(word);
  if (it == words_.end()) return std::nullopt;
  return it->second[static_cast<std::size_t>(attribute)];
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
  Lexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string entry, attr, weight_str;
    if (!std::getline(ss, entry, '\t') || !std::getline(ss, attr, '\t') ||
        !std::getline(ss, weight_str)) {
      throw std::runtime_error("lexicon line " + std::to_string(line_no) +
                               ": expected entry<TAB>attribute<TAB>weight");
    }
    const AttributeId a = attribute_from_key(attr);
    const double w = std::stod(weight_str);
    if (entry.find('+') != std::string::npos) {
      std::vector<std::string> words;
      std::istringstream es(entry);
      std::string part;
      while (std::getline(es, part, '+')) words.push_back(part);
      lex.add_phrase(words, a, w);
    } else {
      lex.add_word(entry, a, w);
    }
  }
  return lex;
}

void Lexicon::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write lexicon file: " + path);
  std::vector<std::string> word_keys;
  // words_ is unordered; emit sorted for reproducible files
  std::map<std::string, std::array<std::optional<double>, kNumAttributes>>
      sorted(words_.begin(), words_.end());
  for (const auto& [word, weights] : sorted) {
    for (auto a : kAllAttributes) {
      if (auto w = weights[static_cast<std::size_t>(a)]) {
        out << word << '\t' << attribute_key(a) << '\t' << *w << '\n';
      }
    }
  }
  for (const auto& [words, weights] : phrases_) {
    std::string joined;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) joined += '+';
      joined += words[i];
    }
    for (auto a : kAllAttributes) {
      if (auto w = weights[static_cast<std::size_t>(a)]) {
        out << joined << '\t' << attribute_key(a) << '\t' << *w << '\n';
      }
    }
  }
}

ToxicityVector LexiconScorer::score_text(const std::string& text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) {
    throw std::invalid_argument("score_text: text has no words");
  }
  const double total = static_cast<double>(tokens.size());

  ToxicityVector out;
  for (auto a : kAllAttributes) {
    std::vector<double> word_hits;
    for (const auto& tok : tokens) {
      if (auto w = lexicon_.word_weight(tok, a)) word_hits.push_back(*w);
    }
    std::vector<double> phrase_hits;
    for (const auto& [phrase, weights] : lexicon_.phrases()) {
      const auto w = weights[static_cast<std::size_t>(a)];
      if (!w) continue;
      if (phrase.size() > tokens.size()) continue;
      for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
        if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + i)) {
          phrase_hits.push_back(*w);
        }
      }
    }

    double score = 0.0;
    switch (lexicon_.mode(a)) {
      case CombinerMode::Dilution: {
        if (!word_hits.empty()) {
          const double base = *std::max_element(word_hits.begin(),
                                                word_hits.end());
          const double density = static_cast<double>(word_hits.size()) / total;
          score = base * (0.4 + 0.6 * density);
        }
        break;
      }
      case CombinerMode::NoisyOr: {
        double keep = 1.0;
        for (double w : word_hits) keep *= (1.0 - w);
        score = 1.0 - keep;
        break;
      }
      case CombinerMode::PhraseBoosted: {
        double keep = 1.0;
        for (double w : word_hits) keep *= (1.0 - w);
        for (double w : phrase_hits) keep *= (1.0 - w);
        score = 1.0 - keep;
        break;
      }
    }
    out.set(a, std::clamp(score, 0.0, 1.0));
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Remote scorer

struct RemoteScorer::Impl {
  RemoteScorerConfig cfg;
  std::string api_key;
  std::string host;
  std::string path;

  mutable std::mutex mutex;  // serializes requests and cache appends
  mutable std::unordered_map<std::string, ToxicityVector> cache;
  mutable std::chrono::steady_clock::time_point last_request{};
  mutable std::atomic<std::size_t> requests{0};

  explicit Impl(RemoteScorerConfig c) : cfg(std::move(c)) {
    if (cfg.max_requests_per_second < 0.0 || cfg.max_retries < 0) {
      throw std::invalid_argument("remote scorer: rate and retries must be >= 0");
    }
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) {
      throw std::runtime_error("remote scorer: API key env var not set: " +
                               cfg.api_key_env);
    }
    api_key = key;

    auto pos = cfg.endpoint.find("://");
    if (pos == std::string::npos) {
      throw std::invalid_argument("remote scorer: endpoint must be a URL");
    }
    auto rest = cfg.endpoint.substr(pos + 3);
    auto slash = rest.find('/');
    host = cfg.endpoint.substr(0, pos + 3) +
           (slash == std::string::npos ? rest : rest.substr(0, slash));
    path = slash == std::string::npos ? "/" : rest.substr(slash);

    if (!cfg.cache_path.empty()) load_cache();
  }

  void load_cache() {
    std::ifstream in(cfg.cache_path);
    if (!in) return;  // no cache yet
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string hash;
      std::array<double, kNumAttributes> scores{};
      ss >> hash;
      for (auto& s : scores) ss >> s;
      if (ss) cache.emplace(hash, ToxicityVector(scores));
    }
  }

  void append_cache(const std::string& hash, const ToxicityVector& v) {
    if (cfg.cache_path.empty()) return;
    std::ofstream out(cfg.cache_path, std::ios::app);
    out << hash;
    for (auto a : kAllAttributes) out << '\t' << v[a];
    out << '\n';
  }

  void throttle() {
    if (cfg.max_requests_per_second <= 0.0) return;
    const auto interval = std::chrono::duration<double>(
        1.0 / cfg.max_requests_per_second);
    const auto now = std::chrono::steady_clock::now();
    if (last_request.time_since_epoch().count() != 0) {
      const auto next = last_request +
                        std::chrono::duration_cast<
                            std::chrono::steady_clock::duration>(interval);
      if (now < next) std::this_thread::sleep_until(next);
    }
    last_request = std::chrono::steady_clock::now();
  }

  ToxicityVector fetch(const std::string& text) {
    json body;
    body["text"] = text;
    json attrs = json::array();
    for (auto a : kAllAttributes) attrs.push_back(attribute_remote_name(a));
    body["attributes"] = attrs;
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
      throttle();
      httplib::Client client(host);
      client.set_default_headers({{"X-Api-Key", api_key}});
      requests.fetch_add(1);
      auto res = client.Post(path, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      json obj;
      try {
        obj = json::parse(res->body);
        ToxicityVector v;
        for (auto a : kAllAttributes) {
          v.set(a, obj.at(std::string(attribute_remote_name(a))).get<double>());
        }
        return v;
      } catch (const std::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    throw std::runtime_error("remote scorer: " + last_error);
  }

  ToxicityVector score(const std::string& text) {
    const std::string hash = sha256_hex(text);
    std::lock_guard<std::mutex> lock(mutex);
    if (auto it = cache.find(hash); it != cache.end()) return it->second;
    ToxicityVector v = fetch(text);
    cache.emplace(hash, v);
    append_cache(hash, v);
    return v;
  }
};

RemoteScorer::RemoteScorer(RemoteScorerConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(cfg))) {}

RemoteScorer::~RemoteScorer() = default;

ToxicityVector RemoteScorer::score_text(const std::string& text) const {
  std::string trimmed = text;
  if (tokenize(text).empty()) {
    throw std::invalid_argument("score_text: empty text");
  }
  return impl_->score(text);
}

std::vector<BatchEntry> RemoteScorer::score_batch(
    const std::vector<std::string>& texts) const {
  std::vector<BatchEntry> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      out[i].scores = score_text(texts[i]);
      out[i].ok = true;
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

std::size_t RemoteScorer::requests_issued() const {
  return impl_->requests.load();
}

std::vector<BatchEntry> remote_score_batch(const RemoteScorerConfig& cfg,
                                           const std::vector<std::string>& texts) {
  RemoteScorer scorer(cfg);  // throws before any request on bad config
  return scorer.score_batch(texts);
}

}  // namespace alprobe
