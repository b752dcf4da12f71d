#include "alprobe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "alprobe/scoring.hpp"
#include "alprobe/stats.hpp"
#include "alprobe/text.hpp"

namespace alprobe {

using nlohmann::json;

Corpus::Corpus(std::vector<PromptRecord> records, std::string provenance)
    : records_(std::move(records)), provenance_(std::move(provenance)) {
  std::unordered_set<std::string> ids;
  for (const auto& r : records_) {
    if (r.prompt_text.empty()) {
      throw std::invalid_argument("empty prompt text for record " + r.id);
    }
    if (!ids.insert(r.id).second) {
      throw std::invalid_argument("duplicate record id: " + r.id);
    }
  }
}

const PromptRecord* Corpus::find(const std::string& id) const {
  for (const auto& r : records_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

namespace {

ToxicityVector parse_scores(const json& obj, int line_no) {
  std::array<double, kNumAttributes> scores{};
  for (auto a : kAllAttributes) {
    const std::string key{attribute_key(a)};
    if (!obj.contains(key)) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": missing attribute key " + key);
    }
    scores[static_cast<std::size_t>(a)] = obj.at(key).get<double>();
  }
  try {
    return ToxicityVector(scores);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " +
                             e.what());
  }
}

json scores_to_json(const ToxicityVector& v) {
  json obj = json::object();
  for (auto a : kAllAttributes) {
    obj[std::string(attribute_key(a))] = v[a];
  }
  return obj;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<PromptRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed record: " + e.what());
    }
    PromptRecord r;
    try {
      r.id = obj.at("id").get<std::string>();
      r.prompt_text = obj.at("prompt").get<std::string>();
      if (obj.contains("continuation") && !obj.at("continuation").is_null()) {
        r.continuation_text = obj.at("continuation").get<std::string>();
      }
    } catch (const json::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed record: " + e.what());
    }
    r.t_input = parse_scores(obj.at("t_i"), line_no);
    if (obj.contains("t_c") && !obj.at("t_c").is_null()) {
      r.t_continuation = parse_scores(obj.at("t_c"), line_no);
    }
    records.push_back(std::move(r));
  }
  return Corpus(std::move(records), path);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& r : corpus.records()) {
    json obj;
    obj["id"] = r.id;
    obj["prompt"] = r.prompt_text;
    obj["continuation"] =
        r.continuation_text.empty() ? json() : json(r.continuation_text);
    obj["t_i"] = scores_to_json(r.t_input);
    obj["t_c"] = r.t_continuation ? scores_to_json(*r.t_continuation) : json();
    out << obj.dump() << '\n';
  }
}

std::vector<double> attribute_scores(const Corpus& corpus, AttributeId a) {
  std::vector<double> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records()) out.push_back(r.t_input[a]);
  return out;
}

Corpus subsample(const Corpus& corpus, std::size_t target_size, double alpha,
                 double step_fraction, std::size_t max_rejects,
                 std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("subsample: empty corpus");
  if (target_size == 0) throw std::invalid_argument("subsample: target_size == 0");
  if (target_size > corpus.size()) {
    throw std::invalid_argument("subsample: target_size exceeds corpus size");
  }
  if (alpha <= 0.0 || alpha >= 1.0 || step_fraction <= 0.0 ||
      step_fraction >= 1.0) {
    throw std::invalid_argument("subsample: alpha and step_fraction in (0,1)");
  }
  if (target_size == corpus.size()) return corpus;

  std::array<std::vector<double>, kNumAttributes> full_scores;
  for (auto a : kAllAttributes) {
    full_scores[static_cast<std::size_t>(a)] = attribute_scores(corpus, a);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> current(corpus.size());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;

  auto passes = [&](const std::vector<std::size_t>& subset) {
    std::vector<double> scores(subset.size());
    for (auto a : kAllAttributes) {
      const auto& full = full_scores[static_cast<std::size_t>(a)];
      for (std::size_t i = 0; i < subset.size(); ++i) scores[i] = full[subset[i]];
      if (ks_two_sample(scores, full).p_value < alpha) return false;
    }
    return true;
  };

  std::size_t rejects = 0;
  while (current.size() > target_size && rejects < max_rejects) {
    std::size_t n_remove = static_cast<std::size_t>(
        step_fraction * static_cast<double>(current.size()));
    n_remove = std::max<std::size_t>(n_remove, 1);
    n_remove = std::min(n_remove, current.size() - target_size);

    // Propose: drop n_remove positions chosen without replacement.
    std::vector<std::size_t> pool = current;
    for (std::size_t i = 0; i < n_remove; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<std::size_t> proposal(pool.begin() +
                                          static_cast<std::ptrdiff_t>(n_remove),
                                      pool.end());
    std::sort(proposal.begin(), proposal.end());

    if (passes(proposal)) {
      current = std::move(proposal);
      rejects = 0;
    } else {
      ++rejects;
    }
  }

  std::vector<PromptRecord> records;
  records.reserve(current.size());
  for (std::size_t idx : current) records.push_back(corpus[idx]);
  return Corpus(std::move(records), corpus.provenance() + " (subsampled)");
}

WordSensitivityResult word_sensitivity(const PromptRecord& record,
                                       const Scorer& scorer,
                                       AttributeId attribute) {
  const auto words = tokenize(record.prompt_text);
  if (words.empty()) {
    throw std::invalid_argument("word_sensitivity: prompt has no words: " +
                                record.id);
  }
  WordSensitivityResult out;
  out.attribute = attribute;
  out.prompt_score = scorer.score_text(record.prompt_text)[attribute];
  out.max_word = words.front();
  out.max_word_score = scorer.score_text(words.front())[attribute];
  for (std::size_t i = 1; i < words.size(); ++i) {
    const double s = scorer.score_text(words[i])[attribute];
    if (s > out.max_word_score) {  // ties keep first occurrence
      out.max_word_score = s;
      out.max_word = words[i];
    }
  }
  out.zeta = out.max_word_score - out.prompt_score;
  return out;
}

AttributeCorrelationMatrix attribute_correlation_matrix(const Corpus& corpus) {
  if (corpus.size() < 3) {
    throw std::invalid_argument(
        "attribute_correlation_matrix: need >= 3 records");
  }
  AttributeCorrelationMatrix m;
  m.values.setZero();
  std::array<std::vector<double>, kNumAttributes> cols;
  for (auto a : kAllAttributes) {
    const auto i = static_cast<std::size_t>(a);
    cols[i] = attribute_scores(corpus, a);
    m.defined[i] = stddev(cols[i]) > 0.0;
  }
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    for (std::size_t j = 0; j < kNumAttributes; ++j) {
      if (i == j) {
        m.values(i, j) = 1.0;
      } else if (m.defined[i] && m.defined[j]) {
        m.values(i, j) = pearson(cols[i], cols[j]).value();
      }
    }
  }
  return m;
}

SplitResult split_by_toxicity(const Corpus& corpus, AttributeId attribute,
                              double threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw std::invalid_argument("split_by_toxicity: threshold outside [0,1]");
  }
  std::vector<PromptRecord> toxic, not_toxic;
  for (const auto& r : corpus.records()) {
    (r.t_input[attribute] >= threshold ? toxic : not_toxic).push_back(r);
  }
  return {Corpus(std::move(toxic), corpus.provenance()),
          Corpus(std::move(not_toxic), corpus.provenance())};
}

std::array<AttributeSummary, kNumAttributes> summary_stats(const Corpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("summary_stats: empty corpus");
  std::array<AttributeSummary, kNumAttributes> out{};
  for (auto a : kAllAttributes) {
    auto& s = out[static_cast<std::size_t>(a)];
    const auto scores = attribute_scores(corpus, a);
    s.mean_t_input = mean(scores);
    s.std_t_input = stddev(scores);
    std::vector<double> ti, tc;
    for (const auto& r : corpus.records()) {
      if (r.t_continuation) {
        ti.push_back(r.t_input[a]);
        tc.push_back((*r.t_continuation)[a]);
      }
    }
    s.n_paired = ti.size();
    if (ti.size() >= 3) s.corr_input_continuation = pearson(ti, tc);
  }
  return out;
}

}  // namespace alprobe
