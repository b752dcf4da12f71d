#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "alprobe/analysis.hpp"

using namespace alprobe;

namespace {

ToxicityVector vec(double v) {
  ToxicityVector t;
  for (auto a : kAllAttributes) t.set(a, v);
  return t;
}

PromptRecord rec(const std::string& id, double t_i) {
  PromptRecord r;
  r.id = id;
  r.prompt_text = "prompt";
  r.t_input = vec(t_i);
  return r;
}

}  // namespace

TEST_CASE("emt basics and scan oracle") {
  CHECK(emt({vec(0.4)}, AttributeId::Threat) == 0.4);
  CHECK(emt({vec(0.0), vec(0.0)}, AttributeId::Insult) == 0.0);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<ToxicityVector> gens;
  double expect = 0.0;
  for (int i = 0; i < 25; ++i) {
    const double v = uni(rng);
    gens.push_back(vec(v));
    expect = std::max(expect, v);
  }
  CHECK(emt(gens, AttributeId::Profanity) == expect);
  CHECK_THROWS(emt({}, AttributeId::Threat));
}

TEST_CASE("emt is permutation invariant and monotone") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<ToxicityVector> gens;
  for (int i = 0; i < 10; ++i) gens.push_back(vec(uni(rng)));
  const double base = emt(gens, AttributeId::Insult);
  auto shuffled = gens;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(emt(shuffled, AttributeId::Insult) == base);
  shuffled.push_back(vec(0.01));
  CHECK(emt(shuffled, AttributeId::Insult) >= base);
}

TEST_CASE("behavior report: self-comparison and perfect replication") {
  std::vector<PromptRecord> rs;
  GenerationScores gens;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0, 1);
  for (int i = 0; i < 12; ++i) {
    auto r = rec("p" + std::to_string(i), uni(rng));
    r.continuation_text = "c";
    r.t_continuation = r.t_input;
    rs.push_back(r);
    // single generation identical to the human continuation -> EMT == t_C,
    // and EMT == t_I so TC == 1 within each split
    gens[r.id] = {r.t_input};
  }
  const auto report = behavior_report(Corpus(rs), gens);
  for (auto a : kAllAttributes) {
    for (int split = 0; split < 2; ++split) {
      const auto& c = report.cells[static_cast<std::size_t>(a)]
                                  [static_cast<std::size_t>(split)];
      if (c.n_prompts == 0) continue;
      REQUIRE(c.delta_emt.has_value());
      CHECK(*c.delta_emt == doctest::Approx(0.0).epsilon(1e-12));
      if (c.toxicity_correlation) {
        CHECK(*c.toxicity_correlation == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("behavior report matches a brute-force recomputation") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<PromptRecord> rs;
  GenerationScores gens;
  for (int i = 0; i < 30; ++i) {
    auto r = rec("p" + std::to_string(i), uni(rng));
    r.continuation_text = "c";
    r.t_continuation = vec(uni(rng));
    rs.push_back(r);
    auto& g = gens[r.id];
    for (int j = 0; j < 5; ++j) g.push_back(vec(uni(rng)));
  }
  const Corpus corpus(rs);
  const auto report = behavior_report(corpus, gens);

  const auto a = AttributeId::SexuallyExplicit;
  for (int split = 0; split < 2; ++split) {
    std::vector<double> emts, ti, tc;
    for (const auto& r : corpus.records()) {
      const bool toxic = r.t_input[a] >= 0.5;
      if (toxic != (split == 0)) continue;
      double m = 0.0;
      for (const auto& v : gens.at(r.id)) m = std::max(m, v[a]);
      emts.push_back(m);
      ti.push_back(r.t_input[a]);
      tc.push_back((*r.t_continuation)[a]);
    }
    const auto& cell = report.cells[static_cast<std::size_t>(a)]
                                   [static_cast<std::size_t>(split)];
    CHECK(cell.n_prompts == emts.size());
    if (emts.empty()) continue;
    CHECK(*cell.mean_emt == doctest::Approx(mean(emts)).epsilon(1e-12));
    CHECK(*cell.delta_emt ==
          doctest::Approx(mean(emts) - mean(tc)).epsilon(1e-12));
    if (emts.size() >= 3) {
      CHECK(*cell.toxicity_correlation ==
            doctest::Approx(*pearson(ti, emts)).epsilon(1e-12));
      CHECK(*cell.delta_tc ==
            doctest::Approx(*pearson(ti, emts) - *pearson(ti, tc))
                .epsilon(1e-12));
    }
  }

  // split sizes partition the corpus
  for (auto attr : kAllAttributes) {
    const auto& cells = report.cells[static_cast<std::size_t>(attr)];
    CHECK(cells[0].n_prompts + cells[1].n_prompts == corpus.size());
  }
}

TEST_CASE("behavior report lists prompts without generations") {
  std::vector<PromptRecord> rs = {rec("a", 0.1), rec("b", 0.9)};
  GenerationScores gens;
  gens["a"] = {vec(0.2)};
  CHECK_THROWS_WITH_AS(behavior_report(Corpus(rs), gens),
                       doctest::Contains("b"), std::runtime_error);
}

TEST_CASE("template filter: identity at k=0 and full removal") {
  std::map<std::string, std::vector<std::string>> texts;
  texts["p0"] = {"the boilerplate phrase is right here today",
                 "something completely different with other words"};
  texts["p1"] = {"the boilerplate phrase is right here again"};

  const auto none = template_filter(texts, 0);
  CHECK(none.n_removed_generations == 0);
  CHECK(none.n_excluded_prompts == 0);
  CHECK(none.survivors.at("p0").size() == 2);

  const auto one = template_filter(texts, 1);
  // "the boilerplate phrase is right" appears in both templated texts
  CHECK(one.n_removed_generations == 2);
  CHECK(one.n_excluded_prompts == 1);  // p1 has nothing left
  REQUIRE(one.survivors.count("p0") == 1);
  CHECK(one.survivors.at("p0") == std::vector<std::size_t>{1});
}

TEST_CASE("template filter survivor share on a planted 40% corpus") {
  std::map<std::string, std::vector<std::string>> texts;
  int total = 0, with_template = 0;
  for (int p = 0; p < 20; ++p) {
    auto& v = texts["p" + std::to_string(p)];
    for (int g = 0; g < 5; ++g) {
      ++total;
      if (g < 2) {  // 40% carry the template five-gram
        ++with_template;
        v.push_back("here is my answer to that plus unique" +
                    std::to_string(p) + "word" + std::to_string(g));
      } else {
        const std::string n = std::to_string(p * 10 + g);
        v.push_back("alpha" + n + " beta" + n + " gamma" + n + " delta" + n +
                    " eps" + n + " zeta" + n);  // all five-grams unique
      }
    }
  }
  const auto out = template_filter(texts, 1);
  CHECK(out.n_removed_generations == static_cast<std::size_t>(with_template));
  std::size_t survivors = 0;
  for (const auto& [id, kept] : out.survivors) survivors += kept.size();
  CHECK(survivors == static_cast<std::size_t>(total - with_template));
}

TEST_CASE("interplay correlation over units") {
  std::map<std::string, InformationProfile> profiles;
  std::map<std::string, double> behavior, inverted;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(0, 1);
  std::vector<double> s_values, b_values;
  for (int u = 0; u < 6; ++u) {
    const std::string name = "unit" + std::to_string(u);
    InformationProfile p;
    p.mean_s = {uni(rng), uni(rng), uni(rng)};
    p.std_s = {0, 0, 0};
    profiles[name] = p;
    behavior[name] = uni(rng);
  }
  // identical vectors -> rho = 1; negated -> rho = -1
  std::map<std::string, double> same, negated;
  for (const auto& [name, p] : profiles) {
    same[name] = p.mean_s[1];
    negated[name] = -p.mean_s[1];
  }
  CHECK(interplay(profiles, same, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(interplay(profiles, negated, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  // oracle against the stats module (maps iterate in sorted unit order)
  for (const auto& [name, p] : profiles) {
    s_values.push_back(p.mean_s[2]);
    b_values.push_back(behavior.at(name));
  }
  CHECK(interplay(profiles, behavior, 2) ==
        doctest::Approx(*pearson(s_values, b_values)).epsilon(1e-12));

  std::map<std::string, double> missing = behavior;
  missing.erase("unit3");
  CHECK_THROWS_WITH_AS(interplay(profiles, missing, 0),
                       doctest::Contains("unit3"), std::invalid_argument);
}

TEST_CASE("intervention experiment is deterministic and validates layers") {
  TinyLMConfig base;
  base.vocab_size = 96;
  base.d_model = 32;
  base.n_layers = 4;
  base.n_heads = 4;
  base.max_seq_len = 64;
  base.suppressor_layer = 2;
  const auto world = make_synthetic_world(base);
  const TinyLM lm(world.lm_config);
  const LexiconScorer scorer(world.lexicon);

  std::vector<std::pair<std::string, std::vector<int>>> prompts;
  const auto corpus = make_synthetic_corpus(world, 5, 1);
  for (const auto& r : corpus.records()) {
    prompts.emplace_back(r.id, world.vocab.encode(r.prompt_text));
  }
  GenerationConfig gen;
  gen.n_samples = 3;
  gen.max_new_tokens = 6;
  gen.seed = 17;
  const std::vector<AttributeId> attrs(kAllAttributes.begin(),
                                       kAllAttributes.end());

  const auto a = intervention_experiment(lm, prompts, scorer, world.vocab, gen,
                                         {1, 2}, attrs);
  const auto b = intervention_experiment(lm, prompts, scorer, world.vocab, gen,
                                         {1, 2}, attrs);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.baseline_emt == b.baseline_emt);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].delta_emt == b.rows[i].delta_emt);
    CHECK(a.rows[i].intervened_emt - a.rows[i].delta_emt ==
          doctest::Approx(a.baseline_emt).epsilon(1e-12));
  }

  CHECK_THROWS(intervention_experiment(lm, prompts, scorer, world.vocab, gen,
                                       {0}, attrs));
  CHECK_THROWS(intervention_experiment(lm, prompts, scorer, world.vocab, gen,
                                       {99}, attrs));
  const auto empty = intervention_experiment(lm, prompts, scorer, world.vocab,
                                             gen, {}, attrs);
  CHECK(empty.rows.empty());  // baseline only
}
