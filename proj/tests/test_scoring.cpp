#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <httplib.h>
#include <json.hpp>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "alprobe/scoring.hpp"
#include "alprobe/text.hpp"

using namespace alprobe;
namespace fs = std::filesystem;

namespace {

Lexicon basic_lexicon() {
  Lexicon lex;
  lex.add_word("foo", AttributeId::GeneralToxicity, 0.5);
  lex.add_word("bar", AttributeId::GeneralToxicity, 0.5);
  lex.add_word("strong", AttributeId::GeneralToxicity, 0.9);
  return lex;
}

}  // namespace

TEST_CASE("lexicon scorer: no matches give an all-zero vector") {
  const LexiconScorer scorer(basic_lexicon());
  const auto v = scorer.score_text("completely neutral words here");
  for (auto a : kAllAttributes) CHECK(v[a] == 0.0);
}

TEST_CASE("noisy-or: two 0.5 words combine to 0.75") {
  Lexicon lex = basic_lexicon();
  lex.set_mode(AttributeId::GeneralToxicity, CombinerMode::NoisyOr);
  const LexiconScorer scorer(lex);
  CHECK(scorer.score_text("foo bar")[AttributeId::GeneralToxicity] ==
        doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("dilution: one 0.9 word among 10 tokens scores 0.414") {
  Lexicon lex = basic_lexicon();
  lex.set_mode(AttributeId::GeneralToxicity, CombinerMode::Dilution);
  const LexiconScorer scorer(lex);
  const auto v =
      scorer.score_text("strong w1 w2 w3 w4 w5 w6 w7 w8 w9");
  CHECK(v[AttributeId::GeneralToxicity] == doctest::Approx(0.414).epsilon(1e-12));
}

TEST_CASE("single lexicon word scores its weight in all three modes") {
  for (auto mode : {CombinerMode::Dilution, CombinerMode::NoisyOr,
                    CombinerMode::PhraseBoosted}) {
    Lexicon lex = basic_lexicon();
    lex.set_mode(AttributeId::GeneralToxicity, mode);
    const LexiconScorer scorer(lex);
    CHECK(scorer.score_text("strong")[AttributeId::GeneralToxicity] ==
          doctest::Approx(0.9).epsilon(1e-12));
  }
}

TEST_CASE("score_words matches score_text per word and preserves order") {
  const LexiconScorer scorer(basic_lexicon());
  const auto words = scorer.score_words("foo neutral bar");
  REQUIRE(words.size() == 3);
  CHECK(words[0].first == "foo");
  CHECK(words[1].first == "neutral");
  CHECK(words[2].first == "bar");
  for (const auto& [w, v] : words) {
    CHECK(v == scorer.score_text(w));
  }
  for (auto a : kAllAttributes) CHECK(words[1].second[a] == 0.0);
}

TEST_CASE("noisy-or monotonicity: appending a matched word never lowers scores") {
  Lexicon lex = basic_lexicon();
  lex.set_mode(AttributeId::GeneralToxicity, CombinerMode::NoisyOr);
  const LexiconScorer scorer(lex);
  std::string text = "neutral";
  double prev = scorer.score_text(text)[AttributeId::GeneralToxicity];
  for (int i = 0; i < 5; ++i) {
    text += " foo";
    const double cur = scorer.score_text(text)[AttributeId::GeneralToxicity];
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("dilution monotonicity: more filler never raises the score") {
  Lexicon lex = basic_lexicon();
  lex.set_mode(AttributeId::GeneralToxicity, CombinerMode::Dilution);
  const LexiconScorer scorer(lex);
  std::string text = "strong";
  double prev = scorer.score_text(text)[AttributeId::GeneralToxicity];
  for (int i = 0; i < 8; ++i) {
    text += " filler" + std::to_string(i);
    const double cur = scorer.score_text(text)[AttributeId::GeneralToxicity];
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("fuzz: all outputs stay in [0,1]") {
  Lexicon lex = basic_lexicon();
  lex.add_phrase({"foo", "bar"}, AttributeId::Insult, 0.8);
  lex.set_mode(AttributeId::Insult, CombinerMode::PhraseBoosted);
  const LexiconScorer scorer(lex);
  std::mt19937_64 rng(1);
  const std::vector<std::string> pool = {"foo", "bar", "strong", "x", "y", "z"};
  for (int rep = 0; rep < 200; ++rep) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      if (i) text += ' ';
      text += pool[rng() % pool.size()];
    }
    const auto v = scorer.score_text(text);
    for (auto a : kAllAttributes) {
      CHECK(v[a] >= 0.0);
      CHECK(v[a] <= 1.0);
    }
  }
}

TEST_CASE("lexicon file round trip") {
  Lexicon lex = basic_lexicon();
  lex.add_phrase({"cold", "shoulder"}, AttributeId::Insult, 0.7);
  const auto path =
      (fs::temp_directory_path() / "alprobe_lexicon_rt.tsv").string();
  lex.save(path);
  const auto loaded = Lexicon::load(path);
  CHECK(*loaded.word_weight("strong", AttributeId::GeneralToxicity) ==
        doctest::Approx(0.9));
  REQUIRE(loaded.phrases().count({"cold", "shoulder"}) == 1);
}

// ---------------------------------------------------------------------------
// Remote scorer against a local mock service

namespace {

struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::atomic<bool> malformed{false};

  MockServer() {
    server.Post("/score", [this](const httplib::Request& req,
                                 httplib::Response& res) {
      hits.fetch_add(1);
      if (malformed.load()) {
        res.set_content("{not json", "application/json");
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const std::string text = body.at("text").get<std::string>();
      nlohmann::json out;
      // deterministic fake scores derived from the text length
      const double base = static_cast<double>(text.size() % 10) / 10.0;
      for (auto a : kAllAttributes) {
        out[std::string(attribute_remote_name(a))] = base;
      }
      res.set_content(out.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~MockServer() {
    server.stop();
    thread.join();
  }

  RemoteScorerConfig config() const {
    RemoteScorerConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/score";
    cfg.api_key_env = "ALPROBE_TEST_KEY";
    cfg.max_requests_per_second = 0.0;
    cfg.max_retries = 0;
    return cfg;
  }
};

}  // namespace

TEST_CASE("remote scorer requires the api key env var") {
  ::unsetenv("ALPROBE_TEST_KEY");
  RemoteScorerConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/score";
  cfg.api_key_env = "ALPROBE_TEST_KEY";
  CHECK_THROWS(RemoteScorer(cfg));
}

TEST_CASE("remote scorer caches by content: repeat call issues no request") {
  ::setenv("ALPROBE_TEST_KEY", "k", 1);
  MockServer mock;
  RemoteScorer scorer(mock.config());
  const auto first = scorer.score_text("hello there");
  const auto n = scorer.requests_issued();
  CHECK(n == 1);
  const auto second = scorer.score_text("hello there");
  CHECK(scorer.requests_issued() == n);  // cache hit, zero new requests
  CHECK(first == second);
}

TEST_CASE("warm file cache answers without any network requests") {
  ::setenv("ALPROBE_TEST_KEY", "k", 1);
  MockServer mock;
  auto cfg = mock.config();
  cfg.cache_path =
      (fs::temp_directory_path() / "alprobe_remote_cache.tsv").string();
  fs::remove(cfg.cache_path);
  {
    RemoteScorer warm(cfg);
    warm.score_text("alpha");
    warm.score_text("beta");
  }
  RemoteScorer scorer(cfg);
  const auto batch = scorer.score_batch({"alpha", "beta"});
  CHECK(scorer.requests_issued() == 0);
  for (const auto& e : batch) CHECK(e.ok);
}

TEST_CASE("rate limit spaces requests") {
  ::setenv("ALPROBE_TEST_KEY", "k", 1);
  MockServer mock;
  auto cfg = mock.config();
  cfg.max_requests_per_second = 2.0;  // >= 0.5 s between requests
  RemoteScorer scorer(cfg);
  const auto start = std::chrono::steady_clock::now();
  scorer.score_batch({"one", "two", "three"});
  const auto elapsed = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  CHECK(elapsed >= 1.0);  // two inter-request gaps at 0.5 s each
}

TEST_CASE("malformed body fails per index without aborting the batch") {
  ::setenv("ALPROBE_TEST_KEY", "k", 1);
  MockServer mock;
  RemoteScorer scorer(mock.config());
  scorer.score_text("good text");  // cached while the server is healthy
  mock.malformed.store(true);
  const auto batch = scorer.score_batch({"good text", "fresh text"});
  REQUIRE(batch.size() == 2);
  CHECK(batch[0].ok);   // served from cache
  CHECK(!batch[1].ok);  // hits the now-broken server
  CHECK(batch[1].error.find("malformed") != std::string::npos);
}

TEST_CASE("remote_score_batch fails fast on missing key") {
  ::unsetenv("ALPROBE_TEST_KEY");
  RemoteScorerConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/score";
  cfg.api_key_env = "ALPROBE_TEST_KEY";
  CHECK_THROWS(remote_score_batch(cfg, {"a"}));
}
