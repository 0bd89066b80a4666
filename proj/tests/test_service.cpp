#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "hierolm/checkpoint.hpp"
#include "hierolm/error.hpp"
#include "hierolm/evaluation.hpp"
#include "hierolm/inference.hpp"
#include "hierolm/repl.hpp"
#include "hierolm/service.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace hierolm;
using nlohmann::json;

namespace {

struct Trained {
  Vocabulary vocab;
  Checkpoint checkpoint;
  std::unique_ptr<LanguageModel<float>> model;
};

Trained package(const TrainConfig& config, const PreparedCorpus& prepared) {
  TrainResult r = train(config, prepared.data, prepared.vocab.size());
  Trained t{prepared.vocab, make_checkpoint(*r.model, prepared.vocab, config.to_json()), nullptr};
  t.model = std::move(r.model);
  return t;
}

/// Small LSTM on the synthetic offering corpus.
const Trained& offering() {
  static const Trained t = [] {
    TrainConfig config = testing::small_config();
    config.embed_size = 32;
    config.hidden_size = 32;
    config.batch_size = 32;
    config.max_epochs = 8;
    const auto synth = generate_synthetic_corpus(testing::load_grammar("offering.grammar"), 2000, 21);
    return package(config, prepare_corpus(synth.sentences, config));
  }();
  return t;
}

/// LSTM that has memorized the single fixed template.
const Trained& memorized() {
  static const Trained t = [] {
    const TrainConfig config = testing::small_config();
    return package(config, testing::fixed_corpus(config));
  }();
  return t;
}

const InferenceService& service() {
  static const InferenceService s(offering().checkpoint, "offering.ckpt");
  return s;
}

std::vector<std::string> words(const std::string& text) { return tokenize_line(text); }

std::string top1(const std::string& context) {
  const auto r = service().predict(json{{"context", words(context)}, {"k", 1}}.dump());
  REQUIRE(r.status == 200);
  return r.body.at("candidates").at(0).at("token").get<std::string>();
}

}  // namespace

TEST_CASE("predict contract") {
  const auto r = service().predict(R"({"context": ["n", "kA", "n"], "k": 3})");
  REQUIRE(r.status == 200);
  const auto& c = r.body.at("candidates");
  REQUIRE(c.size() == 3);
  double previous = 1.0;
  for (const auto& cand : c) {
    CHECK(cand.at("token").is_string());
    CHECK(cand.at("id").is_number_integer());
    const double p = cand.at("probability").get<double>();
    CHECK(p > 0.0);
    CHECK(p <= previous);
    previous = p;
  }
  CHECK(r.body.at("context") == json::array({"n", "kA", "n"}));
  CHECK(r.body.at("warnings").empty());
  CHECK(r.body.at("model_info").at("architecture") == "lstm");

  const auto all = service().predict(json{{"context", json::array()}, {"k", offering().vocab.size()}}.dump());
  REQUIRE(all.status == 200);
  double sum = 0.0;
  for (const auto& cand : all.body.at("candidates")) sum += cand.at("probability").get<double>();
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));

  const auto defaults = service().predict("{}");
  REQUIRE(defaults.status == 200);
  CHECK(defaults.body.at("candidates").size() == 5);
  // Every sentence of the grammar starts with one of three tokens.
  std::set<std::string> starts;
  for (std::size_t i = 0; i < 3; ++i) starts.insert(defaults.body.at("candidates").at(i).at("token").get<std::string>());
  CHECK(starts == std::set<std::string>{"htp", "n", "nswt"});

  const auto text = service().predict(R"({"text": "n kA  n", "k": 3})");
  CHECK(text.body == r.body);
}

TEST_CASE("request errors are 400 with a code") {
  const auto expect = [](const ServiceResponse& r, const char* code) {
    CHECK(r.status == 400);
    CHECK(r.body.at("code") == code);
    CHECK(r.body.at("message").is_string());
    CHECK(r.body.contains("details"));
  };
  const auto& s = service();
  expect(s.predict("{not json"), "MalformedJson");
  expect(s.predict("[1, 2]"), "MalformedJson");
  expect(s.predict(R"({"context": [], "kk": 2})"), "UnknownField");
  expect(s.predict(R"({"context": "n kA"})"), "InvalidField");
  expect(s.predict(R"({"context": [1, 2]})"), "InvalidField");
  expect(s.predict(R"({"context": ["n kA"]})"), "InvalidToken");
  expect(s.predict(R"({"context": [""]})"), "InvalidToken");
  expect(s.predict(R"({"context": ["<s>"]})"), "InvalidToken");
  expect(s.predict(R"({"context": ["n"], "text": "n"})"), "ConflictingFields");
  expect(s.predict(R"({"k": 0})"), "KOutOfRange");
  expect(s.predict(json{{"k", offering().vocab.size() + 1}}.dump()), "KOutOfRange");
  expect(s.predict(R"({"k": 1.5})"), "InvalidField");
  expect(s.complete(R"({"steps": 0})"), "StepsOutOfRange");
  expect(s.complete(R"({"steps": 100000})"), "StepsOutOfRange");
  expect(s.score(R"({"sentence": []})"), "EmptySentence");
  expect(s.score(R"({"text": "   "})"), "EmptySentence");
  expect(s.vocab("", "lots"), "InvalidField");
  expect(s.vocab("", "-1"), "InvalidField");
  const auto unknown = s.predict(R"({"context": [], "kk": 2})");
  CHECK(unknown.body.at("details").at("field") == "kk");
}

TEST_CASE("unknown tokens map to <unk> with a warning") {
  const auto r = service().predict(R"({"context": ["n", "qqq"], "k": 2})");
  REQUIRE(r.status == 200);
  const auto& w = r.body.at("warnings");
  REQUIRE(w.size() == 1);
  CHECK(w[0].at("code") == "UnknownToken");
  CHECK(w[0].at("position") == 1);
  CHECK(w[0].at("token") == "qqq");
  CHECK(w[0].at("mapped_to") == "<unk>");
  CHECK(r.body.at("context") == json::array({"n", "qqq"}));
  const auto explicit_unk = service().predict(R"({"context": ["n", "<unk>"], "k": 2})");
  CHECK(explicit_unk.body.at("candidates") == r.body.at("candidates"));
  CHECK(explicit_unk.body.at("warnings").empty());
}

TEST_CASE("requests are stateless and consistent") {
  const std::string a = R"({"context": ["htp", "dj", "nswt"], "k": 4})";
  const std::string b = R"({"context": ["nswt", "bj"], "k": 4})";
  const auto first = service().predict(a);
  service().predict(b);
  service().complete(R"({"context": ["n"], "steps": 6})");
  CHECK(service().predict(a).body == first.body);

  for (const char* ctx : {"[]", R"(["n", "kA", "n"])", R"(["htp", "dj", "nswt", "ptH"])"}) {
    const auto p = service().predict(std::string(R"({"k": 1, "context": )") + ctx + "}");
    const auto c = service().complete(std::string(R"({"steps": 1, "context": )") + ctx + "}");
    REQUIRE(c.status == 200);
    CHECK(p.body.at("candidates").at(0).at("token") == c.body.at("generated").at(0));
  }
}

TEST_CASE("complete and score") {
  const auto c = service().complete(R"({"context": ["n", "kA", "n", "sS", "nswt", "snbj"], "steps": 10})");
  REQUIRE(c.status == 200);
  const auto& gen = c.body.at("generated");
  CHECK(c.body.at("terminated_by_eos") == true);
  CHECK(gen.back() == "</s>");
  CHECK(gen == json::array({"mAa", "xrw", "</s>"}));
  CHECK(c.body.at("generated_ids").size() == gen.size());

  const auto capped = service().complete(R"({"context": ["htp"], "steps": 2})");
  CHECK(capped.body.at("generated").size() == 2);
  CHECK(capped.body.at("terminated_by_eos") == false);

  const auto s = service().score(R"({"sentence": ["n", "kA", "n", "sS", "nswt", "snbj", "mAa", "xrw"]})");
  REQUIRE(s.status == 200);
  CHECK(s.body.at("tokens").size() == 9);
  CHECK(s.body.at("tokens").back() == "</s>");
  double total = 0.0;
  for (const auto& lp : s.body.at("per_token_log_prob")) {
    CHECK(lp.get<double>() <= 0.0);
    total += lp.get<double>();
  }
  CHECK(s.body.at("total_log_prob").get<double>() == doctest::Approx(total));
  CHECK(s.body.at("perplexity").get<double>() == doctest::Approx(std::exp(-total / 9.0)));
  const auto same = service().score(R"({"text": "n kA n sS nswt snbj mAa xrw"})");
  CHECK(same.body.at("total_log_prob") == s.body.at("total_log_prob"));
}

TEST_CASE("the memorized template scores perplexity below 1.05") {
  const InferenceService s(memorized().checkpoint);
  const auto r = s.score(R"({"text": "n kA n wr swN w pn Tw mAa xrw"})");
  REQUIRE(r.status == 200);
  CHECK(r.body.at("perplexity").get<double>() < 1.05);
}

TEST_CASE("vocab and info") {
  const auto& s = service();
  const auto all = s.vocab("", std::nullopt);
  REQUIRE(all.status == 200);
  CHECK(all.body.at("size") == offering().vocab.size());
  CHECK(all.body.at("tokens").size() == std::min<std::size_t>(100, offering().vocab.size()));
  const auto m = s.vocab("mAa", std::nullopt);
  CHECK(m.body.at("matches") == 1);
  CHECK(m.body.at("tokens").at(0).at("token") == "mAa");
  const auto limited = s.vocab("", "2");
  CHECK(limited.body.at("tokens").size() == 2);
  CHECK(limited.body.at("truncated") == true);
  CHECK(limited.body.at("tokens").at(0) == json{{"id", 0}, {"token", "<pad>"}});

  const auto info = s.info();
  CHECK(info.status == 200);
  CHECK(info.body.at("architecture") == "lstm");
  CHECK(info.body.at("dims").at("embed_size") == 32);
  CHECK(info.body.at("parameter_count") == offering().model->parameter_count());
  CHECK(info.body.at("special_tokens").at("unk") == "<unk>");
  CHECK(info.body.at("checkpoint") == "offering.ckpt");
  CHECK(info.body.at("config").at("hidden_size") == 32);
}

TEST_CASE("concurrent requests see the same answers") {
  const auto& s = service();
  const std::vector<std::string> bodies{R"({"context": ["n", "kA", "n"]})", R"({"context": ["htp", "dj"]})",
                                        R"({"text": "nswt bj tj nb"})", R"({"context": []})"};
  std::vector<json> expected;
  for (const auto& b : bodies) expected.push_back(s.predict(b).body);
  std::atomic<int> mismatches{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        const std::size_t which = static_cast<std::size_t>(t + i) % bodies.size();
        if (s.predict(bodies[which]).body != expected[which]) ++mismatches;
      }
    });
  for (auto& th : threads) th.join();
  CHECK(mismatches == 0);
}

TEST_CASE("HTTP routes, readiness and static files") {
  const auto ui = std::filesystem::temp_directory_path() / "hierolm_ui_test";
  std::filesystem::create_directories(ui);
  std::ofstream(ui / "index.html") << "<html>hierolm</html>";

  ServerOptions options;
  options.port = 0;
  options.ui_root = ui;
  HttpServer server(options);
  const int port = server.bind();
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 503);
  auto early = client.Post("/v1/predict", R"({"context": []})", "application/json");
  REQUIRE(early);
  CHECK(early->status == 503);
  CHECK(json::parse(early->body).at("code") == "NotReady");
  CHECK_FALSE(server.ready());

  server.set_service(std::make_unique<InferenceService>(offering().checkpoint, "offering.ckpt"));
  CHECK(server.ready());
  health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body).at("status") == "ok");
  auto ok = client.Post("/v1/predict", R"({"context": ["n", "kA", "n"], "k": 3})", "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body) == service().predict(R"({"context": ["n", "kA", "n"], "k": 3})").body);
  CHECK(ok->get_header_value("Content-Type").find("application/json") != std::string::npos);

  auto bad = client.Post("/v1/complete", "{oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).at("code") == "MalformedJson");
  auto score = client.Post("/v1/score", R"({"text": "n kA n"})", "application/json");
  REQUIRE(score);
  CHECK(score->status == 200);
  auto vocab = client.Get("/v1/vocab?prefix=mA&limit=5");
  REQUIRE(vocab);
  CHECK(json::parse(vocab->body).at("tokens").at(0).at("token") == "mAa");
  auto info = client.Get("/v1/info");
  REQUIRE(info);
  CHECK(json::parse(info->body).at("vocab_size") == offering().vocab.size());

  auto page = client.Get("/ui/index.html");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(page->body == "<html>hierolm</html>");
  auto missing = client.Get("/v1/nothing");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).at("code") == "NotFound");

  server.stop();
  loop.join();
  std::filesystem::remove_all(ui);
}

TEST_CASE("address parsing") {
  CHECK(parse_address("0.0.0.0:9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
  CHECK(parse_address(":8081") == std::pair<std::string, int>{"127.0.0.1", 8081});
  CHECK_THROWS_AS(parse_address("localhost"), Error);
  CHECK_THROWS_AS(parse_address("host:99999"), Error);
}

TEST_CASE("trained model completes the fixed formulas") {
  CHECK(top1("n kA n wr swN w pn Tw") == "mAa");
  CHECK(top1("n kA n wr swN w pn Tw mAa") == "xrw");
  CHECK(top1("n kA n nb t pr snbj mAa") == "t");
  CHECK(top1("nswt bj tj nb tA du wsr mAa t raw stp n jmn") == "zA");
  CHECK(top1("nswt bj tj nb tA du wsr mAa t raw stp n jmn zA") == "ra");
}

TEST_CASE("repl") {
  const Trained& t = offering();
  Repl repl(*t.model, t.vocab);
  auto r = repl.handle("nswt bj tj nb tA du wsr mAa t raw stp n jmn");
  CHECK_FALSE(r.error);
  CHECK(r.text.find("context: nswt bj") != std::string::npos);
  r = repl.handle("?3");
  CHECK_FALSE(r.error);
  CHECK(r.text.find("1. zA") != std::string::npos);
  r = repl.handle("!1");
  CHECK(r.text.find("generated: zA") != std::string::npos);
  CHECK(repl.context().back() == "zA");
  r = repl.handle("pop");
  CHECK_FALSE(r.error);
  CHECK(repl.context().back() == "jmn");
  r = repl.handle("zA");
  r = repl.handle("?1");
  CHECK(r.text.find("1. ra") != std::string::npos);

  r = repl.handle(std::string("?") + std::to_string(t.vocab.size() + 1));
  CHECK(r.error);
  CHECK(r.text.find("commands:") != std::string::npos);
  CHECK(repl.handle(":frobnicate").text.find("commands:") != std::string::npos);
  CHECK(repl.handle("?x").error);
  CHECK(repl.handle("!0").error);
  CHECK(repl.handle("<s>").error);

  r = repl.handle("score");
  CHECK_FALSE(r.error);
  CHECK(r.text.find("perplexity") != std::string::npos);
  r = repl.handle("bogus");
  CHECK(r.text.find("<unk>") != std::string::npos);
  CHECK(repl.context_ids().back() == kUnkId);
  repl.handle("reset");
  CHECK(repl.context().empty());
  CHECK(repl.handle("pop").error);
  CHECK(repl.handle("quit").quit);

  std::istringstream in("n kA n\n?2\nquit\n");
  std::ostringstream out;
  Repl scripted(*t.model, t.vocab);
  scripted.run(in, out, false);
  CHECK(out.str().find("context: n kA n") != std::string::npos);
  CHECK(out.str().find("1. ") != std::string::npos);
}

TEST_CASE("short sentences are easier than long ones (reported)") {
  const Trained& t = offering();
  const auto synth = generate_synthetic_corpus(testing::load_grammar("offering.grammar"), 300, 99);
  std::vector<EncodedSentence> encoded;
  for (const auto& s : synth.sentences) encoded.push_back(encode(s, t.vocab));
  const auto report = length_buckets(*t.model, std::span<const EncodedSentence>(encoded));
  for (const auto& b : report.buckets)
    if (b.sentences > 0) MESSAGE(b.label() << " sentences " << b.sentences << " accuracy " << b.accuracy);
  CHECK(report.buckets[1].sentences > 0);
}
