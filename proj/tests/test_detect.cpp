#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "dcr/detect.hpp"
#include "dcr/util.hpp"

using namespace dcr;

namespace {

class StubScorer : public Scorer {
 public:
  explicit StubScorer(double value) : value_(value) {}
  std::string id() const override { return "stub"; }
  double score(const std::string&, const std::string&) override { return value_; }

 private:
  double value_;
};

Document make_doc(const std::string& text = "The capital is Paris.") {
  Document doc;
  doc.id = "d1";
  doc.source_text = text;
  doc.instruction = "Summarize.";
  return doc;
}

}  // namespace

TEST_CASE("splitter handles terminals, abbreviations and decimals") {
  CHECK(split_sentences("Hello world. This is fine.").size() == 2);
  CHECK(split_sentences("Dr. Smith went home.").size() == 1);
  const auto decimal = split_sentences("Costs rose 3.5 percent. Demand fell.");
  REQUIRE(decimal.size() == 2);
  CHECK(decimal[0].text.find("3.5") != std::string::npos);
  CHECK(split_sentences("").empty());
  CHECK(split_sentences("   \t\n ").empty());
  CHECK(split_sentences("no terminal here").size() == 1);
  // '?' glued to '!' is not a boundary; ". ok" (lowercase) does not split either
  CHECK(split_sentences("Really?! Yes. ok").size() == 2);
  CHECK(split_sentences("See U.S. Army docs.").size() == 1);
  CHECK(split_sentences("Fruit, e.g. Apples, is fine.").size() == 1);
  // lowercase after the terminal does not split
  CHECK(split_sentences("wait. and see.").size() == 1);
}

TEST_CASE("splitter spans rejoin to the input modulo inter-sentence whitespace") {
  const std::string text = "  First one.   Second one!  Third?  Tail without terminal   ";
  const auto sentences = split_sentences(text);
  REQUIRE(sentences.size() == 4);
  std::size_t cursor = 0;
  for (const auto& sentence : sentences) {
    for (std::size_t i = cursor; i < sentence.begin; ++i) {
      CHECK(std::isspace(static_cast<unsigned char>(text[i])));
    }
    CHECK(text.substr(sentence.begin, sentence.end - sentence.begin) == sentence.text);
    cursor = sentence.end;
  }
  for (std::size_t i = cursor; i < text.size(); ++i) {
    CHECK(std::isspace(static_cast<unsigned char>(text[i])));
  }
}

TEST_CASE("marker and fact-table detectors") {
  const Document doc = make_doc();
  auto facts = std::make_shared<const oracle::FactTable>(
      oracle::FactTable{{{"the capital of France", "Paris"}, {"capital", "Paris"}}});

  DetectorBinding marker;
  marker.kind = DetectorKind::marker_mock;
  GroundedResponse flagged = make_grounded_response("d1", "Paris is nice [CORRUPT]. All good.");
  CHECK(detect_sentence(flagged.sentences[0], flagged, doc, marker));
  CHECK_FALSE(detect_sentence(flagged.sentences[1], flagged, doc, marker));

  DetectorBinding fact;
  fact.kind = DetectorKind::fact_table_mock;
  fact.facts = facts;
  GroundedResponse consistent = make_grounded_response("d1", "The capital is Paris.");
  CHECK_FALSE(detect_sentence(consistent.sentences[0], consistent, doc, fact));
  GroundedResponse inconsistent = make_grounded_response("d1", "The capital of France is Lyon.");
  CHECK(detect_sentence(inconsistent.sentences[0], inconsistent, doc, fact));
}

TEST_CASE("scorer binding flags only strictly below the threshold") {
  const Document doc = make_doc();
  GroundedResponse response = make_grounded_response("d1", "A claim.");
  DetectorBinding binding;
  binding.kind = DetectorKind::remote_scorer;
  binding.threshold = 0.5;
  binding.scorer = std::make_shared<StubScorer>(0.5);
  CHECK_FALSE(detect_sentence(response.sentences[0], response, doc, binding));
  binding.scorer = std::make_shared<StubScorer>(0.4999);
  CHECK(detect_sentence(response.sentences[0], response, doc, binding));
}

TEST_CASE("raising the threshold never unflags a sentence") {
  const Document doc = make_doc();
  GroundedResponse response = make_grounded_response("d1", "A claim.");
  util::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double score = static_cast<double>(util::draw_index(rng, 1000)) / 1000.0;
    DetectorBinding binding;
    binding.kind = DetectorKind::remote_scorer;
    binding.scorer = std::make_shared<StubScorer>(score);
    bool was_flagged = false;
    for (double threshold : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      binding.threshold = threshold;
      const bool flagged = detect_sentence(response.sentences[0], response, doc, binding);
      if (was_flagged) CHECK(flagged);
      was_flagged = flagged;
    }
  }
}

TEST_CASE("detect_response ORs the labels and requires sentences") {
  const Document doc = make_doc();
  DetectorBinding marker;
  marker.kind = DetectorKind::marker_mock;

  GroundedResponse clean = make_grounded_response("d1", "One. Two. Three.");
  const DetectionResult none = detect_response(clean, doc, marker);
  CHECK(none.labels.size() == 3);
  CHECK_FALSE(none.response_flagged);

  GroundedResponse mixed = make_grounded_response("d1", "One. Two [CORRUPT]. Three.");
  const DetectionResult some = detect_response(mixed, doc, marker);
  REQUIRE(some.labels.size() == 3);
  CHECK_FALSE(some.labels[0].flagged);
  CHECK(some.labels[1].flagged);
  CHECK_FALSE(some.labels[2].flagged);
  CHECK(some.response_flagged);

  GroundedResponse empty;
  empty.doc_id = "d1";
  CHECK_THROWS_AS(detect_response(empty, doc, marker), std::invalid_argument);
}

TEST_CASE("label count always equals sentence count") {
  const Document doc = make_doc();
  DetectorBinding marker;
  marker.kind = DetectorKind::marker_mock;
  util::Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    std::string text;
    const std::size_t n = 1 + util::draw_index(rng, 6);
    for (std::size_t i = 0; i < n; ++i) {
      text += util::draw_index(rng, 3) == 0 ? "Bad [CORRUPT] one. " : "Fine one. ";
    }
    GroundedResponse response = make_grounded_response("d1", text);
    const DetectionResult result = detect_response(response, doc, marker);
    CHECK(result.labels.size() == response.sentences.size());
  }
}

TEST_CASE("remote scorer speaks the {document, claim} -> {score} wire shape") {
  httplib::Server server;
  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.contains("document"));
    REQUIRE(body.contains("claim"));
    const double score = body["claim"].get<std::string>().find("Lyon") != std::string::npos
                             ? 0.1
                             : 0.9;
    res.set_content(nlohmann::json{{"score", score}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteScorer scorer("http://127.0.0.1:" + std::to_string(port) + "/score",
                      std::chrono::milliseconds(2000), 1);
  CHECK(scorer.score("doc", "The capital is Lyon.") == doctest::Approx(0.1));
  CHECK(scorer.score("doc", "The capital is Paris.") == doctest::Approx(0.9));

  const Document doc = make_doc();
  GroundedResponse response = make_grounded_response("d1", "The capital is Lyon.");
  DetectorBinding binding;
  binding.kind = DetectorKind::remote_scorer;
  binding.scorer = std::make_shared<RemoteScorer>(
      "http://127.0.0.1:" + std::to_string(port) + "/score", std::chrono::milliseconds(2000), 1);
  CHECK(detect_sentence(response.sentences[0], response, doc, binding));

  server.stop();
  server_thread.join();
}

TEST_CASE("unreachable scorer propagates backend unavailable, never defaults") {
  const Document doc = make_doc();
  GroundedResponse response = make_grounded_response("d1", "A claim.");
  DetectorBinding binding;
  binding.kind = DetectorKind::remote_scorer;
  binding.scorer =
      std::make_shared<RemoteScorer>("http://127.0.0.1:1/score", std::chrono::milliseconds(500), 0);
  CHECK_THROWS_AS(detect_sentence(response.sentences[0], response, doc, binding),
                  BackendUnavailable);
}
