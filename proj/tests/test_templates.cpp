#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "dcr/errors.hpp"
#include "dcr/templates.hpp"
#include "dcr/util.hpp"

using namespace dcr;

namespace {
const std::filesystem::path kTemplatesDir = DCR_TEMPLATES_DIR;
}

TEST_CASE("embedded bodies are byte-identical to the shipped template files") {
  for (TemplateName name : all_template_names()) {
    const auto path = kTemplatesDir / (std::string(template_id(name)) + ".txt");
    CHECK(std::string(template_body(name)) == util::read_file(path));
    if (has_notopic_variant(name)) {
      const auto variant_path =
          kTemplatesDir / (std::string(template_id(name)) + ".notopic.txt");
      CHECK(std::string(template_body_without_topic(name)) == util::read_file(variant_path));
    }
  }
}

TEST_CASE("checksum manifest pins every template") {
  const auto manifest = nlohmann::json::parse(util::read_file(kTemplatesDir / "manifest.json"));
  REQUIRE(manifest.contains("templates"));
  CHECK(manifest["templates"].size() == 11);
  for (TemplateName name : all_template_names()) {
    const std::string id(template_id(name));
    REQUIRE(manifest["templates"].contains(id));
    CHECK(manifest["templates"][id].get<std::string>() == template_checksum(name));
    if (has_notopic_variant(name)) {
      REQUIRE(manifest["variants"].contains(id + ".notopic"));
      CHECK(manifest["variants"][id + ".notopic"].get<std::string>() == notopic_checksum(name));
    }
  }
}

TEST_CASE("bodies use only declared placeholders") {
  for (TemplateName name : all_template_names()) {
    for (const std::string& placeholder : body_placeholders(template_body(name))) {
      CHECK(declared_placeholders().count(placeholder) == 1);
    }
  }
  CHECK(body_placeholders(template_body(TemplateName::judge_pairwise)) ==
        std::set<std::string>{"document", "response1", "response2"});
  CHECK(body_placeholders(template_body(TemplateName::feedback_match)) ==
        std::set<std::string>{"sentence", "feedback1", "feedback2"});
}

TEST_CASE("instantiation is strict and single-pass") {
  CHECK_THROWS_AS(instantiate(TemplateName::topic_gen, {}), TemplateError);
  CHECK_THROWS_AS(instantiate(TemplateName::topic_gen,
                              {{"document", "d"}, {"summary", "extra"}}),
                  TemplateError);
  // braces inside values are inert
  const std::string out =
      instantiate(TemplateName::topic_gen, {{"document", "text with {topic} inside"}});
  CHECK(out.find("text with {topic} inside") != std::string::npos);
  CHECK(out.find("Enumerate three main topics") != std::string::npos);
}

TEST_CASE("anchor phrases appear in their templates") {
  CHECK(std::string(template_body(TemplateName::judge_likert))
            .find("\"therefore, the score is:\"") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::judge_pairwise))
            .find("\"therefore, the score is:\"") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::refine_with_feedback))
            .find("Make the minimum number of changes") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::critique_feed_refine)).find("no error") !=
        std::string::npos);
  CHECK(std::string(template_body(TemplateName::critique_dcr))
            .find("point to the error span by stating") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::teacher_structured))
            .find("Identify factually inconsistent information in the form of a JSON") !=
        std::string::npos);
  CHECK(std::string(template_body(TemplateName::topic_gen)).find("around 5 words") !=
        std::string::npos);
  CHECK(std::string(template_body(TemplateName::initial_response))
            .find("less than 50 words in length") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::direct_refine))
            .find("If there are any factual inconsistencies") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::detect_dr_refine))
            .find("Edit the response such that the refinement doesn't have any factual "
                  "inconsistencies") != std::string::npos);
  CHECK(std::string(template_body(TemplateName::feedback_match))
            .find("talking about the same error") != std::string::npos);
}

TEST_CASE("dcr and feed_refine critique prompts differ only in the final clause") {
  const std::string dcr_body(template_body(TemplateName::critique_dcr));
  const std::string feed_body(template_body(TemplateName::critique_feed_refine));
  const std::string shared_prefix_end = "For the following sentence in the summary:\n{sentence}\n\n";
  const std::size_t dcr_cut = dcr_body.find(shared_prefix_end);
  const std::size_t feed_cut = feed_body.find(shared_prefix_end);
  REQUIRE(dcr_cut != std::string::npos);
  REQUIRE(feed_cut != std::string::npos);
  const std::size_t end = dcr_cut + shared_prefix_end.size();
  CHECK(dcr_body.substr(0, end) == feed_body.substr(0, end));
  CHECK(dcr_body.substr(end) != feed_body.substr(end));
  CHECK(feed_body.substr(feed_cut).find("If there is no inconsistency") != std::string::npos);
  CHECK(dcr_body.substr(dcr_cut).find("If there is no inconsistency") == std::string::npos);
}

TEST_CASE("exactly seven numbered categories in the rubric templates") {
  for (TemplateName name : {TemplateName::teacher_structured, TemplateName::judge_likert,
                            TemplateName::judge_pairwise}) {
    const std::string body(template_body(name));
    for (int i = 1; i <= 7; ++i) {
      CHECK(body.find("\n" + std::to_string(i) + ". ") != std::string::npos);
    }
  }
}
