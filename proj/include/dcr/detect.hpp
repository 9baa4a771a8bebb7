#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dcr/core.hpp"
#include "dcr/oracle.hpp"

namespace dcr {

// Deterministic rule-based segmentation: terminals '.', '!', '?' end a sentence
// when followed by whitespace and an uppercase letter or by end of text; a fixed
// abbreviation list and decimal numbers never split.
std::vector<SentenceUnit> split_sentences(std::string_view text);

GroundedResponse make_grounded_response(std::string doc_id, std::string text,
                                        std::string generator_id = "");

// Sentence-level consistency scoring wire shape: POST {document, claim} -> {score}.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual double score(const std::string& document, const std::string& claim) = 0;
};

class RemoteScorer : public Scorer {
 public:
  RemoteScorer(std::string endpoint_url, std::chrono::milliseconds timeout, int max_retries);
  std::string id() const override;
  double score(const std::string& document, const std::string& claim) override;

 private:
  std::string endpoint_url_;
  std::string base_url_;
  std::string path_;
  std::chrono::milliseconds timeout_;
  int max_retries_;
};

// Score = fraction of claim sentences consistent with the fact table.
class FactTableScorer : public Scorer {
 public:
  explicit FactTableScorer(oracle::FactTable table) : table_(std::move(table)) {}
  std::string id() const override { return "fact_table_scorer"; }
  double score(const std::string& document, const std::string& claim) override;

 private:
  oracle::FactTable table_;
};

enum class DetectorKind { remote_scorer, marker_mock, fact_table_mock };
std::string_view detector_kind_name(DetectorKind kind);
DetectorKind detector_kind_from_name(std::string_view name);

struct DetectorBinding {
  DetectorKind kind = DetectorKind::marker_mock;
  double threshold = 0.5;  // flag iff score < threshold (score == threshold stays consistent)
  std::shared_ptr<Scorer> scorer;                      // remote_scorer
  std::shared_ptr<const oracle::FactTable> facts;      // fact_table_mock
  std::shared_ptr<std::atomic<std::uint64_t>> calls = nullptr;
  std::string id() const;
};
void validate(const DetectorBinding& binding);

bool detect_sentence(const SentenceUnit& sentence, const GroundedResponse& response,
                     const Document& doc, const DetectorBinding& binding);

struct DetectionResult {
  std::vector<DetectionLabel> labels;
  bool response_flagged = false;
};

DetectionResult detect_response(const GroundedResponse& response, const Document& doc,
                                const DetectorBinding& binding);

}  // namespace dcr
