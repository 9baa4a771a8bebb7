#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dcr {

enum class TemplateName {
  critique_dcr,
  critique_feed_refine,
  teacher_structured,
  refine_with_feedback,
  direct_refine,
  detect_dr_refine,
  judge_likert,
  judge_pairwise,
  feedback_match,
  topic_gen,
  initial_response,
};

std::string_view template_id(TemplateName name);
std::optional<TemplateName> template_from_id(std::string_view id);
const std::vector<TemplateName>& all_template_names();

// The canonical body, byte-for-byte as shipped in templates/<id>.txt.
std::string_view template_body(TemplateName name);

// The instruction-only framing used when a document carries no topic. Only the
// document-framed templates have one; asking for any other raises TemplateError.
std::string_view template_body_without_topic(TemplateName name);
bool has_notopic_variant(TemplateName name);

const std::set<std::string>& declared_placeholders();
std::set<std::string> body_placeholders(std::string_view body);

// Single-pass substitution: placeholder values are inserted verbatim and never
// re-scanned, so braces inside documents or summaries are inert.
std::string instantiate_body(std::string_view body, const std::map<std::string, std::string>& slots);
std::string instantiate(TemplateName name, const std::map<std::string, std::string>& slots);

std::string template_checksum(TemplateName name);
std::string notopic_checksum(TemplateName name);

}  // namespace dcr
