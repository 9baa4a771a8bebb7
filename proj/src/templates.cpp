#include "dcr/templates.hpp"

#include <array>
#include <cctype>

#include <dcr/template_bodies.inc>

#include "dcr/errors.hpp"
#include "dcr/util.hpp"

namespace dcr {
namespace {

struct TemplateEntry {
  TemplateName name;
  std::string_view id;
  std::string_view body;
  std::string_view notopic;  // empty when the template has no document framing
};

constexpr std::array<TemplateEntry, 11> kTemplates = {{
    {TemplateName::critique_dcr, "critique_dcr", tpl_bodies::critique_dcr,
     tpl_bodies::critique_dcr_notopic},
    {TemplateName::critique_feed_refine, "critique_feed_refine", tpl_bodies::critique_feed_refine,
     tpl_bodies::critique_feed_refine_notopic},
    {TemplateName::teacher_structured, "teacher_structured", tpl_bodies::teacher_structured,
     tpl_bodies::teacher_structured_notopic},
    {TemplateName::refine_with_feedback, "refine_with_feedback", tpl_bodies::refine_with_feedback,
     tpl_bodies::refine_with_feedback_notopic},
    {TemplateName::direct_refine, "direct_refine", tpl_bodies::direct_refine,
     tpl_bodies::direct_refine_notopic},
    {TemplateName::detect_dr_refine, "detect_dr_refine", tpl_bodies::detect_dr_refine,
     tpl_bodies::detect_dr_refine_notopic},
    {TemplateName::judge_likert, "judge_likert", tpl_bodies::judge_likert, {}},
    {TemplateName::judge_pairwise, "judge_pairwise", tpl_bodies::judge_pairwise, {}},
    {TemplateName::feedback_match, "feedback_match", tpl_bodies::feedback_match, {}},
    {TemplateName::topic_gen, "topic_gen", tpl_bodies::topic_gen, {}},
    {TemplateName::initial_response, "initial_response", tpl_bodies::initial_response, {}},
}};

const TemplateEntry& entry(TemplateName name) {
  for (const auto& e : kTemplates) {
    if (e.name == name) return e;
  }
  throw TemplateError("unknown template");
}

bool placeholder_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

std::string_view template_id(TemplateName name) { return entry(name).id; }

std::optional<TemplateName> template_from_id(std::string_view id) {
  for (const auto& e : kTemplates) {
    if (e.id == id) return e.name;
  }
  return std::nullopt;
}

const std::vector<TemplateName>& all_template_names() {
  static const std::vector<TemplateName> names = [] {
    std::vector<TemplateName> out;
    for (const auto& e : kTemplates) out.push_back(e.name);
    return out;
  }();
  return names;
}

std::string_view template_body(TemplateName name) { return entry(name).body; }

bool has_notopic_variant(TemplateName name) { return !entry(name).notopic.empty(); }

std::string_view template_body_without_topic(TemplateName name) {
  const auto& e = entry(name);
  if (e.notopic.empty()) {
    throw TemplateError("template '" + std::string(e.id) + "' has no instruction-only variant");
  }
  return e.notopic;
}

const std::set<std::string>& declared_placeholders() {
  static const std::set<std::string> placeholders = {
      "document", "topic",     "summary",  "sentence", "feedback",
      "response1", "response2", "feedback1", "feedback2"};
  return placeholders;
}

std::set<std::string> body_placeholders(std::string_view body) {
  std::set<std::string> found;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] != '{') {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < body.size() && placeholder_char(body[j])) ++j;
    if (j > i + 1 && j < body.size() && body[j] == '}') {
      std::string name(body.substr(i + 1, j - i - 1));
      if (declared_placeholders().count(name)) {
        found.insert(std::move(name));
        i = j + 1;
        continue;
      }
    }
    ++i;
  }
  return found;
}

std::string instantiate_body(std::string_view body,
                             const std::map<std::string, std::string>& slots) {
  const std::set<std::string> wanted = body_placeholders(body);
  for (const auto& [key, value] : slots) {
    (void)value;
    if (!wanted.count(key)) throw TemplateError("unknown slot '" + key + "'");
  }
  for (const auto& name : wanted) {
    if (!slots.count(name)) throw TemplateError("unfilled placeholder '" + name + "'");
  }

  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t j = i + 1;
      while (j < body.size() && placeholder_char(body[j])) ++j;
      if (j > i + 1 && j < body.size() && body[j] == '}') {
        std::string name(body.substr(i + 1, j - i - 1));
        auto it = slots.find(name);
        if (it != slots.end()) {
          out.append(it->second);
          i = j + 1;
          continue;
        }
      }
    }
    out.push_back(body[i]);
    ++i;
  }
  return out;
}

std::string instantiate(TemplateName name, const std::map<std::string, std::string>& slots) {
  return instantiate_body(template_body(name), slots);
}

std::string template_checksum(TemplateName name) {
  return util::sha256_hex(template_body(name));
}

std::string notopic_checksum(TemplateName name) {
  return util::sha256_hex(template_body_without_topic(name));
}

}  // namespace dcr
