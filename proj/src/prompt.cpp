#include "screenkit/prompt.hpp"

#include <algorithm>
#include <set>

#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

const std::string kDefaultBiasClause =
    "If the record plausibly satisfies the population and outcome criteria, lean towards "
    "inclusion. When unsure, include as long as no exclusion criterion clearly applies.";

namespace {

bool is_word_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Case-sensitive whole-word search.
bool contains_word(std::string_view haystack, std::string_view word) {
  std::size_t pos = 0;
  while ((pos = haystack.find(word, pos)) != std::string_view::npos) {
    const bool left = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + word.size();
    const bool right = end >= haystack.size() || !is_word_char(haystack[end]);
    if (left && right) return true;
    ++pos;
  }
  return false;
}

// "Heuristic", or a lettered form such as "E) Heuristic".
bool is_heuristic_label(std::string_view label) {
  if (const auto paren = label.find(") "); paren != std::string_view::npos && paren <= 3) {
    label.remove_prefix(paren + 2);
  }
  return text::iequals(label, kHeuristicLabel);
}

std::size_t heuristic_sections(const Criteria& c) {
  return static_cast<std::size_t>(std::count_if(
      c.inclusion.begin(), c.inclusion.end(),
      [](const CriterionSection& s) { return is_heuristic_label(s.label); }));
}

void check_sections(const std::vector<CriterionSection>& sections, std::string_view which) {
  std::set<std::string> labels;
  for (const auto& s : sections) {
    if (text::trim(s.body).empty()) {
      fail(ErrorCode::InvalidArgument,
           std::string(which) + " criterion '" + s.label + "' has an empty body");
    }
    if (!labels.insert(text::to_lower(text::trim(s.label))).second) {
      fail(ErrorCode::InvalidArgument,
           "duplicate " + std::string(which) + " criterion label '" + s.label + "'");
    }
  }
}

std::string section_line(const CriterionSection& s, CriteriaForm form) {
  if (s.label.empty()) return s.body;
  return s.label + (form == CriteriaForm::Stratified ? ": " : ". ") + s.body;
}

std::string checklist_name(const CriterionSection& s, std::size_t index, std::string_view kind) {
  std::string out = std::string(kind) + "-" + std::to_string(index + 1);
  if (!s.label.empty()) out += " (" + s.label + ")";
  return out;
}

struct PromptParts {
  std::string preamble;
  std::string context;  // critic-only block, empty for actors
};

std::string render(const Criteria& criteria, const Record& record, const PromptOptions& options,
                   const PromptParts& parts) {
  validate(criteria, options);

  std::string p;
  p += parts.preamble + "\n\n";

  p += "Inclusion Criteria:\n";
  for (const auto& s : criteria.inclusion) p += section_line(s, criteria.form) + "\n";
  p += "\nExclusion Criteria:\n";
  for (const auto& s : criteria.exclusion) p += section_line(s, criteria.form) + "\n";

  p += "\nTitle: " + record.title + "\n\n";
  p += "Abstract: " + (record.abstract.empty() ? std::string("[not available]") : record.abstract) +
       "\n\n";

  if (!parts.context.empty()) p += parts.context + "\n";

  p += "Decide whether to Include or Exclude based on the criteria.\n\n";
  p += "Evaluate in this strict order:\n";
  for (std::size_t i = 0; i < criteria.inclusion.size(); ++i) {
    p += "- " + checklist_name(criteria.inclusion[i], i, "Inclusion") + " met? (yes/no)\n";
  }
  for (std::size_t i = 0; i < criteria.exclusion.size(); ++i) {
    p += "- " + checklist_name(criteria.exclusion[i], i, "Exclusion") + " applies? (yes/no)\n";
  }

  p += "\nRules:\n";
  p += "- Include only if ALL inclusions are \"yes\" AND ALL exclusions are \"no\".\n";
  p += "- If any inclusion is \"no\" or any exclusion is \"yes\", Exclude.\n";
  p += "- Quote \xE2\x89\xA4" "12 words of supporting evidence from the Abstract when you say "
       "\"yes\".\n";

  if (!options.worked_examples.empty()) {
    p += "\nWorked examples labeled by the review team:\n";
    for (std::size_t i = 0; i < options.worked_examples.size(); ++i) {
      const auto& ex = options.worked_examples[i];
      p += "Example " + std::to_string(i + 1) + "\n";
      p += "Title: " + ex.title + "\n";
      p += "Abstract: " + (ex.abstract.empty() ? std::string("[not available]") : ex.abstract) +
           "\n";
      p += "Reviewer decision: " + options.token(ex.decision) + "\n";
    }
  }

  const bool rationale = options.max_rationale_words.has_value();
  p += rationale ? "\nOutput exactly three lines:\n" : "\nOutput exactly two lines:\n";
  p += "Decision: " + options.include_token + " or " + options.exclude_token + "\n";
  p += "Confidence: number between 0 and 1";
  if (rationale) {
    p += "\nRationale: at most " + std::to_string(*options.max_rationale_words) + " words";
  }
  p += "\n";
  return p;
}

}  // namespace

void validate(const Criteria& criteria, const PromptOptions& options) {
  if (criteria.inclusion.empty() || criteria.exclusion.empty()) {
    fail(ErrorCode::EmptyCriteria,
         "need at least one inclusion and one exclusion criterion (have " +
             std::to_string(criteria.inclusion.size()) + " and " +
             std::to_string(criteria.exclusion.size()) + ")");
  }
  check_sections(criteria.inclusion, "inclusion");
  check_sections(criteria.exclusion, "exclusion");

  const std::size_t heuristics = heuristic_sections(criteria);
  if (criteria.inclusion_bias && heuristics != 1) {
    fail(ErrorCode::InvalidArgument, "inclusion-biased criteria need exactly one '" +
                                         std::string(kHeuristicLabel) + "' section, found " +
                                         std::to_string(heuristics));
  }

  const auto& inc = options.include_token;
  const auto& exc = options.exclude_token;
  auto bad_token = [](const std::string& t) {
    return t.empty() || t.find_first_of(" \t\r\n") != std::string::npos;
  };
  if (bad_token(inc) || bad_token(exc) || text::iequals(inc, exc)) {
    fail(ErrorCode::InvalidArgument,
         "decision tokens must be distinct single words: '" + inc + "', '" + exc + "'");
  }
  for (const auto* list : {&criteria.inclusion, &criteria.exclusion}) {
    for (const auto& s : *list) {
      for (const auto* token : {&inc, &exc}) {
        if (contains_word(s.body, *token) || contains_word(s.label, *token)) {
          fail(ErrorCode::TokenCollision,
               "decision token '" + *token + "' appears in criterion '" + s.label + "'");
        }
      }
    }
  }
}

std::string render_prompt(const Criteria& criteria, const Record& record,
                          const PromptOptions& options) {
  if (options.role != Role::Actor) {
    fail(ErrorCode::InvalidArgument, "render_prompt requires the actor role");
  }
  return render(criteria, record, options, {"You are assisting with abstract screening.", {}});
}

std::string render_critic_prompt(const Criteria& criteria, const Record& record,
                                 const ScreeningDecision& actor, const PromptOptions& options) {
  if (options.role != Role::Critic) {
    fail(ErrorCode::InvalidArgument, "render_critic_prompt requires the critic role");
  }
  std::string ctx = "Actor Assessment:\n";
  ctx += "A first screener has already assessed this record against the same criteria.\n";
  ctx += "Actor decision: " + options.token(actor.decision) + "\n";
  ctx += "Actor confidence: " + text::format_double(actor.confidence) + "\n";
  if (actor.rationale && !actor.rationale->empty()) {
    const std::string r = options.max_rationale_words
                              ? text::first_words(*actor.rationale, *options.max_rationale_words)
                              : *actor.rationale;
    ctx += "Actor rationale: " + r + "\n";
  }
  ctx += "Check the actor's assessment against the criteria. Endorse the actor's decision if "
         "it is correct; otherwise correct it.\n";
  return render(criteria, record, options,
                {"You are the critic in a two-stage abstract screening review.", ctx});
}

Criteria apply_inclusion_bias(const Criteria& criteria, const std::string& clause) {
  if (criteria.inclusion_bias || heuristic_sections(criteria) > 0) {
    fail(ErrorCode::AlreadyBiased, "criteria already carry an inclusion heuristic");
  }
  if (text::trim(clause).empty()) fail(ErrorCode::InvalidArgument, "empty heuristic clause");
  Criteria biased = criteria;
  biased.inclusion.push_back({std::string(kHeuristicLabel), clause});
  biased.inclusion_bias = true;
  return biased;
}

nlohmann::json to_json(const Criteria& c) {
  auto sections = [](const std::vector<CriterionSection>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : list) arr.push_back({{"label", s.label}, {"body", s.body}});
    return arr;
  };
  return {{"form", c.form == CriteriaForm::Stratified ? "stratified" : "raw"},
          {"inclusion_bias", c.inclusion_bias},
          {"inclusion", sections(c.inclusion)},
          {"exclusion", sections(c.exclusion)}};
}

Criteria criteria_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::ConfigValidation, "criteria: expected an object");
  auto sections = [&](const char* key) {
    std::vector<CriterionSection> out;
    if (!j.contains(key)) return out;
    const auto& arr = j.at(key);
    if (!arr.is_array()) fail(ErrorCode::ConfigValidation, std::string("criteria.") + key);
    for (const auto& s : arr) {
      if (!s.is_object() || !s.contains("body") || !s.at("body").is_string()) {
        fail(ErrorCode::ConfigValidation, std::string("criteria.") + key + "[].body");
      }
      if (s.contains("label") && !s.at("label").is_string()) {
        fail(ErrorCode::ConfigValidation, std::string("criteria.") + key + "[].label");
      }
      out.push_back({s.value("label", std::string{}), s.at("body").get<std::string>()});
    }
    return out;
  };
  Criteria c;
  c.inclusion = sections("inclusion");
  c.exclusion = sections("exclusion");
  const std::string form = j.value("form", std::string("raw"));
  if (form == "stratified") {
    c.form = CriteriaForm::Stratified;
  } else if (form == "raw") {
    c.form = CriteriaForm::Raw;
  } else {
    fail(ErrorCode::ConfigValidation, "criteria.form must be 'raw' or 'stratified'");
  }
  if (j.contains("inclusion_bias") && !j.at("inclusion_bias").is_boolean()) {
    fail(ErrorCode::ConfigValidation, "criteria.inclusion_bias must be a boolean");
  }
  c.inclusion_bias = j.contains("inclusion_bias") ? j.at("inclusion_bias").get<bool>()
                                                  : heuristic_sections(c) == 1;
  return c;
}

Criteria load_criteria(const std::filesystem::path& path) {
  const std::string content = text::read_file(path);
  try {
    return criteria_from_json(nlohmann::json::parse(content));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigValidation, path.string() + ": " + e.what());
  }
}

}  // namespace screenkit
