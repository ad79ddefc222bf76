#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "screenkit/corpus.hpp"
#include "screenkit/decision.hpp"

namespace screenkit {

struct CriterionSection {
  std::string label;  // e.g. "Population", "Outcome / Exposure"
  std::string body;
  bool operator==(const CriterionSection&) const = default;
};

enum class CriteriaForm { Raw, Stratified };

inline constexpr std::string_view kHeuristicLabel = "Heuristic";
extern const std::string kDefaultBiasClause;

struct Criteria {
  std::vector<CriterionSection> inclusion;
  std::vector<CriterionSection> exclusion;
  CriteriaForm form = CriteriaForm::Raw;
  // Set iff inclusion holds exactly one section labeled "Heuristic".
  bool inclusion_bias = false;
  bool operator==(const Criteria&) const = default;
};

// Reviewer-labeled record shown to the model as a worked example.
struct WorkedExample {
  std::string title;
  std::string abstract;
  Decision decision = Decision::Exclude;
};

struct PromptOptions {
  std::string include_token = "INCLUDE";
  std::string exclude_token = "EXCLUDE";
  // When set, a third "Rationale:" output line is requested and actor
  // rationales quoted to the critic are cut to this many words.
  std::optional<std::size_t> max_rationale_words;
  Role role = Role::Actor;
  std::vector<WorkedExample> worked_examples;

  const std::string& token(Decision d) const {
    return d == Decision::Include ? include_token : exclude_token;
  }
};

// Throws EmptyCriteria, TokenCollision or InvalidArgument.
void validate(const Criteria& criteria, const PromptOptions& options);

std::string render_prompt(const Criteria& criteria, const Record& record,
                          const PromptOptions& options);

std::string render_critic_prompt(const Criteria& criteria, const Record& record,
                                 const ScreeningDecision& actor, const PromptOptions& options);

// Copy with inclusion_bias set and a "Heuristic" inclusion section appended.
Criteria apply_inclusion_bias(const Criteria& criteria,
                              const std::string& clause = kDefaultBiasClause);

nlohmann::json to_json(const Criteria& criteria);
Criteria criteria_from_json(const nlohmann::json& j);
Criteria load_criteria(const std::filesystem::path& path);

}  // namespace screenkit
