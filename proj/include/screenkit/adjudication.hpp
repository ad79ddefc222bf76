#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "screenkit/decision.hpp"
#include "screenkit/prompt.hpp"

namespace screenkit {

enum class EnsembleRule { Single, AnyInclude, CriticVeto, AgreementRequired };

std::string_view to_string(EnsembleRule rule) noexcept;
EnsembleRule parse_rule(std::string_view s);

// Agreement mode asks the critic for an independent verdict; the other two
// rules show it the actor's decision.
bool default_critic_sees_actor_context(EnsembleRule rule) noexcept;

struct FinalDecision {
  std::string record_id;
  Decision decision = Decision::Exclude;
  double aggregated_confidence = 0.0;
  EnsembleRule rule = EnsembleRule::Single;
  ScreeningDecision actor;
  std::optional<ScreeningDecision> critic;

  bool includes() const noexcept { return decision == Decision::Include; }
};

struct ReplicateSummary {
  std::string record_id;
  Role role = Role::Actor;
  std::size_t n_replicates = 0;
  std::size_t include_votes = 0;
  Decision majority_decision = Decision::Exclude;
  double mean_confidence = 0.0;
  bool unanimous = false;

  // The summary as a single decision (majority verdict, mean confidence).
  ScreeningDecision as_decision() const;
};

// Reads the last "Decision:" and "Confidence:" lines of a model reply; text
// before them is ignored. record_id, role and replicate are left for the caller.
ScreeningDecision parse_decision(std::string_view raw_text, const PromptOptions& options);

// A reply that satisfies the output contract exactly.
std::string render_response(Decision decision, double confidence, const PromptOptions& options,
                            const std::optional<std::string>& rationale = std::nullopt);

ReplicateSummary aggregate_replicates(std::span<const ScreeningDecision> decisions);

std::set<std::string> plan_critic_set(EnsembleRule rule,
                                      std::span<const ScreeningDecision> actor_decisions);

bool needs_critic(EnsembleRule rule, const ScreeningDecision& actor) noexcept;

FinalDecision combine(EnsembleRule rule, const ScreeningDecision& actor,
                      const std::optional<ScreeningDecision>& critic);

// CSV files: record_id,role,replicate,decision,confidence,rationale and
// record_id,decision,rule,aggregated_confidence,actor_decision,actor_confidence,
// critic_decision,critic_confidence.
std::string decisions_csv(std::span<const ScreeningDecision> decisions);
std::string final_decisions_csv(std::span<const FinalDecision> finals);
std::vector<FinalDecision> parse_final_decisions_csv(std::string_view csv_text);

}  // namespace screenkit
