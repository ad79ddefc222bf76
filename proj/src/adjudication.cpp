#include "screenkit/adjudication.hpp"

#include <charconv>
#include <cmath>

#include "screenkit/csv.hpp"
#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace {

bool is_decoration(char c) {
  return c == ' ' || c == '\t' || c == '*' || c == '#' || c == '-' || c == '>' || c == '`' ||
         c == '_' || c == '"' || c == '\'';
}

// Leaves a leading '-' in place so negative confidences stay visible.
std::string_view strip_value(std::string_view s) {
  while (!s.empty() && s.front() != '-' && is_decoration(s.front())) s.remove_prefix(1);
  while (!s.empty() && (is_decoration(s.back()) || s.back() == '.')) s.remove_suffix(1);
  return s;
}

// Value after "<key>:" when the decorated line starts with key, else nullopt.
std::optional<std::string_view> field_value(std::string_view line, std::string_view key) {
  while (!line.empty() && is_decoration(line.front())) line.remove_prefix(1);
  if (!text::istarts_with(line, key)) return std::nullopt;
  line.remove_prefix(key.size());
  // Markdown bold often wraps the key: "**Decision:** INCLUDE".
  while (!line.empty() && line.front() == '*') line.remove_prefix(1);
  if (line.empty() || line.front() != ':') return std::nullopt;
  line.remove_prefix(1);
  auto v = strip_value(line);
  if (v.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr == s.data() || !std::isfinite(v)) return std::nullopt;
  for (auto* p = ptr; p != s.data() + s.size(); ++p) {
    if (!is_decoration(*p)) return std::nullopt;
  }
  return v;
}

}  // namespace

std::string_view to_string(EnsembleRule rule) noexcept {
  switch (rule) {
    case EnsembleRule::Single: return "single";
    case EnsembleRule::AnyInclude: return "any_include";
    case EnsembleRule::CriticVeto: return "critic_veto";
    case EnsembleRule::AgreementRequired: return "agreement_required";
  }
  return "single";
}

EnsembleRule parse_rule(std::string_view s) {
  const auto v = text::to_lower(text::trim(s));
  if (v == "single") return EnsembleRule::Single;
  if (v == "any_include" || v == "any-include") return EnsembleRule::AnyInclude;
  if (v == "critic_veto" || v == "critic-veto") return EnsembleRule::CriticVeto;
  if (v == "agreement_required" || v == "agreement-required" || v == "agreement") {
    return EnsembleRule::AgreementRequired;
  }
  fail(ErrorCode::InvalidArgument, "unknown ensemble rule '" + std::string(s) + "'");
}

bool default_critic_sees_actor_context(EnsembleRule rule) noexcept {
  return rule != EnsembleRule::AgreementRequired;
}

ScreeningDecision ReplicateSummary::as_decision() const {
  ScreeningDecision d;
  d.record_id = record_id;
  d.role = role;
  d.decision = majority_decision;
  d.confidence = mean_confidence;
  d.replicate = -1;
  return d;
}

ScreeningDecision parse_decision(std::string_view raw_text, const PromptOptions& options) {
  std::optional<std::string> decision_value;
  std::optional<double> confidence;
  std::optional<std::string> rationale;

  for (const auto& line : text::split_lines(raw_text)) {
    if (auto v = field_value(line, "decision")) {
      decision_value = std::string(*v);
    } else if (auto c = field_value(line, "confidence")) {
      if (auto num = parse_number(*c)) confidence = num;
    } else if (auto r = field_value(line, "rationale")) {
      rationale = std::string(*r);
    }
  }

  if (!decision_value) fail(ErrorCode::MissingDecisionLine, "no 'Decision:' line in reply");
  if (!confidence) fail(ErrorCode::MissingConfidenceLine, "no numeric 'Confidence:' line in reply");

  ScreeningDecision out;
  if (text::iequals(*decision_value, options.include_token)) {
    out.decision = Decision::Include;
  } else if (text::iequals(*decision_value, options.exclude_token)) {
    out.decision = Decision::Exclude;
  } else {
    fail(ErrorCode::UnknownDecisionToken, "decision token '" + *decision_value + "'");
  }
  if (*confidence < 0.0 || *confidence > 1.0) {
    fail(ErrorCode::ConfidenceOutOfRange, "confidence " + text::format_double(*confidence));
  }
  out.confidence = *confidence;
  out.rationale = std::move(rationale);
  return out;
}

std::string render_response(Decision decision, double confidence, const PromptOptions& options,
                            const std::optional<std::string>& rationale) {
  std::string out = "Decision: " + options.token(decision) + "\nConfidence: " +
                    text::format_double(confidence);
  if (rationale) out += "\nRationale: " + *rationale;
  return out;
}

ReplicateSummary aggregate_replicates(std::span<const ScreeningDecision> decisions) {
  if (decisions.empty()) fail(ErrorCode::InvalidArgument, "no replicate decisions");
  ReplicateSummary s;
  s.record_id = decisions.front().record_id;
  s.role = decisions.front().role;
  double sum = 0.0;
  for (const auto& d : decisions) {
    if (d.record_id != s.record_id || d.role != s.role) {
      fail(ErrorCode::MixedRecordIds, "replicates mix '" + s.record_id + "' and '" + d.record_id +
                                          "' (" + std::string(to_string(d.role)) + ")");
    }
    if (d.includes()) ++s.include_votes;
    sum += d.confidence;
  }
  s.n_replicates = decisions.size();
  s.mean_confidence = sum / static_cast<double>(s.n_replicates);
  // Ties go to include.
  s.majority_decision =
      2 * s.include_votes >= s.n_replicates ? Decision::Include : Decision::Exclude;
  s.unanimous = s.include_votes == 0 || s.include_votes == s.n_replicates;
  return s;
}

std::set<std::string> plan_critic_set(EnsembleRule rule,
                                      std::span<const ScreeningDecision> actor_decisions) {
  std::set<std::string> out;
  for (const auto& d : actor_decisions) {
    if (needs_critic(rule, d)) out.insert(d.record_id);
  }
  return out;
}

bool needs_critic(EnsembleRule rule, const ScreeningDecision& actor) noexcept {
  switch (rule) {
    case EnsembleRule::Single: return false;
    case EnsembleRule::AnyInclude:
    case EnsembleRule::AgreementRequired: return true;
    case EnsembleRule::CriticVeto: return actor.includes();
  }
  return false;
}

FinalDecision combine(EnsembleRule rule, const ScreeningDecision& actor,
                      const std::optional<ScreeningDecision>& critic) {
  FinalDecision f;
  f.record_id = actor.record_id;
  f.rule = rule;
  f.actor = actor;

  if (rule == EnsembleRule::Single) {
    if (critic) fail(ErrorCode::InvalidArgument, "single-model rule takes no critic decision");
    f.decision = actor.decision;
    f.aggregated_confidence = actor.confidence;
    return f;
  }
  if (!needs_critic(rule, actor)) {
    // Veto mode never asks the critic about actor excludes.
    f.decision = actor.decision;
    f.aggregated_confidence = actor.confidence;
    return f;
  }
  if (!critic) {
    fail(ErrorCode::MissingCriticDecision,
         "rule " + std::string(to_string(rule)) + " needs a critic decision for " +
             actor.record_id);
  }
  if (critic->record_id != actor.record_id) {
    fail(ErrorCode::MixedRecordIds,
         "actor '" + actor.record_id + "' paired with critic '" + critic->record_id + "'");
  }
  switch (rule) {
    case EnsembleRule::AnyInclude:
      f.decision = actor.includes() || critic->includes() ? Decision::Include : Decision::Exclude;
      break;
    case EnsembleRule::AgreementRequired:
      f.decision = actor.includes() && critic->includes() ? Decision::Include : Decision::Exclude;
      break;
    case EnsembleRule::CriticVeto:
      f.decision = critic->decision;
      break;
    case EnsembleRule::Single:
      break;
  }
  f.critic = critic;
  f.aggregated_confidence = (actor.confidence + critic->confidence) / 2.0;
  return f;
}

std::string decisions_csv(std::span<const ScreeningDecision> decisions) {
  std::string out =
      csv::format_row({"record_id", "role", "replicate", "decision", "confidence", "rationale"});
  for (const auto& d : decisions) {
    out += csv::format_row({d.record_id, std::string(to_string(d.role)),
                            std::to_string(d.replicate), std::string(to_string(d.decision)),
                            text::format_double(d.confidence), d.rationale.value_or("")});
  }
  return out;
}

std::string final_decisions_csv(std::span<const FinalDecision> finals) {
  std::string out = csv::format_row({"record_id", "decision", "rule", "aggregated_confidence",
                                     "actor_decision", "actor_confidence", "critic_decision",
                                     "critic_confidence"});
  for (const auto& f : finals) {
    out += csv::format_row(
        {f.record_id, std::string(to_string(f.decision)), std::string(to_string(f.rule)),
         text::format_double(f.aggregated_confidence), std::string(to_string(f.actor.decision)),
         text::format_double(f.actor.confidence),
         f.critic ? std::string(to_string(f.critic->decision)) : std::string{},
         f.critic ? text::format_double(f.critic->confidence) : std::string{}});
  }
  return out;
}

std::vector<FinalDecision> parse_final_decisions_csv(std::string_view csv_text) {
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) fail(ErrorCode::InvalidArgument, "final decisions file has no header");
  auto num = [](const std::string& s, const char* what) {
    auto v = parse_number(s);
    if (!v) fail(ErrorCode::InvalidArgument, std::string("bad ") + what + " '" + s + "'");
    return *v;
  };
  std::vector<FinalDecision> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 8) fail(ErrorCode::InvalidArgument, "final decisions row " + std::to_string(i));
    FinalDecision f;
    f.record_id = r[0];
    f.decision = parse_decision_name(r[1]);
    f.rule = parse_rule(r[2]);
    f.aggregated_confidence = num(r[3], "aggregated_confidence");
    f.actor.record_id = f.record_id;
    f.actor.role = Role::Actor;
    f.actor.decision = parse_decision_name(r[4]);
    f.actor.confidence = num(r[5], "actor_confidence");
    f.actor.replicate = -1;
    if (!r[6].empty()) {
      ScreeningDecision c;
      c.record_id = f.record_id;
      c.role = Role::Critic;
      c.decision = parse_decision_name(r[6]);
      c.confidence = num(r[7], "critic_confidence");
      c.replicate = -1;
      f.critic = c;
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace screenkit
