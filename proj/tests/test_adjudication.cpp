#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "screenkit/adjudication.hpp"
#include "screenkit/error.hpp"
#include "support.hpp"

using namespace screenkit;
using testsupport::Rng;

namespace {

ScreeningDecision dec(std::string id, Role role, bool include, double conf, int rep = 0) {
  ScreeningDecision d;
  d.record_id = std::move(id);
  d.role = role;
  d.decision = include ? Decision::Include : Decision::Exclude;
  d.confidence = conf;
  d.replicate = rep;
  return d;
}

ErrorCode parse_error(const std::string& raw, const PromptOptions& opts = {}) {
  try {
    parse_decision(raw, opts);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a parse error for: " << raw);
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("parser: spec examples") {
  auto d = parse_decision("Decision: INCLUDE\nConfidence: 0.85", {});
  CHECK(d.decision == Decision::Include);
  CHECK(d.confidence == 0.85);

  d = parse_decision("- Inclusion-1 met? yes\n- Exclusion-1 applies? no\nDecision: EXCLUDE\nConfidence: 1", {});
  CHECK(d.decision == Decision::Exclude);
  CHECK(d.confidence == 1.0);

  CHECK(parse_error("Decision: MAYBE\nConfidence: 0.5") == ErrorCode::UnknownDecisionToken);
  CHECK(parse_error("Decision: INCLUDE\nConfidence: 1.7") == ErrorCode::ConfidenceOutOfRange);
  CHECK(parse_error("Decision: INCLUDE\nConfidence: -0.1") == ErrorCode::ConfidenceOutOfRange);
  CHECK(parse_error("Confidence: 0.5") == ErrorCode::MissingDecisionLine);
  CHECK(parse_error("Decision: INCLUDE") == ErrorCode::MissingConfidenceLine);
  CHECK(parse_error("Decision: INCLUDE\nConfidence: high") == ErrorCode::MissingConfidenceLine);
}

TEST_CASE("parser: last lines win, tokens are case-insensitive, decoration tolerated") {
  auto d = parse_decision("Decision: EXCLUDE\nConfidence: 0.2\nOn reflection:\nDecision: include\nConfidence: 0.9", {});
  CHECK(d.decision == Decision::Include);
  CHECK(d.confidence == 0.9);

  d = parse_decision("**Decision:** INCLUDE\n**Confidence:** 0.60\nRationale: adults, asthma", {});
  CHECK(d.decision == Decision::Include);
  CHECK(d.confidence == 0.6);
  REQUIRE(d.rationale.has_value());
  CHECK(*d.rationale == "adults, asthma");

  PromptOptions yx;
  yx.include_token = "YYY";
  yx.exclude_token = "XXX";
  CHECK(parse_decision("Decision: xxx\nConfidence: 0", yx).decision == Decision::Exclude);
  CHECK(parse_error("Decision: INCLUDE\nConfidence: 0.5", yx) == ErrorCode::UnknownDecisionToken);
}

TEST_CASE("property: parse of a rendered reply is the identity") {
  Rng rng(31);
  for (int iter = 0; iter < 1000; ++iter) {
    PromptOptions opts;
    if (testsupport::coin(rng)) {
      opts.include_token = "KEEP";
      opts.exclude_token = "DROP";
    }
    const bool include = testsupport::coin(rng);
    const double conf = testsupport::coin(rng, 0.1) ? static_cast<double>(testsupport::uniform_int(rng, 0, 1))
                                                   : testsupport::uniform01(rng);
    const auto raw = render_response(include ? Decision::Include : Decision::Exclude, conf, opts);
    const auto d = parse_decision(raw, opts);
    CHECK(d.includes() == include);
    CHECK(d.confidence == conf);
  }
}

TEST_CASE("fuzz: random strings either parse or raise a typed error") {
  Rng rng(32);
  const std::string alphabet = "DecisionConfidence:INCLUDEEXCLUDE0123456789.-+eE \n\t*#\"'\xC3\xA9\xFF";
  for (int iter = 0; iter < 10000; ++iter) {
    std::string s;
    const int n = testsupport::uniform_int(rng, 0, 80);
    for (int i = 0; i < n; ++i) s += alphabet[static_cast<std::size_t>(testsupport::uniform_int(rng, 0, static_cast<int>(alphabet.size()) - 1))];
    if (testsupport::coin(rng, 0.3)) s = "Decision: " + s;
    if (testsupport::coin(rng, 0.3)) s += "\nConfidence: " + s.substr(0, s.size() / 3);
    try {
      const auto d = parse_decision(s, {});
      CHECK(d.confidence >= 0.0);
      CHECK(d.confidence <= 1.0);
    } catch (const Error&) {
    }
  }
}

TEST_CASE("replicate aggregation") {
  const std::vector<ScreeningDecision> one = {dec("a", Role::Actor, true, 0.8)};
  auto s = aggregate_replicates(one);
  CHECK(s.majority_decision == Decision::Include);
  CHECK(s.mean_confidence == doctest::Approx(0.8));
  CHECK(s.unanimous);

  const std::vector<ScreeningDecision> three = {dec("a", Role::Actor, true, 0.9, 0), dec("a", Role::Actor, false, 0.7, 1),
                                                dec("a", Role::Actor, true, 0.5, 2)};
  s = aggregate_replicates(three);
  CHECK(s.include_votes == 2);
  CHECK(s.n_replicates == 3);
  CHECK(s.majority_decision == Decision::Include);
  CHECK(s.mean_confidence == doctest::Approx(0.7));
  CHECK_FALSE(s.unanimous);

  const std::vector<ScreeningDecision> tie = {dec("a", Role::Actor, true, 0.6), dec("a", Role::Actor, false, 0.6, 1)};
  CHECK(aggregate_replicates(tie).majority_decision == Decision::Include);

  const std::vector<ScreeningDecision> mixed = {dec("a", Role::Actor, true, 0.6), dec("b", Role::Actor, true, 0.6)};
  try {
    aggregate_replicates(mixed);
    FAIL("expected MixedRecordIds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MixedRecordIds);
  }
}

TEST_CASE("property: replicate summary invariants") {
  Rng rng(33);
  for (int iter = 0; iter < 500; ++iter) {
    std::vector<ScreeningDecision> ds;
    const int n = testsupport::uniform_int(rng, 1, 9);
    for (int i = 0; i < n; ++i) ds.push_back(dec("r", Role::Critic, testsupport::coin(rng), testsupport::uniform01(rng), i));
    const auto s = aggregate_replicates(ds);
    CHECK(s.include_votes <= s.n_replicates);
    CHECK(s.unanimous == (s.include_votes == 0 || s.include_votes == s.n_replicates));
    CHECK((s.majority_decision == Decision::Include) == (2 * s.include_votes >= s.n_replicates));
    const auto [lo, hi] = std::minmax_element(ds.begin(), ds.end(), [](auto& a, auto& b) { return a.confidence < b.confidence; });
    CHECK(s.mean_confidence >= lo->confidence - 1e-15);
    CHECK(s.mean_confidence <= hi->confidence + 1e-15);
  }
}

TEST_CASE("critic set planning") {
  const std::vector<ScreeningDecision> actors = {dec("A", Role::Actor, true, 0.9), dec("B", Role::Actor, false, 0.9)};
  CHECK(plan_critic_set(EnsembleRule::CriticVeto, actors) == std::set<std::string>{"A"});
  CHECK(plan_critic_set(EnsembleRule::AnyInclude, actors) == std::set<std::string>{"A", "B"});
  const std::vector<ScreeningDecision> excl = {dec("A", Role::Actor, false, 0.9), dec("B", Role::Actor, false, 0.9)};
  CHECK(plan_critic_set(EnsembleRule::AgreementRequired, excl) == std::set<std::string>{"A", "B"});
  CHECK(plan_critic_set(EnsembleRule::Single, actors).empty());
}

TEST_CASE("combine: spec examples") {
  const auto a_inc = dec("r", Role::Actor, true, 0.8);
  const auto c_inc = dec("r", Role::Critic, true, 0.6);
  for (auto rule : {EnsembleRule::AnyInclude, EnsembleRule::CriticVeto, EnsembleRule::AgreementRequired}) {
    const auto f = combine(rule, a_inc, c_inc);
    CHECK(f.includes());
    CHECK(f.aggregated_confidence == doctest::Approx(0.7));
  }

  const auto c_exc = dec("r", Role::Critic, false, 0.6);
  CHECK(combine(EnsembleRule::AnyInclude, a_inc, c_exc).includes());
  CHECK_FALSE(combine(EnsembleRule::CriticVeto, a_inc, c_exc).includes());
  CHECK_FALSE(combine(EnsembleRule::AgreementRequired, a_inc, c_exc).includes());
  CHECK(combine(EnsembleRule::CriticVeto, a_inc, c_exc).aggregated_confidence == doctest::Approx(0.7));

  const auto a_exc = dec("r", Role::Actor, false, 0.9);
  const auto c_inc2 = dec("r", Role::Critic, true, 0.4);
  auto f = combine(EnsembleRule::AnyInclude, a_exc, c_inc2);
  CHECK(f.includes());
  CHECK(f.aggregated_confidence == doctest::Approx(0.65));
  f = combine(EnsembleRule::AgreementRequired, a_exc, c_inc2);
  CHECK_FALSE(f.includes());
  CHECK(f.aggregated_confidence == doctest::Approx(0.65));
  f = combine(EnsembleRule::CriticVeto, a_exc, std::nullopt);
  CHECK_FALSE(f.includes());
  CHECK(f.aggregated_confidence == 0.9);
  CHECK_FALSE(f.critic.has_value());

  f = combine(EnsembleRule::Single, a_exc, std::nullopt);
  CHECK(f.aggregated_confidence == 0.9);
  CHECK_FALSE(f.critic.has_value());
}

TEST_CASE("combine: missing critic verdicts") {
  const auto a_inc = dec("r", Role::Actor, true, 0.8);
  for (auto rule : {EnsembleRule::AnyInclude, EnsembleRule::CriticVeto, EnsembleRule::AgreementRequired}) {
    try {
      combine(rule, a_inc, std::nullopt);
      FAIL("expected MissingCriticDecision");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingCriticDecision);
    }
  }
  CHECK(needs_critic(EnsembleRule::CriticVeto, a_inc));
  CHECK_FALSE(needs_critic(EnsembleRule::CriticVeto, dec("r", Role::Actor, false, 0.8)));
  CHECK_FALSE(needs_critic(EnsembleRule::Single, a_inc));
}

TEST_CASE("critic context defaults per rule") {
  CHECK(default_critic_sees_actor_context(EnsembleRule::AnyInclude));
  CHECK(default_critic_sees_actor_context(EnsembleRule::CriticVeto));
  CHECK_FALSE(default_critic_sees_actor_context(EnsembleRule::AgreementRequired));
  CHECK(parse_rule("critic-veto") == EnsembleRule::CriticVeto);
}

TEST_CASE("decision files round-trip") {
  std::vector<FinalDecision> finals;
  finals.push_back(combine(EnsembleRule::AnyInclude, dec("a,1", Role::Actor, true, 0.8), dec("a,1", Role::Critic, false, 0.3)));
  finals.push_back(combine(EnsembleRule::CriticVeto, dec("b", Role::Actor, false, 0.55), std::nullopt));
  const auto csv_text = final_decisions_csv(finals);
  CHECK(csv_text.rfind("record_id,decision,rule,aggregated_confidence,actor_decision,actor_confidence,critic_decision,critic_confidence\n", 0) == 0);
  const auto back = parse_final_decisions_csv(csv_text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].record_id == "a,1");
  CHECK(back[0].includes());
  CHECK(back[0].aggregated_confidence == finals[0].aggregated_confidence);
  REQUIRE(back[0].critic.has_value());
  CHECK(back[0].critic->confidence == 0.3);
  CHECK_FALSE(back[1].critic.has_value());
  CHECK(back[1].rule == EnsembleRule::CriticVeto);
  CHECK(final_decisions_csv(back) == csv_text);

  std::vector<ScreeningDecision> ds = {dec("x", Role::Actor, true, 0.25)};
  ds[0].rationale = "quoted \"text\"";
  CHECK(decisions_csv(ds) == "record_id,role,replicate,decision,confidence,rationale\nx,actor,0,include,0.25,\"quoted \"\"text\"\"\"\n");
}
