#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>

#include "fixtures.hpp"
#include "screenkit/error.hpp"
#include "screenkit/pipeline.hpp"
#include "screenkit/text.hpp"
#include "support.hpp"

using namespace screenkit;
using nlohmann::json;
using testsupport::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

bool names_field(const std::vector<FieldError>& errs, const std::string& field) {
  for (const auto& e : errs) {
    if (e.field == field) return true;
  }
  return false;
}

// Wraps a shared mock so tests can count calls across provider instances.
class Counting final : public ChatProvider {
 public:
  Counting(std::shared_ptr<MockProvider> inner, std::shared_ptr<std::atomic<int>> calls)
      : inner_(std::move(inner)), calls_(std::move(calls)) {}
  ProviderReply complete(const ChatRequest& r) override {
    ++*calls_;
    return inner_->complete(r);
  }

 private:
  std::shared_ptr<MockProvider> inner_;
  std::shared_ptr<std::atomic<int>> calls_;
};

struct PlantedSetup {
  fixtures::PlantedCorpus planted = fixtures::planted_corpus();
  std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
  std::shared_ptr<MockProvider> mock;

  PlantedSetup() {
    MockConfig cfg;
    for (const auto& [id, entry] : planted.script.items()) cfg.script[id] = parse_mock_script_entry(entry.dump());
    mock = std::make_shared<MockProvider>(cfg);
  }

  ScreenHooks hooks() {
    ScreenHooks h;
    h.make_provider = [this](const std::string&) { return std::make_unique<Counting>(mock, calls); };
    return h;
  }

  RunConfig config(ScreenMode mode, EnsembleRule rule, const TempDir& dir) {
    testsupport::write(dir / "inc.csv", fixtures::title_list(planted.include_titles));
    RunConfig c;
    c.corpus_csv = planted.csv;
    c.criteria = fixtures::sleep_criteria(false);
    c.mode = mode;
    c.rule = rule;
    c.actor_model_id = "mock:actor";
    if (mode == ScreenMode::ActorCritic) c.critic_model_id = "mock:critic";
    c.final_labels = LabelFiles{dir / "inc.csv", std::nullopt};
    return c;
  }
};

json minimal_config() {
  return {{"corpus_path", "corpus.csv"}, {"criteria_path", "criteria.json"}, {"actor_model_id", "mock:"}};
}

}  // namespace

TEST_CASE("config validation names offending fields") {
  CHECK(validate_run_config(minimal_config()).empty());

  auto j = minimal_config();
  j["mode"] = "actor_critic";
  j["rule"] = "any_include";
  auto errs = validate_run_config(j);
  CHECK(names_field(errs, "critic_model_id"));
  try {
    run_config_from_json(j);
    FAIL("expected ConfigValidation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigValidation);
    CHECK(std::string(e.what()).find("critic_model_id") != std::string::npos);
  }

  j = minimal_config();
  j["mode"] = "actor_critic";
  j["critic_model_id"] = "mock:";
  CHECK(names_field(validate_run_config(j), "rule"));

  j = minimal_config();
  j["replicates"] = 0;
  j["colour"] = "blue";
  j["prompt"] = {{"include_token", ""}};
  j["budget"] = {{"requests_per_minute", 0}};
  errs = validate_run_config(j);
  CHECK(names_field(errs, "replicates"));
  CHECK(names_field(errs, "colour"));
  CHECK(names_field(errs, "prompt.include_token"));
  CHECK(names_field(errs, "budget"));

  j = minimal_config();
  j["prices"] = {{"other", {{"input", 1}, {"output", 2}}}};
  CHECK(names_field(validate_run_config(j), "prices"));

  j = minimal_config();
  j.erase("corpus_path");
  CHECK(names_field(validate_run_config(j), "corpus_path"));
}

TEST_CASE("credentials are refused in config documents") {
  auto j = minimal_config();
  j["api_key"] = "sk-live-123456";
  CHECK(names_field(validate_run_config(j), "api_key"));
  j = minimal_config();
  j["budget"] = {{"Authorization", "Bearer x"}};
  CHECK(names_field(validate_run_config(j), "budget.Authorization"));
}

TEST_CASE("config documents round-trip") {
  TempDir dir;
  auto j = minimal_config();
  j["mode"] = "actor_critic";
  j["rule"] = "critic_veto";
  j["critic_model_id"] = "mock:seed=2";
  j["replicates"] = 3;
  j["labels"] = {{"final", {{"includes", "final.csv"}}}};
  testsupport::write(dir / "config.json", j.dump());
  const auto c = load_run_config(dir / "config.json");
  CHECK(c.corpus_path == dir / "corpus.csv");
  CHECK(c.final_labels->includes == dir / "final.csv");
  CHECK(c.rule == EnsembleRule::CriticVeto);
  CHECK(c.critic_context());
  const auto again = run_config_from_json(to_json(c));
  CHECK(again.replicates == 3);
  CHECK(again.critic_model_id == c.critic_model_id);
  CHECK(validate_run_config(to_json(c)).empty());
}

TEST_CASE("single-model screen of a 10-record corpus") {
  TempDir dir;
  RunConfig c;
  std::string csv = "title,abstract\n";
  for (int i = 0; i < 10; ++i) csv += "Study " + std::to_string(i) + ",text " + std::to_string(i) + "\n";
  c.corpus_csv = csv;
  c.criteria = fixtures::sleep_criteria(false);
  c.actor_model_id = "mock:seed=1";
  std::vector<Phase> phases;
  ScreenHooks hooks;
  hooks.on_progress = [&](const Progress& p) { phases.push_back(p.phase); };
  const auto res = screen(c, dir / "run", hooks);
  CHECK(res.finals.size() == 10);
  CHECK(res.errors.empty());
  CHECK(res.progress.phase == Phase::Done);
  CHECK(res.progress.completed == 10);
  const RunDirLayout layout{dir / "run"};
  CHECK(testsupport::count_lines(testsupport::slurp(layout.final_decisions())) == 11);
  CHECK(json::parse(testsupport::slurp(layout.status()))["phase"] == "done");
  CHECK(std::filesystem::exists(layout.corpus_stats()));
  CHECK(std::filesystem::exists(layout.criteria()));
  CHECK(phases.front() == Phase::Building);
  CHECK(phases.back() == Phase::Done);
  for (std::size_t i = 1; i < phases.size(); ++i) CHECK(static_cast<int>(phases[i]) >= static_cast<int>(phases[i - 1]));
  for (const auto& f : res.finals) CHECK(f.rule == EnsembleRule::Single);
}

TEST_CASE("actor-critic screens follow the rule truth table on the planted corpus") {
  for (auto rule : {EnsembleRule::AnyInclude, EnsembleRule::CriticVeto, EnsembleRule::AgreementRequired}) {
    CAPTURE(to_string(rule));
    TempDir dir;
    PlantedSetup setup;
    const auto res = screen(setup.config(ScreenMode::ActorCritic, rule, dir), dir / "run", setup.hooks());
    const auto& p = setup.planted;
    REQUIRE(res.finals.size() == 50);
    std::size_t critic_calls = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const bool a = p.actor_include[i], c = p.critic_include[i];
      bool expected = false;
      if (rule == EnsembleRule::AnyInclude) expected = a || c;
      if (rule == EnsembleRule::AgreementRequired) expected = a && c;
      if (rule == EnsembleRule::CriticVeto) expected = a && c;
      CHECK(res.finals[i].record_id == p.ids[i]);
      CHECK(res.finals[i].includes() == expected);
      critic_calls += res.finals[i].critic.has_value();
    }
    CHECK(critic_calls == (rule == EnsembleRule::CriticVeto ? 17u : 50u));
    CHECK(setup.calls->load() == static_cast<int>(50 + critic_calls));

    const auto critic_requests = read_requests(RunFiles{RunDirLayout{dir / "run"}.critic_dir()}.requests());
    const bool context = rule != EnsembleRule::AgreementRequired;
    for (const auto& r : critic_requests) {
      CHECK((r.prompt.find("Actor Assessment:") != std::string::npos) == context);
    }
    REQUIRE(res.reports.contains(LabelLevel::Final));
    const auto& cm = res.reports.at(LabelLevel::Final).confusion;
    CHECK(cm.total() == 50);
  }
}

TEST_CASE("single mode reproduces the planted confusion counts") {
  TempDir dir;
  PlantedSetup setup;
  const auto res = screen(setup.config(ScreenMode::Single, EnsembleRule::Single, dir), dir / "run", setup.hooks());
  const auto& r = res.reports.at(LabelLevel::Final);
  CHECK(r.confusion == ConfusionMatrix{12, 5, 3, 30});
  CHECK(std::filesystem::exists(RunDirLayout{dir / "run"}.report_dir(LabelLevel::Final) / "report.json"));
  CHECK(std::filesystem::exists(RunDirLayout{dir / "run"}.report_dir(LabelLevel::Final) / "roc_points.csv"));

  const auto eval = evaluate_run(dir / "run", {dir / "inc.csv", std::nullopt}, LabelLevel::Final);
  CHECK(eval.confusion == r.confusion);
}

TEST_CASE("re-running a finished screen makes no provider calls and rewrites identical outputs") {
  TempDir dir;
  PlantedSetup setup;
  const auto cfg = setup.config(ScreenMode::ActorCritic, EnsembleRule::AnyInclude, dir);
  screen(cfg, dir / "run", setup.hooks());
  const int calls = setup.calls->load();
  const auto finals = testsupport::slurp(RunDirLayout{dir / "run"}.final_decisions());
  screen(cfg, dir / "run", setup.hooks());
  CHECK(setup.calls->load() == calls);
  CHECK(testsupport::slurp(RunDirLayout{dir / "run"}.final_decisions()) == finals);

  PlantedSetup fresh;
  screen(fresh.config(ScreenMode::ActorCritic, EnsembleRule::AnyInclude, dir), dir / "other", fresh.hooks());
  CHECK(testsupport::slurp(RunDirLayout{dir / "other"}.final_decisions()) == finals);
}

TEST_CASE("unparseable replies land in errors.csv") {
  TempDir dir;
  PlantedSetup setup;
  MockConfig cfg;
  for (const auto& [id, entry] : setup.planted.script.items()) cfg.script[id] = parse_mock_script_entry(entry.dump());
  cfg.script["P001"] = parse_mock_script_entry(R"({"raw": "I think this one is fine."})");
  setup.mock = std::make_shared<MockProvider>(cfg);
  const auto res = screen(setup.config(ScreenMode::Single, EnsembleRule::Single, dir), dir / "run", setup.hooks());
  CHECK(res.finals.size() == 49);
  REQUIRE(res.errors.size() == 1);
  CHECK(res.errors[0].record_id == "P001");
  CHECK(res.errors[0].stage == "parse");
  const auto errors = testsupport::slurp(RunDirLayout{dir / "run"}.errors());
  CHECK(errors.find("MissingDecisionLine") != std::string::npos);
  CHECK(res.reports.at(LabelLevel::Final).n_missing_predictions == 1);
}

TEST_CASE("nested label levels are enforced") {
  TempDir dir;
  PlantedSetup setup;
  auto cfg = setup.config(ScreenMode::Single, EnsembleRule::Single, dir);
  std::vector<std::string> fewer(setup.planted.include_titles.begin(), setup.planted.include_titles.begin() + 5);
  testsupport::write(dir / "fulltext.csv", fixtures::title_list(fewer));
  cfg.fulltext_labels = LabelFiles{dir / "fulltext.csv", std::nullopt};
  CHECK(code_of([&] { screen(cfg, dir / "run", setup.hooks()); }) == ErrorCode::LabelConflict);
  CHECK(json::parse(testsupport::slurp(RunDirLayout{dir / "run"}.status()))["phase"] == "failed");
}

TEST_CASE("replicates are aggregated per record") {
  TempDir dir;
  RunConfig c;
  c.corpus_csv = "title,abstract\nA,x\nB,y\nC,z\n";
  c.criteria = fixtures::sleep_criteria(false);
  c.actor_model_id = "mock:seed=8";
  c.replicates = 3;
  const auto res = screen(c, dir / "run");
  CHECK(res.decisions.size() == 9);
  CHECK(res.replicates.size() == 3);
  for (const auto& s : res.replicates) CHECK(s.n_replicates == 3);
  CHECK(testsupport::count_lines(testsupport::slurp(RunDirLayout{dir / "run"}.replicates())) == 4);
}

TEST_CASE("training labels: latest wins, persisted, and optional few-shot injection") {
  TempDir dir;
  TrainingLabelStore store;
  store.upsert({"a", Decision::Include, "2026-01-01T00:00:00Z", "ann"});
  store.upsert({"a", Decision::Exclude, "2026-01-02T00:00:00Z", "ann"});
  CHECK(store.size() == 1);
  CHECK(store.consensus().at("a") == Decision::Exclude);
  store.upsert({"a", Decision::Include, "2026-01-03T00:00:00Z", "bo"});
  CHECK(store.size() == 2);
  CHECK(store.consensus().at("a") == Decision::Include);
  store.save(dir / "labels.json");
  CHECK(TrainingLabelStore::load(dir / "labels.json").size() == 2);
  CHECK(TrainingLabelStore::load(dir / "none.json").size() == 0);

  const auto corpus = parse_corpus("id,title,abstract\ni1,T1,a\ni2,T2,b\ni3,T3,c\ne1,U1,d\ne2,U2,e\ne3,U3,f\n");
  TrainingLabelStore many;
  for (const char* id : {"i1", "i2", "i3"}) many.upsert({id, Decision::Include, "t", "x"});
  for (const char* id : {"e1", "e2", "e3"}) many.upsert({id, Decision::Exclude, "t", "x"});
  const auto shots = select_few_shot(many, corpus);
  REQUIRE(shots.size() == kFewShotExemplars);
  CHECK(std::count_if(shots.begin(), shots.end(), [](const auto& w) { return w.decision == Decision::Include; }) == 2);

  TrainingLabelStore only_inc;
  for (const char* id : {"i1", "i2", "i3"}) only_inc.upsert({id, Decision::Include, "t", "x"});
  CHECK(select_few_shot(only_inc, corpus).size() == 3);

  RunConfig c;
  c.corpus_csv = "id,title,abstract\ni1,T1,a\ne1,U1,d\n";
  c.criteria = fixtures::sleep_criteria(false);
  c.actor_model_id = "mock:seed=8";
  c.few_shot = true;
  many.save(RunDirLayout{dir / "run"}.training_labels());
  screen(c, dir / "run");
  const auto reqs = read_requests(RunFiles{RunDirLayout{dir / "run"}.actor_dir()}.requests());
  CHECK(reqs[0].prompt.find("Worked examples") != std::string::npos);

  c.few_shot = false;
  many.save(RunDirLayout{dir / "plain"}.training_labels());
  screen(c, dir / "plain");
  const auto plain = read_requests(RunFiles{RunDirLayout{dir / "plain"}.actor_dir()}.requests());
  CHECK(plain[0].prompt.find("Worked examples") == std::string::npos);
}

TEST_CASE("inclusion bias flag appends the heuristic") {
  TempDir dir;
  RunConfig c;
  c.corpus_csv = "title\nA\n";
  c.criteria = fixtures::sleep_criteria(false);
  c.actor_model_id = "mock:";
  c.inclusion_bias = true;
  screen(c, dir / "run");
  const auto saved = load_criteria(RunDirLayout{dir / "run"}.criteria());
  CHECK(saved.inclusion_bias);
  CHECK(saved.inclusion.back().label == "Heuristic");
}

TEST_CASE("a locked run directory is refused") {
  TempDir dir;
  RunConfig c;
  c.corpus_csv = "title\nA\n";
  c.criteria = fixtures::sleep_criteria(false);
  c.actor_model_id = "mock:";
  RunDirLock held(dir / "run");
  CHECK(code_of([&] { screen(c, dir / "run"); }) == ErrorCode::RunDirLocked);
}
