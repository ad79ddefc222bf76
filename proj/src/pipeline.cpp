#include "screenkit/pipeline.hpp"

#include <algorithm>
#include <set>

#include "screenkit/csv.hpp"
#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ScreenMode m) noexcept {
  return m == ScreenMode::Single ? "single" : "actor_critic";
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Building: return "building";
    case Phase::ActorPass: return "actor_pass";
    case Phase::CriticPass: return "critic_pass";
    case Phase::Adjudicating: return "adjudicating";
    case Phase::Evaluating: return "evaluating";
    case Phase::Done: return "done";
    case Phase::Failed: return "failed";
  }
  return "failed";
}

Phase parse_phase(std::string_view s) {
  for (Phase p : {Phase::Building, Phase::ActorPass, Phase::CriticPass, Phase::Adjudicating,
                  Phase::Evaluating, Phase::Done, Phase::Failed}) {
    if (to_string(p) == s) return p;
  }
  fail(ErrorCode::InvalidArgument, "unknown phase '" + std::string(s) + "'");
}

bool RunConfig::critic_context() const {
  return critic_sees_actor_context.value_or(default_critic_sees_actor_context(rule));
}

namespace {

const std::set<std::string> kCredentialKeys = {
    "api_key", "apikey", "api-key", "access_token", "auth_token", "bearer_token",
    "secret",  "secret_key", "client_secret", "password", "authorization", "credentials"};

const std::set<std::string> kConfigKeys = {
    "corpus_path", "corpus_csv", "criteria_path", "criteria", "column_map", "mode", "rule",
    "actor_model_id", "critic_model_id", "replicates", "budget", "prompt",
    "critic_sees_actor_context", "inclusion_bias", "few_shot", "max_output_tokens",
    "temperature", "labels", "prices"};

void find_credentials(const json& j, const std::string& path, std::vector<FieldError>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      const std::string field = path.empty() ? key : path + "." + key;
      if (kCredentialKeys.contains(text::to_lower(key))) {
        out.push_back({field, "credentials are read from environment variables, never from config"});
      }
      find_credentials(value, field, out);
    }
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      find_credentials(j[i], path + "[" + std::to_string(i) + "]", out);
    }
  }
}

bool is_nonempty_string(const json& j) { return j.is_string() && !j.get<std::string>().empty(); }

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

json label_files_json(const LabelFiles& f) {
  json j = {{"includes", f.includes.string()}};
  if (f.excludes) j["excludes"] = f.excludes->string();
  return j;
}

}  // namespace

std::vector<FieldError> validate_run_config(const json& j) {
  std::vector<FieldError> errs;
  if (!j.is_object()) return {{"config", "expected a JSON object"}};
  find_credentials(j, "", errs);
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.contains(key) && !kCredentialKeys.contains(text::to_lower(key))) {
      errs.push_back({key, "unknown field"});
    }
  }

  if (j.contains("corpus_csv")) {
    if (!is_nonempty_string(j["corpus_csv"])) errs.push_back({"corpus_csv", "must be CSV text"});
  } else if (!j.contains("corpus_path") || !is_nonempty_string(j["corpus_path"])) {
    errs.push_back({"corpus_path", "required (or give corpus_csv)"});
  }
  if (j.contains("criteria")) {
    try {
      criteria_from_json(j["criteria"]);
    } catch (const std::exception& e) {
      errs.push_back({"criteria", e.what()});
    }
  } else if (!j.contains("criteria_path") || !is_nonempty_string(j["criteria_path"])) {
    errs.push_back({"criteria_path", "required (or give criteria)"});
  }
  if (j.contains("column_map")) {
    const auto& m = j["column_map"];
    bool ok = m.is_object();
    if (ok) {
      for (const auto& [k, v] : m.items()) ok = ok && v.is_string();
    }
    if (!ok) errs.push_back({"column_map", "must map field names to header strings"});
  }

  std::string mode = "single";
  if (j.contains("mode")) {
    if (!j["mode"].is_string() ||
        (j["mode"] != "single" && j["mode"] != "actor_critic")) {
      errs.push_back({"mode", "must be 'single' or 'actor_critic'"});
    } else {
      mode = j["mode"].get<std::string>();
    }
  }
  if (!j.contains("actor_model_id") || !is_nonempty_string(j["actor_model_id"])) {
    errs.push_back({"actor_model_id", "required"});
  }
  if (mode == "actor_critic") {
    if (!j.contains("critic_model_id") || !is_nonempty_string(j["critic_model_id"])) {
      errs.push_back({"critic_model_id", "required when mode is actor_critic"});
    }
    if (!j.contains("rule")) {
      errs.push_back({"rule", "required when mode is actor_critic"});
    } else if (!j["rule"].is_string() ||
               (j["rule"] != "any_include" && j["rule"] != "critic_veto" &&
                j["rule"] != "agreement_required")) {
      errs.push_back({"rule", "must be any_include, critic_veto or agreement_required"});
    }
  } else {
    if (j.contains("rule") && j["rule"] != "single") {
      errs.push_back({"rule", "only 'single' applies when mode is single"});
    }
    if (j.contains("critic_model_id")) {
      errs.push_back({"critic_model_id", "only valid when mode is actor_critic"});
    }
  }
  if (j.contains("replicates") &&
      (!j["replicates"].is_number_integer() || j["replicates"].get<long long>() < 1)) {
    errs.push_back({"replicates", "must be an integer >= 1"});
  }
  if (j.contains("budget")) {
    try {
      rate_budget_from_json(j["budget"]);
    } catch (const std::exception& e) {
      errs.push_back({"budget", e.what()});
    }
  }
  if (j.contains("prompt")) {
    const auto& p = j["prompt"];
    if (!p.is_object()) {
      errs.push_back({"prompt", "must be an object"});
    } else {
      for (const auto& [k, v] : p.items()) {
        if (k == "include_token" || k == "exclude_token") {
          if (!is_nonempty_string(v)) errs.push_back({"prompt." + k, "must be a non-empty string"});
        } else if (k == "max_rationale_words") {
          if (!v.is_number_integer() || v.get<long long>() < 1) {
            errs.push_back({"prompt.max_rationale_words", "must be an integer >= 1"});
          }
        } else {
          errs.push_back({"prompt." + k, "unknown field"});
        }
      }
    }
  }
  for (const char* key : {"critic_sees_actor_context", "inclusion_bias", "few_shot"}) {
    if (j.contains(key) && !j[key].is_boolean()) errs.push_back({key, "must be a boolean"});
  }
  if (j.contains("max_output_tokens") &&
      (!j["max_output_tokens"].is_number_integer() || j["max_output_tokens"].get<long long>() < 16)) {
    errs.push_back({"max_output_tokens", "must be an integer >= 16"});
  }
  if (j.contains("temperature") &&
      (!j["temperature"].is_number() || j["temperature"].get<double>() < 0.0 ||
       j["temperature"].get<double>() > 2.0)) {
    errs.push_back({"temperature", "must be a number in [0, 2]"});
  }
  if (j.contains("labels")) {
    const auto& l = j["labels"];
    if (!l.is_object()) {
      errs.push_back({"labels", "must be an object keyed by level"});
    } else {
      for (const auto& [level, files] : l.items()) {
        const std::string field = "labels." + level;
        if (level != "fulltext" && level != "final") {
          errs.push_back({field, "level must be fulltext or final"});
        } else if (!files.is_object() || !files.contains("includes") ||
                   !is_nonempty_string(files["includes"]) ||
                   (files.contains("excludes") && !is_nonempty_string(files["excludes"]))) {
          errs.push_back({field, "needs an includes path and optionally an excludes path"});
        }
      }
    }
  }
  if (j.contains("prices")) {
    try {
      const auto prices = price_table_from_json(j["prices"]);
      for (const char* key : {"actor_model_id", "critic_model_id"}) {
        if (j.contains(key) && j[key].is_string() && !prices.contains(j[key].get<std::string>())) {
          errs.push_back({"prices", "no entry for " + j[key].get<std::string>()});
        }
      }
    } catch (const std::exception& e) {
      errs.push_back({"prices", e.what()});
    }
  }
  return errs;
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  const auto errs = validate_run_config(j);
  if (!errs.empty()) {
    std::string msg;
    for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e.field + ": " + e.message;
    fail(ErrorCode::ConfigValidation, msg);
  }
  RunConfig c;
  if (j.contains("corpus_path")) c.corpus_path = resolve(base_dir, j["corpus_path"]);
  if (j.contains("corpus_csv")) c.corpus_csv = j["corpus_csv"].get<std::string>();
  if (j.contains("criteria_path")) c.criteria_path = resolve(base_dir, j["criteria_path"]);
  if (j.contains("criteria")) c.criteria = criteria_from_json(j["criteria"]);
  if (j.contains("column_map")) c.column_map = j["column_map"].get<ColumnMap>();
  c.mode = j.value("mode", std::string("single")) == "actor_critic" ? ScreenMode::ActorCritic
                                                                   : ScreenMode::Single;
  c.rule = c.mode == ScreenMode::ActorCritic ? parse_rule(j["rule"].get<std::string>())
                                             : EnsembleRule::Single;
  c.actor_model_id = j["actor_model_id"].get<std::string>();
  if (j.contains("critic_model_id")) c.critic_model_id = j["critic_model_id"].get<std::string>();
  c.replicates = j.value("replicates", 1);
  if (j.contains("budget")) c.budget = rate_budget_from_json(j["budget"]);
  if (j.contains("prompt")) {
    const auto& p = j["prompt"];
    c.prompt.include_token = p.value("include_token", c.prompt.include_token);
    c.prompt.exclude_token = p.value("exclude_token", c.prompt.exclude_token);
    if (p.contains("max_rationale_words")) {
      c.prompt.max_rationale_words = p["max_rationale_words"].get<std::size_t>();
    }
  }
  if (j.contains("critic_sees_actor_context")) {
    c.critic_sees_actor_context = j["critic_sees_actor_context"].get<bool>();
  }
  c.inclusion_bias = j.value("inclusion_bias", false);
  c.few_shot = j.value("few_shot", false);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.temperature = j.value("temperature", c.temperature);
  if (j.contains("labels")) {
    for (const auto& [level, files] : j["labels"].items()) {
      LabelFiles lf;
      lf.includes = resolve(base_dir, files["includes"]);
      if (files.contains("excludes")) lf.excludes = resolve(base_dir, files["excludes"]);
      (level == "final" ? c.final_labels : c.fulltext_labels) = lf;
    }
  }
  if (j.contains("prices")) c.prices = price_table_from_json(j["prices"]);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigValidation, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

json to_json(const RunConfig& c) {
  json j;
  if (c.corpus_csv) {
    j["corpus_csv"] = *c.corpus_csv;
  } else {
    j["corpus_path"] = c.corpus_path.string();
  }
  if (c.criteria) {
    j["criteria"] = to_json(*c.criteria);
  } else {
    j["criteria_path"] = c.criteria_path.string();
  }
  if (!c.column_map.empty()) j["column_map"] = c.column_map;
  j["mode"] = std::string(to_string(c.mode));
  j["rule"] = std::string(to_string(c.rule));
  j["actor_model_id"] = c.actor_model_id;
  if (c.critic_model_id) j["critic_model_id"] = *c.critic_model_id;
  j["replicates"] = c.replicates;
  j["budget"] = to_json(c.budget);
  json prompt = {{"include_token", c.prompt.include_token},
                 {"exclude_token", c.prompt.exclude_token}};
  if (c.prompt.max_rationale_words) prompt["max_rationale_words"] = *c.prompt.max_rationale_words;
  j["prompt"] = prompt;
  if (c.critic_sees_actor_context) j["critic_sees_actor_context"] = *c.critic_sees_actor_context;
  j["inclusion_bias"] = c.inclusion_bias;
  j["few_shot"] = c.few_shot;
  j["max_output_tokens"] = c.max_output_tokens;
  j["temperature"] = c.temperature;
  if (c.fulltext_labels || c.final_labels) {
    json labels = json::object();
    if (c.fulltext_labels) labels["fulltext"] = label_files_json(*c.fulltext_labels);
    if (c.final_labels) labels["final"] = label_files_json(*c.final_labels);
    j["labels"] = labels;
  }
  if (c.prices) {
    json prices = json::object();
    for (const auto& [model, p] : *c.prices) {
      prices[model] = {{"input", p.input_per_million}, {"output", p.output_per_million}};
    }
    j["prices"] = prices;
  }
  return j;
}

void TrainingLabelStore::upsert(TrainingLabel label) {
  if (label.record_id.empty()) fail(ErrorCode::InvalidArgument, "label without record_id");
  for (auto& existing : labels_) {
    if (existing.record_id == label.record_id && existing.labeler == label.labeler) {
      existing = std::move(label);
      return;
    }
  }
  labels_.push_back(std::move(label));
}

std::map<std::string, Decision> TrainingLabelStore::consensus() const {
  std::map<std::string, const TrainingLabel*> latest;
  for (const auto& l : labels_) {
    auto& slot = latest[l.record_id];
    if (slot == nullptr || l.labeled_at >= slot->labeled_at) slot = &l;
  }
  std::map<std::string, Decision> out;
  for (const auto& [id, l] : latest) out[id] = l->human_decision;
  return out;
}

TrainingLabelStore TrainingLabelStore::load(const fs::path& path) {
  TrainingLabelStore store;
  if (!fs::exists(path)) return store;
  try {
    const auto j = json::parse(text::read_file(path));
    for (const auto& l : j.at("labels")) {
      store.labels_.push_back({l.at("record_id").get<std::string>(),
                               parse_decision_name(l.at("human_decision").get<std::string>()),
                               l.value("labeled_at", std::string{}),
                               l.value("labeler", std::string{})});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, path.string() + ": " + e.what());
  }
  return store;
}

void TrainingLabelStore::save(const fs::path& path) const {
  json arr = json::array();
  for (const auto& l : labels_) {
    arr.push_back({{"record_id", l.record_id},
                   {"human_decision", std::string(to_string(l.human_decision))},
                   {"labeled_at", l.labeled_at},
                   {"labeler", l.labeler}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  text::write_file_atomic(path, json({{"labels", arr}}).dump(2) + "\n");
}

std::vector<WorkedExample> select_few_shot(const TrainingLabelStore& store, const Corpus& corpus,
                                           std::size_t k) {
  std::vector<const Record*> inc;
  std::vector<const Record*> exc;
  for (const auto& [id, d] : store.consensus()) {
    const Record* r = corpus.find(id);
    if (r == nullptr) continue;
    (d == Decision::Include ? inc : exc).push_back(r);
  }
  std::size_t n_inc = std::min(inc.size(), k / 2 + k % 2);
  std::size_t n_exc = std::min(exc.size(), k - n_inc);
  n_inc = std::min(inc.size(), k - n_exc);
  std::vector<WorkedExample> out;
  for (std::size_t i = 0; i < std::max(n_inc, n_exc); ++i) {
    if (i < n_inc) out.push_back({inc[i]->title, inc[i]->abstract, Decision::Include});
    if (i < n_exc) out.push_back({exc[i]->title, exc[i]->abstract, Decision::Exclude});
  }
  return out;
}

std::string errors_csv(std::span<const ScreeningError> errors) {
  std::string out = csv::format_row({"record_id", "role", "replicate", "stage", "message"});
  for (const auto& e : errors) {
    out += csv::format_row({e.record_id, std::string(to_string(e.role)),
                            std::to_string(e.replicate), e.stage, e.message});
  }
  return out;
}

json to_json(const Progress& p) {
  json j = {{"phase", std::string(to_string(p.phase))},
            {"completed", p.completed},
            {"pending", p.pending},
            {"failed", p.failed},
            {"cost_accrued", p.cost_accrued}};
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

void write_report(const EvaluationReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  text::write_file_atomic(dir / "report.json", to_json(report).dump(2) + "\n");
  text::write_file_atomic(dir / "roc_points.csv", roc_points_csv(report.roc));
  text::write_file_atomic(dir / "reliability_bins.csv", reliability_bins_csv(report.reliability));
}

std::vector<FinalDecision> read_final_decisions(const fs::path& run_dir) {
  return parse_final_decisions_csv(text::read_file(RunDirLayout{run_dir}.final_decisions()));
}

EvaluationReport evaluate_run(const fs::path& run_dir, const LabelFiles& labels,
                              LabelLevel level) {
  const RunDirLayout layout{run_dir};
  const Corpus corpus = load_corpus(layout.corpus());
  const auto label_set = load_labels(labels.includes, labels.excludes, level, corpus).labels;
  const auto finals = read_final_decisions(run_dir);
  auto report = evaluate(finals, label_set, level);
  write_report(report, layout.report_dir(level));
  return report;
}

namespace {

class ProgressTracker {
 public:
  ProgressTracker(const RunDirLayout& layout, const std::function<void(const Progress&)>& cb,
                  const std::optional<PriceTable>& prices)
      : layout_(layout), callback_(cb), prices_(prices) {}

  void phase(Phase p) {
    progress_.phase = p;
    publish();
  }

  void pass_update(const RunLedger& ledger) {
    progress_.completed = base_completed_ + ledger.completed_ids.size();
    progress_.failed = base_failed_ + ledger.failed_ids.size();
    progress_.pending = ledger.pending_ids.size();
    progress_.cost_accrued = base_cost_ + (prices_ ? estimate_cost(ledger, *prices_) : 0.0);
    publish();
  }

  void pass_done(const RunLedger& ledger) {
    pass_update(ledger);
    base_completed_ = progress_.completed;
    base_failed_ = progress_.failed;
    base_cost_ = progress_.cost_accrued;
  }

  void failed(const std::string& message) {
    progress_.phase = Phase::Failed;
    progress_.error = message;
    try {
      publish();
    } catch (const std::exception&) {
      // The original failure matters more than a status write.
    }
  }

  const Progress& progress() const { return progress_; }

 private:
  void publish() {
    text::write_file_atomic(layout_.status(), to_json(progress_).dump(2) + "\n");
    if (callback_) callback_(progress_);
  }

  const RunDirLayout& layout_;
  const std::function<void(const Progress&)>& callback_;
  const std::optional<PriceTable>& prices_;
  Progress progress_;
  std::size_t base_completed_ = 0;
  std::size_t base_failed_ = 0;
  double base_cost_ = 0.0;
};

struct PassOutput {
  std::map<std::string, ScreeningDecision> by_record;  // per-record verdict after replicates
  std::vector<ScreeningDecision> decisions;
  std::vector<ReplicateSummary> summaries;
  std::vector<ScreeningError> errors;
};

PassOutput execute_pass(const std::vector<ChatRequest>& requests, const fs::path& dir,
                        const std::string& model_id, Role role, const RunConfig& config,
                        const PromptOptions& parse_options, const std::vector<std::string>& order,
                        const ScreenHooks& hooks, ProgressTracker& tracker) {
  PassOutput out;
  if (requests.empty()) return out;
  const RunFiles files{dir};
  fs::create_directories(dir);
  if (!fs::exists(files.ledger())) write_requests(files.requests(), requests);

  auto provider = hooks.make_provider ? hooks.make_provider(model_id) : make_provider(model_id);
  RunOptions options;
  options.clock = hooks.clock;
  options.prices = config.prices;
  options.on_progress = [&](const RunLedger& l) { tracker.pass_update(l); };
  const auto result =
      run_or_resume(files.requests(), *provider, config.budget, dir, options);
  tracker.pass_done(result.ledger);

  std::map<std::string, ChatResponse> responses;
  for (auto& r : read_responses(files.responses())) responses[r.custom_id] = std::move(r);

  std::map<std::string, std::vector<ScreeningDecision>> grouped;
  for (const auto& req : requests) {
    const auto id = parse_custom_id(req.custom_id);
    auto it = responses.find(req.custom_id);
    if (it == responses.end()) {
      out.errors.push_back({id.record_id, role, id.replicate, "provider", "no response recorded"});
      continue;
    }
    const auto& resp = it->second;
    if (resp.status != ResponseStatus::Ok) {
      out.errors.push_back({id.record_id, role, id.replicate, "provider",
                            std::string(to_string(resp.status)) + ": " + resp.error});
      continue;
    }
    try {
      auto d = parse_decision(resp.raw_text, parse_options);
      d.record_id = id.record_id;
      d.role = role;
      d.replicate = id.replicate;
      out.decisions.push_back(d);
      grouped[id.record_id].push_back(std::move(d));
    } catch (const Error& e) {
      out.errors.push_back({id.record_id, role, id.replicate, "parse", e.what()});
    }
  }
  for (const auto& record_id : order) {
    auto it = grouped.find(record_id);
    if (it == grouped.end()) continue;
    const auto summary = aggregate_replicates(it->second);
    out.summaries.push_back(summary);
    out.by_record[record_id] = it->second.size() == 1 ? it->second.front() : summary.as_decision();
  }
  return out;
}

std::string replicates_csv(std::span<const ReplicateSummary> summaries) {
  std::string out = csv::format_row({"record_id", "role", "n_replicates", "include_votes",
                                     "majority_decision", "mean_confidence", "unanimous"});
  for (const auto& s : summaries) {
    out += csv::format_row({s.record_id, std::string(to_string(s.role)),
                            std::to_string(s.n_replicates), std::to_string(s.include_votes),
                            std::string(to_string(s.majority_decision)),
                            text::format_double(s.mean_confidence),
                            s.unanimous ? "true" : "false"});
  }
  return out;
}

ScreenResult screen_locked(const RunConfig& config, const RunDirLayout& layout,
                           const ScreenHooks& hooks, ProgressTracker& tracker) {
  ScreenResult result;
  tracker.phase(Phase::Building);

  const Corpus corpus = config.corpus_csv ? parse_corpus(*config.corpus_csv, config.column_map)
                                          : load_corpus(config.corpus_path, config.column_map);
  Criteria criteria = config.criteria ? *config.criteria : load_criteria(config.criteria_path);
  if (config.inclusion_bias && !criteria.inclusion_bias) criteria = apply_inclusion_bias(criteria);
  if (config.mode == ScreenMode::ActorCritic && !config.critic_model_id) {
    fail(ErrorCode::ConfigValidation, "critic_model_id: required when mode is actor_critic");
  }
  if (config.replicates < 1) fail(ErrorCode::ConfigValidation, "replicates: must be >= 1");

  PromptOptions actor_options = config.prompt;
  actor_options.role = Role::Actor;
  if (config.few_shot) {
    actor_options.worked_examples =
        select_few_shot(TrainingLabelStore::load(layout.training_labels()), corpus);
  }
  validate(criteria, actor_options);

  std::optional<LabelSet> fulltext;
  std::optional<LabelSet> final_level;
  if (config.fulltext_labels) {
    fulltext = load_labels(config.fulltext_labels->includes, config.fulltext_labels->excludes,
                           LabelLevel::Fulltext, corpus)
                   .labels;
  }
  if (config.final_labels) {
    final_level = load_labels(config.final_labels->includes, config.final_labels->excludes,
                              LabelLevel::Final, corpus)
                      .labels;
  }
  if (fulltext && final_level) {
    const auto bad = nesting_violations(*fulltext, *final_level);
    if (!bad.empty()) {
      std::string list;
      for (const auto& id : bad) list += (list.empty() ? "" : ", ") + id;
      fail(ErrorCode::LabelConflict, "final includes missing from full-text includes: " + list);
    }
  }

  text::write_file_atomic(layout.config(), to_json(config).dump(2) + "\n");
  text::write_file_atomic(layout.corpus(), serialize_corpus(corpus));
  text::write_file_atomic(layout.corpus_stats(), to_json(corpus.stats()).dump(2) + "\n");
  text::write_file_atomic(layout.criteria(), to_json(criteria).dump(2) + "\n");

  std::vector<std::string> order;
  for (const auto& r : corpus.records()) order.push_back(r.record_id);

  tracker.phase(Phase::ActorPass);
  BuildConfig build;
  build.model_id = config.actor_model_id;
  build.replicates = config.replicates;
  build.options = actor_options;
  build.max_output_tokens = config.max_output_tokens;
  build.temperature = config.temperature;
  const auto actor_requests = build_requests(corpus, criteria, build);
  auto actor = execute_pass(actor_requests, layout.actor_dir(), config.actor_model_id, Role::Actor,
                            config, actor_options, order, hooks, tracker);

  PassOutput critic;
  if (config.mode == ScreenMode::ActorCritic) {
    tracker.phase(Phase::CriticPass);
    std::vector<ScreeningDecision> actor_list;
    for (const auto& id : order) {
      if (auto it = actor.by_record.find(id); it != actor.by_record.end()) {
        actor_list.push_back(it->second);
      }
    }
    const auto critic_set = plan_critic_set(config.rule, actor_list);
    PromptOptions critic_options = actor_options;
    critic_options.role = Role::Critic;
    std::vector<ChatRequest> requests;
    for (const auto& r : corpus.records()) {
      if (!critic_set.contains(r.record_id)) continue;
      const std::string prompt =
          config.critic_context()
              ? render_critic_prompt(criteria, r, actor.by_record.at(r.record_id), critic_options)
              : render_prompt(criteria, r, actor_options);
      for (int rep = 0; rep < config.replicates; ++rep) {
        requests.push_back({make_custom_id(r.record_id, Role::Critic, rep),
                            *config.critic_model_id, prompt, config.max_output_tokens,
                            config.temperature});
      }
    }
    critic = execute_pass(requests, layout.critic_dir(), *config.critic_model_id, Role::Critic,
                          config, critic_options, order, hooks, tracker);
  }

  tracker.phase(Phase::Adjudicating);
  result.decisions = actor.decisions;
  result.decisions.insert(result.decisions.end(), critic.decisions.begin(), critic.decisions.end());
  result.replicates = actor.summaries;
  result.replicates.insert(result.replicates.end(), critic.summaries.begin(),
                           critic.summaries.end());
  result.errors = actor.errors;
  result.errors.insert(result.errors.end(), critic.errors.begin(), critic.errors.end());

  for (const auto& id : order) {
    auto a = actor.by_record.find(id);
    if (a == actor.by_record.end()) continue;
    std::optional<ScreeningDecision> c;
    if (auto it = critic.by_record.find(id); it != critic.by_record.end()) c = it->second;
    if (needs_critic(config.rule, a->second) && !c) {
      result.errors.push_back({id, Role::Critic, 0, "critic", "no usable critic verdict"});
      continue;
    }
    result.finals.push_back(combine(config.rule, a->second, c));
  }
  text::write_file_atomic(layout.decisions(), decisions_csv(result.decisions));
  text::write_file_atomic(layout.replicates(), replicates_csv(result.replicates));
  text::write_file_atomic(layout.final_decisions(), final_decisions_csv(result.finals));
  text::write_file_atomic(layout.errors(), errors_csv(result.errors));

  if (fulltext || final_level) {
    tracker.phase(Phase::Evaluating);
    for (const auto* labels : {fulltext ? &*fulltext : nullptr, final_level ? &*final_level : nullptr}) {
      if (labels == nullptr) continue;
      auto report = evaluate(result.finals, *labels, labels->level);
      write_report(report, layout.report_dir(labels->level));
      result.reports.emplace(labels->level, std::move(report));
    }
  }
  tracker.phase(Phase::Done);
  result.progress = tracker.progress();
  return result;
}

}  // namespace

ScreenResult screen(const RunConfig& config, const fs::path& run_dir, const ScreenHooks& hooks) {
  fs::create_directories(run_dir);
  std::optional<RunDirLock> lock;
  if (!hooks.run_dir_locked) lock.emplace(run_dir);
  const RunDirLayout layout{run_dir};
  ProgressTracker tracker(layout, hooks.on_progress, config.prices);
  try {
    return screen_locked(config, layout, hooks, tracker);
  } catch (const std::exception& e) {
    tracker.failed(e.what());
    throw;
  }
}

}  // namespace screenkit
