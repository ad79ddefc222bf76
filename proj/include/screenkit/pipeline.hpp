#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "screenkit/adjudication.hpp"
#include "screenkit/batch_engine.hpp"
#include "screenkit/corpus.hpp"
#include "screenkit/evaluation.hpp"
#include "screenkit/prompt.hpp"

namespace screenkit {

enum class ScreenMode { Single, ActorCritic };

std::string_view to_string(ScreenMode m) noexcept;

enum class Phase { Building, ActorPass, CriticPass, Adjudicating, Evaluating, Done, Failed };

std::string_view to_string(Phase p) noexcept;
Phase parse_phase(std::string_view s);

struct LabelFiles {
  std::filesystem::path includes;
  std::optional<std::filesystem::path> excludes;
};

struct RunConfig {
  // Either a path or inline content; inline wins when both are set.
  std::filesystem::path corpus_path;
  std::optional<std::string> corpus_csv;
  std::filesystem::path criteria_path;
  std::optional<Criteria> criteria;
  ColumnMap column_map;
  ScreenMode mode = ScreenMode::Single;
  EnsembleRule rule = EnsembleRule::Single;
  std::string actor_model_id;
  std::optional<std::string> critic_model_id;
  int replicates = 1;
  RateBudget budget;
  PromptOptions prompt;
  std::optional<bool> critic_sees_actor_context;  // rule default when unset
  bool inclusion_bias = false;  // append the default heuristic unless already biased
  bool few_shot = false;        // experimental: inject labeled exemplars
  std::size_t max_output_tokens = 256;
  double temperature = 0.0;
  std::optional<LabelFiles> fulltext_labels;
  std::optional<LabelFiles> final_labels;
  std::optional<PriceTable> prices;

  bool critic_context() const;
};

struct FieldError {
  std::string field;
  std::string message;
};

// Every problem found, each naming the offending field. Relative paths are
// resolved against base_dir when it is given.
std::vector<FieldError> validate_run_config(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});  // throws ConfigValidation
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

struct TrainingLabel {
  std::string record_id;
  Decision human_decision = Decision::Exclude;
  std::string labeled_at;  // ISO-8601 UTC
  std::string labeler;
};

// One label per (record_id, labeler); a later upsert replaces the earlier one.
class TrainingLabelStore {
 public:
  void upsert(TrainingLabel label);
  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<TrainingLabel>& labels() const noexcept { return labels_; }
  // Latest label per record across labelers.
  std::map<std::string, Decision> consensus() const;

  static TrainingLabelStore load(const std::filesystem::path& path);  // missing file: empty
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<TrainingLabel> labels_;
};

inline constexpr std::size_t kFewShotExemplars = 4;

// Up to k labeled records, balanced between includes and excludes when both exist.
std::vector<WorkedExample> select_few_shot(const TrainingLabelStore& store, const Corpus& corpus,
                                           std::size_t k = kFewShotExemplars);

struct ScreeningError {
  std::string record_id;
  Role role = Role::Actor;
  int replicate = 0;
  std::string stage;  // "provider", "parse" or "critic"
  std::string message;
};

std::string errors_csv(std::span<const ScreeningError> errors);

struct Progress {
  Phase phase = Phase::Building;
  std::size_t completed = 0;
  std::size_t pending = 0;
  std::size_t failed = 0;
  double cost_accrued = 0.0;
  std::string error;
};

nlohmann::json to_json(const Progress& p);

using ProviderFactory = std::function<std::unique_ptr<ChatProvider>(const std::string& model_id)>;

struct ScreenHooks {
  std::function<void(const Progress&)> on_progress;
  ProviderFactory make_provider;  // defaults to screenkit::make_provider
  Clock* clock = nullptr;
  bool run_dir_locked = false;    // caller already holds the RunDirLock
};

struct ScreenResult {
  std::vector<ScreeningDecision> decisions;  // parsed per-replicate verdicts
  std::vector<ReplicateSummary> replicates;
  std::vector<FinalDecision> finals;         // corpus order
  std::vector<ScreeningError> errors;
  std::map<LabelLevel, EvaluationReport> reports;
  Progress progress;
};

// Files written into a run directory by screen().
struct RunDirLayout {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path corpus() const { return dir / "corpus.csv"; }
  std::filesystem::path corpus_stats() const { return dir / "corpus_stats.json"; }
  std::filesystem::path criteria() const { return dir / "criteria.json"; }
  std::filesystem::path actor_dir() const { return dir / "actor"; }
  std::filesystem::path critic_dir() const { return dir / "critic"; }
  std::filesystem::path decisions() const { return dir / "decisions.csv"; }
  std::filesystem::path replicates() const { return dir / "replicates.csv"; }
  std::filesystem::path final_decisions() const { return dir / "final_decisions.csv"; }
  std::filesystem::path errors() const { return dir / "errors.csv"; }
  std::filesystem::path training_labels() const { return dir / "training_labels.json"; }
  std::filesystem::path status() const { return dir / "status.json"; }
  std::filesystem::path report_dir(LabelLevel level) const {
    return dir / "reports" / std::string(to_string(level));
  }
};

// Actor pass, critic pass when configured, adjudication, then evaluation for
// each configured label level. Re-running on the same directory resumes.
ScreenResult screen(const RunConfig& config, const std::filesystem::path& run_dir,
                    const ScreenHooks& hooks = {});

// Writes report.json, roc_points.csv and reliability_bins.csv.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

std::vector<FinalDecision> read_final_decisions(const std::filesystem::path& run_dir);

// Evaluates a finished run directory against labels and writes reports/<level>/.
EvaluationReport evaluate_run(const std::filesystem::path& run_dir, const LabelFiles& labels,
                              LabelLevel level);

}  // namespace screenkit
