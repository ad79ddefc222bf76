#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "screenkit/clock.hpp"
#include "screenkit/corpus.hpp"
#include "screenkit/prompt.hpp"
#include "screenkit/provider.hpp"

namespace screenkit {

// ceil(characters / 4).
std::size_t estimate_tokens(std::string_view text);

struct CustomId {
  std::string record_id;
  Role role = Role::Actor;
  int replicate = 0;
};

std::string make_custom_id(std::string_view record_id, Role role, int replicate);
// Splits from the right so record ids may themselves contain ':'.
CustomId parse_custom_id(std::string_view custom_id);

enum class ResponseStatus { Ok, ProviderError, Timeout };

std::string_view to_string(ResponseStatus s) noexcept;

struct ChatResponse {
  std::string custom_id;
  std::string raw_text;
  std::size_t input_tokens = 0;
  std::size_t output_tokens = 0;
  ResponseStatus status = ResponseStatus::Ok;
  int attempts = 1;
  std::string error;
};

struct RateBudget {
  std::size_t requests_per_minute = 500;
  std::size_t tokens_per_minute = 2'000'000;
  std::size_t max_in_flight = 8;
  int max_attempts = 4;
  double base_backoff_s = 1.0;
  double max_backoff_s = 60.0;
  // Ledger checkpoint after this many completions or seconds, whichever first.
  std::size_t checkpoint_every = 25;
  double checkpoint_interval_s = 10.0;
  std::uint64_t jitter_seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RateBudget& b);
RateBudget rate_budget_from_json(const nlohmann::json& j);

struct TokenUsage {
  std::size_t input_tokens = 0;
  std::size_t output_tokens = 0;
  bool operator==(const TokenUsage&) const = default;
};

struct ModelPrice {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
};
using PriceTable = std::map<std::string, ModelPrice>;

PriceTable price_table_from_json(const nlohmann::json& j);

struct RunLedger {
  std::string run_id;
  std::set<std::string> completed_ids;  // terminal: ok or failed after max_attempts
  std::set<std::string> pending_ids;
  std::set<std::string> failed_ids;     // subset of completed_ids
  double cost_accrued = 0.0;
  double wall_time_s = 0.0;
  std::map<std::string, TokenUsage> usage_by_model;
};

// Sum over models of (input * p_in + output * p_out) / 1e6. Throws UnknownModelPrice.
double estimate_cost(const RunLedger& ledger, const PriceTable& prices);

std::string serialize_ledger(const RunLedger& ledger);  // includes checksum
RunLedger parse_ledger(std::string_view text);          // throws CorruptLedger

struct BuildConfig {
  std::string model_id;
  int replicates = 1;
  PromptOptions options;
  std::size_t max_output_tokens = 256;
  double temperature = 0.0;
};

// One actor request per record and replicate.
std::vector<ChatRequest> build_requests(const Corpus& corpus, const Criteria& criteria,
                                        const BuildConfig& config);

std::string request_line(const ChatRequest& r);
std::string response_line(const ChatResponse& r);
void write_requests(const std::filesystem::path& path, std::span<const ChatRequest> requests);
std::vector<ChatRequest> read_requests(const std::filesystem::path& path);
// Tolerates a torn final line (dropped) left by an interrupted writer.
std::vector<ChatResponse> read_responses(const std::filesystem::path& path);

struct DispatchEvent {
  std::string custom_id;
  int attempt = 1;
  double time = 0.0;
  std::size_t estimated_tokens = 0;
};

struct RunOptions {
  Clock* clock = nullptr;  // defaults to a SteadyClock
  std::optional<PriceTable> prices;
  std::function<void(const RunLedger&)> on_progress;
  // Simulates a crash: stop right after this many completions in this call,
  // without a final checkpoint or waiting for in-flight requests.
  std::optional<std::size_t> interrupt_after;
};

struct RunResult {
  RunLedger ledger;
  std::vector<DispatchEvent> dispatches;
  std::size_t dispatched = 0;  // provider calls made by this invocation
  bool interrupted = false;
};

// Files inside a run directory.
struct RunFiles {
  std::filesystem::path dir;
  std::filesystem::path requests() const { return dir / "requests.jsonl"; }
  std::filesystem::path responses() const { return dir / "responses.jsonl"; }
  std::filesystem::path ledger() const { return dir / "ledger.json"; }
  std::filesystem::path dispatch_log() const { return dir / "dispatch_log.jsonl"; }
  std::filesystem::path lock() const { return dir / ".lock"; }
};

// Exclusive advisory lock on a run directory, held for the object's lifetime.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& run_dir);  // throws RunDirLocked
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

 private:
  int fd_ = -1;
};

// Executes a fresh request file. The run directory must not already hold a ledger.
RunResult run_batch(const std::filesystem::path& request_file, ChatProvider& provider,
                    const RateBudget& budget, const std::filesystem::path& run_dir,
                    const RunOptions& options = {});

// Continues from the checkpoint, dispatching only requests without a response.
RunResult resume(const std::filesystem::path& run_dir, ChatProvider& provider,
                 const RateBudget& budget, const RunOptions& options = {});

// resume() when run_dir holds a ledger, run_batch() otherwise.
RunResult run_or_resume(const std::filesystem::path& request_file, ChatProvider& provider,
                        const RateBudget& budget, const std::filesystem::path& run_dir,
                        const RunOptions& options = {});

}  // namespace screenkit
