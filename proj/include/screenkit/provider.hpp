#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "screenkit/decision.hpp"

namespace screenkit {

struct ChatRequest {
  std::string custom_id;  // <record_id>:<role>:<replicate>
  std::string model_id;
  std::string prompt;
  std::size_t max_output_tokens = 256;
  double temperature = 0.0;
};

enum class ProviderStatus { Ok, RetryableError, Timeout, AuthError };

struct ProviderReply {
  ProviderStatus status = ProviderStatus::Ok;
  std::string text;
  std::size_t input_tokens = 0;
  std::size_t output_tokens = 0;
  std::string error;
};

// Synchronous chat-completion contract. Implementations must be safe to call
// from several threads at once.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply complete(const ChatRequest& request) = 0;
};

struct ScriptedVerdict {
  Decision decision = Decision::Exclude;
  double confidence = 0.5;
};

// Per-record script; "raw" replies are returned verbatim.
struct MockScriptEntry {
  std::optional<ScriptedVerdict> actor;
  std::optional<ScriptedVerdict> critic;
  std::optional<std::string> raw;
};

struct MockConfig {
  std::uint64_t seed = 0;
  // When set, a record is included iff its title or abstract contains the
  // keyword (case-insensitive). Otherwise verdicts are hashed from the seed.
  std::optional<std::string> include_keyword;
  double include_rate = 0.3;
  // Every request fails this many times before succeeding.
  int fail_first = 0;
  bool auth_failure = false;
  int latency_ms = 0;
  std::map<std::string, MockScriptEntry> script;  // by record_id
};

// Deterministic test provider: the reply is a pure function of the request and
// the seed, apart from the scripted failure counters.
class MockProvider final : public ChatProvider {
 public:
  explicit MockProvider(MockConfig config = {});

  ProviderReply complete(const ChatRequest& request) override;

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  MockConfig config_;
  std::atomic<std::size_t> calls_{0};
  std::mutex mutex_;
  std::unordered_map<std::string, int> failures_;
};

// Parses "mock:seed=3,include_keyword=planted,fail_first=1,script=path.json".
MockConfig parse_mock_model_id(const std::string& model_id);
MockScriptEntry parse_mock_script_entry(const std::string& json_text);
std::map<std::string, MockScriptEntry> load_mock_script(const std::string& path);

// OpenAI-compatible /v1/chat/completions adapter. The key is read from the
// environment variable named by api_key_env; it never appears in config files.
struct OpenAiConfig {
  std::string base_url = "https://api.openai.com";
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_s = 120;
};

class OpenAiProvider final : public ChatProvider {
 public:
  explicit OpenAiProvider(OpenAiConfig config);
  ProviderReply complete(const ChatRequest& request) override;

 private:
  OpenAiConfig config_;
};

// The model part of an id such as "openai:gpt-5-nano".
std::string provider_model_name(const std::string& model_id);

// "mock:..." selects MockProvider and "openai:<model>" the OpenAI adapter
// (base URL from SCREENKIT_OPENAI_BASE_URL when set).
std::unique_ptr<ChatProvider> make_provider(const std::string& model_id);

}  // namespace screenkit
