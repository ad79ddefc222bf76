#include "screenkit/provider.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "screenkit/batch_engine.hpp"
#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace {

struct PromptFacts {
  std::string include_token = "INCLUDE";
  std::string exclude_token = "EXCLUDE";
  std::string title;
  std::string abstract;
};

PromptFacts read_prompt(const std::string& prompt) {
  PromptFacts f;
  bool seen_title = false;
  bool seen_abstract = false;
  for (const auto& line : text::split_lines(prompt)) {
    if (!seen_title && line.rfind("Title: ", 0) == 0) {
      f.title = line.substr(7);
      seen_title = true;
    } else if (!seen_abstract && line.rfind("Abstract: ", 0) == 0) {
      f.abstract = line.substr(10);
      seen_abstract = true;
    } else if (line.rfind("Decision: ", 0) == 0) {
      // The output contract line: "Decision: <include> or <exclude>".
      const auto parts = text::split(line.substr(10), ' ');
      if (parts.size() == 3 && parts[1] == "or") {
        f.include_token = parts[0];
        f.exclude_token = parts[2];
      }
    }
  }
  return f;
}

std::string verdict_text(const PromptFacts& f, Decision d, double confidence) {
  return "Decision: " + (d == Decision::Include ? f.include_token : f.exclude_token) +
         "\nConfidence: " + text::format_double(confidence);
}

ScriptedVerdict parse_verdict(const nlohmann::json& j) {
  ScriptedVerdict v;
  v.decision = parse_decision_name(j.at("decision").get<std::string>());
  v.confidence = j.at("confidence").get<double>();
  return v;
}

MockScriptEntry entry_from_json(const nlohmann::json& j) {
  MockScriptEntry e;
  if (j.contains("actor")) e.actor = parse_verdict(j.at("actor"));
  if (j.contains("critic")) e.critic = parse_verdict(j.at("critic"));
  if (j.contains("raw")) e.raw = j.at("raw").get<std::string>();
  return e;
}

}  // namespace

MockProvider::MockProvider(MockConfig config) : config_(std::move(config)) {}

ProviderReply MockProvider::complete(const ChatRequest& request) {
  calls_.fetch_add(1);
  if (config_.latency_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(config_.latency_ms));
  }
  if (config_.auth_failure) {
    return {ProviderStatus::AuthError, {}, 0, 0, "mock: invalid credentials"};
  }
  if (config_.fail_first > 0) {
    std::lock_guard lock(mutex_);
    if (++failures_[request.custom_id] <= config_.fail_first) {
      return {ProviderStatus::RetryableError, {}, 0, 0, "mock: scripted transient failure"};
    }
  }

  const auto id = parse_custom_id(request.custom_id);
  const auto facts = read_prompt(request.prompt);
  const std::string role(to_string(id.role));

  ProviderReply reply;
  reply.input_tokens = estimate_tokens(request.prompt);

  if (auto it = config_.script.find(id.record_id); it != config_.script.end()) {
    const auto& entry = it->second;
    const auto& verdict = id.role == Role::Actor ? entry.actor : entry.critic;
    if (verdict) {
      reply.text = verdict_text(facts, verdict->decision, verdict->confidence);
    } else if (entry.raw) {
      reply.text = *entry.raw;
    }
  }
  if (reply.text.empty()) {
    const std::uint64_t h = text::fnv1a64(std::to_string(config_.seed) + "|" + id.record_id +
                                          "|" + role + "|" + std::to_string(id.replicate));
    const double confidence = 0.55 + static_cast<double>((h >> 24) % 45) / 100.0;
    bool include = false;
    if (config_.include_keyword) {
      const auto kw = text::to_lower(*config_.include_keyword);
      include = text::to_lower(facts.title).find(kw) != std::string::npos ||
                text::to_lower(facts.abstract).find(kw) != std::string::npos;
    } else {
      include = static_cast<double>(h % 10000) / 10000.0 < config_.include_rate;
    }
    reply.text = verdict_text(facts, include ? Decision::Include : Decision::Exclude, confidence);
  }
  reply.output_tokens = estimate_tokens(reply.text);
  return reply;
}

MockScriptEntry parse_mock_script_entry(const std::string& json_text) {
  return entry_from_json(nlohmann::json::parse(json_text));
}

std::map<std::string, MockScriptEntry> load_mock_script(const std::string& path) {
  std::map<std::string, MockScriptEntry> script;
  try {
    const auto j = nlohmann::json::parse(text::read_file(path));
    for (const auto& [record_id, entry] : j.items()) script[record_id] = entry_from_json(entry);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigValidation, "mock script " + path + ": " + e.what());
  }
  return script;
}

MockConfig parse_mock_model_id(const std::string& model_id) {
  if (model_id.rfind("mock:", 0) != 0) {
    fail(ErrorCode::InvalidArgument, "not a mock model id: " + model_id);
  }
  MockConfig cfg;
  const std::string spec = model_id.substr(5);
  if (spec.empty()) return cfg;
  for (const auto& part : text::split(spec, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) continue;  // bare names like "mock:actor" are labels
    const std::string key = part.substr(0, eq);
    const std::string value = part.substr(eq + 1);
    try {
      if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "include_keyword") {
        cfg.include_keyword = value;
      } else if (key == "include_rate") {
        cfg.include_rate = std::stod(value);
      } else if (key == "fail_first") {
        cfg.fail_first = std::stoi(value);
      } else if (key == "auth_failure") {
        cfg.auth_failure = value == "1" || value == "true";
      } else if (key == "latency_ms") {
        cfg.latency_ms = std::stoi(value);
      } else if (key == "script") {
        cfg.script = load_mock_script(value);
      } else {
        fail(ErrorCode::ConfigValidation, "unknown mock option '" + key + "'");
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::ConfigValidation, "bad value for mock option '" + key + "'");
    }
  }
  return cfg;
}

OpenAiProvider::OpenAiProvider(OpenAiConfig config) : config_(std::move(config)) {}

ProviderReply OpenAiProvider::complete(const ChatRequest& request) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    return {ProviderStatus::AuthError, {}, 0, 0,
            "credential variable " + config_.api_key_env + " is not set"};
  }
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout_s, 0);
  client.set_read_timeout(config_.timeout_s, 0);
  client.set_bearer_token_auth(key);

  nlohmann::json body = {
      {"model", provider_model_name(request.model_id)},
      {"messages", {{{"role", "user"}, {"content", request.prompt}}}},
      {"max_tokens", request.max_output_tokens},
      {"temperature", request.temperature},
  };
  auto res = client.Post("/v1/chat/completions", body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const bool timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
    return {timeout ? ProviderStatus::Timeout : ProviderStatus::RetryableError, {}, 0, 0,
            "transport: " + httplib::to_string(err)};
  }
  if (res->status == 401 || res->status == 403) {
    return {ProviderStatus::AuthError, {}, 0, 0, "HTTP " + std::to_string(res->status)};
  }
  if (res->status != 200) {
    return {ProviderStatus::RetryableError, {}, 0, 0, "HTTP " + std::to_string(res->status)};
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    ProviderReply reply;
    reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      reply.input_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
      reply.output_tokens = j["usage"].value("completion_tokens", std::size_t{0});
    }
    return reply;
  } catch (const nlohmann::json::exception& e) {
    return {ProviderStatus::RetryableError, {}, 0, 0, std::string("malformed body: ") + e.what()};
  }
}

std::string provider_model_name(const std::string& model_id) {
  const auto colon = model_id.find(':');
  return colon == std::string::npos ? model_id : model_id.substr(colon + 1);
}

std::unique_ptr<ChatProvider> make_provider(const std::string& model_id) {
  if (model_id.rfind("mock:", 0) == 0) {
    return std::make_unique<MockProvider>(parse_mock_model_id(model_id));
  }
  if (model_id.rfind("openai:", 0) == 0) {
    OpenAiConfig cfg;
    if (const char* base = std::getenv("SCREENKIT_OPENAI_BASE_URL"); base && *base) {
      cfg.base_url = base;
    }
    return std::make_unique<OpenAiProvider>(cfg);
  }
  fail(ErrorCode::ConfigValidation,
       "model_id '" + model_id + "' names no known provider (expected mock: or openai:)");
}

}  // namespace screenkit
