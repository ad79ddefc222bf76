#include "screenkit/batch_engine.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <queue>
#include <random>
#include <thread>
#include <unordered_map>

#include "screenkit/error.hpp"
#include "screenkit/rate_limiter.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t estimate_tokens(std::string_view text_value) {
  return (text::utf8_length(text_value) + 3) / 4;
}

std::string make_custom_id(std::string_view record_id, Role role, int replicate) {
  return std::string(record_id) + ":" + std::string(to_string(role)) + ":" +
         std::to_string(replicate);
}

CustomId parse_custom_id(std::string_view custom_id) {
  CustomId out;
  const auto last = custom_id.rfind(':');
  if (last == std::string_view::npos || last == 0) {
    out.record_id = std::string(custom_id);
    return out;
  }
  const auto mid = custom_id.rfind(':', last - 1);
  if (mid == std::string_view::npos) {
    out.record_id = std::string(custom_id);
    return out;
  }
  const auto role = custom_id.substr(mid + 1, last - mid - 1);
  const auto rep = custom_id.substr(last + 1);
  if ((role != "actor" && role != "critic") || rep.empty() ||
      !std::all_of(rep.begin(), rep.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      rep.size() > 9) {
    out.record_id = std::string(custom_id);
    return out;
  }
  out.record_id = std::string(custom_id.substr(0, mid));
  out.role = parse_role(role);
  out.replicate = std::stoi(std::string(rep));
  return out;
}

std::string_view to_string(ResponseStatus s) noexcept {
  switch (s) {
    case ResponseStatus::Ok: return "ok";
    case ResponseStatus::ProviderError: return "provider_error";
    case ResponseStatus::Timeout: return "timeout";
  }
  return "ok";
}

namespace {

ResponseStatus parse_status(std::string_view s) {
  if (s == "ok") return ResponseStatus::Ok;
  if (s == "provider_error") return ResponseStatus::ProviderError;
  if (s == "timeout") return ResponseStatus::Timeout;
  fail(ErrorCode::InvalidArgument, "unknown response status '" + std::string(s) + "'");
}

}  // namespace

void RateBudget::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) fail(ErrorCode::ConfigValidation, std::string("budget.") + field + " must be positive");
  };
  require(requests_per_minute > 0, "requests_per_minute");
  require(tokens_per_minute > 0, "tokens_per_minute");
  require(max_in_flight > 0, "max_in_flight");
  require(max_attempts > 0, "max_attempts");
  require(base_backoff_s > 0.0, "base_backoff_s");
  require(max_backoff_s > 0.0, "max_backoff_s");
  require(checkpoint_every > 0, "checkpoint_every");
  require(checkpoint_interval_s > 0.0, "checkpoint_interval_s");
}

json to_json(const RateBudget& b) {
  return {{"requests_per_minute", b.requests_per_minute},
          {"tokens_per_minute", b.tokens_per_minute},
          {"max_in_flight", b.max_in_flight},
          {"max_attempts", b.max_attempts},
          {"base_backoff_s", b.base_backoff_s},
          {"max_backoff_s", b.max_backoff_s},
          {"checkpoint_every", b.checkpoint_every},
          {"checkpoint_interval_s", b.checkpoint_interval_s},
          {"jitter_seed", b.jitter_seed}};
}

RateBudget rate_budget_from_json(const json& j) {
  RateBudget b;
  if (!j.is_object()) fail(ErrorCode::ConfigValidation, "budget must be an object");
  static const std::set<std::string> known = {
      "requests_per_minute", "tokens_per_minute", "max_in_flight", "max_attempts", "base_backoff_s",
      "max_backoff_s", "checkpoint_every", "checkpoint_interval_s", "jitter_seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::ConfigValidation, "budget." + key + ": unknown field");
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(ErrorCode::ConfigValidation, std::string("budget.") + key);
    } else {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        fail(ErrorCode::ConfigValidation, std::string("budget.") + key + " must be a positive integer");
      }
    }
    field = v.get<T>();
  };
  read("requests_per_minute", b.requests_per_minute);
  read("tokens_per_minute", b.tokens_per_minute);
  read("max_in_flight", b.max_in_flight);
  read("max_attempts", b.max_attempts);
  read("base_backoff_s", b.base_backoff_s);
  read("max_backoff_s", b.max_backoff_s);
  read("checkpoint_every", b.checkpoint_every);
  read("checkpoint_interval_s", b.checkpoint_interval_s);
  read("jitter_seed", b.jitter_seed);
  b.validate();
  return b;
}

PriceTable price_table_from_json(const json& j) {
  PriceTable t;
  if (!j.is_object()) fail(ErrorCode::ConfigValidation, "price table must be an object");
  for (const auto& [model, p] : j.items()) {
    if (!p.is_object() || !p.contains("input") || !p.contains("output")) {
      fail(ErrorCode::ConfigValidation, "price table entry '" + model + "' needs input and output");
    }
    t[model] = {p.at("input").get<double>(), p.at("output").get<double>()};
  }
  return t;
}

double estimate_cost(const RunLedger& ledger, const PriceTable& prices) {
  double total = 0.0;
  for (const auto& [model, usage] : ledger.usage_by_model) {
    auto it = prices.find(model);
    if (it == prices.end()) fail(ErrorCode::UnknownModelPrice, "no price for model '" + model + "'");
    total += static_cast<double>(usage.input_tokens) * it->second.input_per_million +
             static_cast<double>(usage.output_tokens) * it->second.output_per_million;
  }
  return total / 1e6;
}

namespace {

json ledger_body(const RunLedger& l) {
  json usage = json::object();
  for (const auto& [model, u] : l.usage_by_model) {
    usage[model] = {{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
  }
  return {{"run_id", l.run_id},
          {"completed_ids", l.completed_ids},
          {"pending_ids", l.pending_ids},
          {"failed_ids", l.failed_ids},
          {"cost_accrued", l.cost_accrued},
          {"wall_time_s", l.wall_time_s},
          {"usage", usage}};
}

}  // namespace

std::string serialize_ledger(const RunLedger& ledger) {
  json body = ledger_body(ledger);
  const std::string checksum = text::hex64(text::fnv1a64(body.dump()));
  json doc = {{"ledger", body}, {"checksum", checksum}};
  return doc.dump(2) + "\n";
}

RunLedger parse_ledger(std::string_view text_value) {
  json doc;
  try {
    doc = json::parse(text_value);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptLedger, std::string("unparseable ledger: ") + e.what());
  }
  try {
    const auto& body = doc.at("ledger");
    if (text::hex64(text::fnv1a64(body.dump())) != doc.at("checksum").get<std::string>()) {
      fail(ErrorCode::CorruptLedger, "checksum mismatch");
    }
    RunLedger l;
    l.run_id = body.at("run_id").get<std::string>();
    l.completed_ids = body.at("completed_ids").get<std::set<std::string>>();
    l.pending_ids = body.at("pending_ids").get<std::set<std::string>>();
    l.failed_ids = body.at("failed_ids").get<std::set<std::string>>();
    l.cost_accrued = body.at("cost_accrued").get<double>();
    l.wall_time_s = body.at("wall_time_s").get<double>();
    for (const auto& [model, u] : body.at("usage").items()) {
      l.usage_by_model[model] = {u.at("input_tokens").get<std::size_t>(),
                                 u.at("output_tokens").get<std::size_t>()};
    }
    return l;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptLedger, std::string("malformed ledger: ") + e.what());
  }
}

std::vector<ChatRequest> build_requests(const Corpus& corpus, const Criteria& criteria,
                                        const BuildConfig& config) {
  if (corpus.size() == 0) fail(ErrorCode::EmptyCorpus, "no records to build requests for");
  if (config.replicates < 1) fail(ErrorCode::ConfigValidation, "replicates must be at least 1");
  if (config.max_output_tokens < 16) {
    fail(ErrorCode::ConfigValidation, "max_output_tokens must be at least 16");
  }
  if (config.model_id.empty()) fail(ErrorCode::ConfigValidation, "model_id is required");
  std::vector<ChatRequest> out;
  out.reserve(corpus.size() * static_cast<std::size_t>(config.replicates));
  for (const auto& record : corpus.records()) {
    const std::string prompt = render_prompt(criteria, record, config.options);
    for (int r = 0; r < config.replicates; ++r) {
      out.push_back({make_custom_id(record.record_id, Role::Actor, r), config.model_id, prompt,
                     config.max_output_tokens, config.temperature});
    }
  }
  return out;
}

std::string request_line(const ChatRequest& r) {
  json j = {{"custom_id", r.custom_id},
            {"model", r.model_id},
            {"prompt", r.prompt},
            {"params",
             {{"max_output_tokens", r.max_output_tokens}, {"temperature", r.temperature}}}};
  return j.dump() + "\n";
}

std::string response_line(const ChatResponse& r) {
  json j = {{"custom_id", r.custom_id},
            {"raw_text", r.raw_text},
            {"usage", {{"input_tokens", r.input_tokens}, {"output_tokens", r.output_tokens}}},
            {"status", std::string(to_string(r.status))},
            {"attempts", r.attempts}};
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump() + "\n";
}

void write_requests(const fs::path& path, std::span<const ChatRequest> requests) {
  std::string out;
  for (const auto& r : requests) out += request_line(r);
  text::write_file_atomic(path, out);
}

std::vector<ChatRequest> read_requests(const fs::path& path) {
  std::vector<ChatRequest> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& line : text::split_lines(text::read_file(path))) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      ChatRequest r;
      r.custom_id = j.at("custom_id").get<std::string>();
      r.model_id = j.at("model").get<std::string>();
      r.prompt = j.at("prompt").get<std::string>();
      if (j.contains("params")) {
        const auto& p = j.at("params");
        r.max_output_tokens = p.value("max_output_tokens", r.max_output_tokens);
        r.temperature = p.value("temperature", r.temperature);
      }
      if (!seen.insert(r.custom_id).second) {
        fail(ErrorCode::InvalidArgument, "duplicate custom_id '" + r.custom_id + "'");
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::optional<ChatResponse> parse_response_line(const std::string& line) {
  try {
    const auto j = json::parse(line);
    ChatResponse r;
    r.custom_id = j.at("custom_id").get<std::string>();
    r.raw_text = j.at("raw_text").get<std::string>();
    r.input_tokens = j.at("usage").at("input_tokens").get<std::size_t>();
    r.output_tokens = j.at("usage").at("output_tokens").get<std::size_t>();
    r.status = parse_status(j.at("status").get<std::string>());
    r.attempts = j.at("attempts").get<int>();
    r.error = j.value("error", std::string{});
    return r;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

// Reads responses, dropping a torn trailing line and duplicate ids. When
// repair is set, the file is rewritten if anything was dropped.
std::vector<ChatResponse> load_responses(const fs::path& path, bool repair) {
  std::vector<ChatResponse> out;
  if (!fs::exists(path)) return out;
  const std::string content = text::read_file(path);
  auto lines = text::split_lines(content);
  std::set<std::string> seen;
  bool dropped = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    auto r = parse_response_line(lines[i]);
    if (!r) {
      if (i + 1 >= lines.size() || (i + 2 == lines.size() && lines.back().empty())) {
        dropped = true;  // torn final write
        continue;
      }
      fail(ErrorCode::CorruptLedger, path.string() + ": malformed response on line " +
                                         std::to_string(i + 1));
    }
    if (!seen.insert(r->custom_id).second) {
      dropped = true;
      continue;
    }
    out.push_back(std::move(*r));
  }
  if (dropped && repair) {
    std::string rewritten;
    for (const auto& r : out) rewritten += response_line(r);
    text::write_file_atomic(path, rewritten);
  }
  return out;
}

std::string run_id_for(std::span<const ChatRequest> requests) {
  std::uint64_t h = text::fnv1a64("screenkit-run");
  for (const auto& r : requests) h ^= text::fnv1a64(r.custom_id) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return "run-" + text::hex64(h);
}

// Fixed-size worker pool; jobs still queued at destruction are dropped.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      threads_.emplace_back([this] { loop(); });
    }
  }
  ~WorkerPool() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> job) {
    {
      std::lock_guard lock(mutex_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

 private:
  void loop() {
    while (true) {
      std::function<void()> job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stop_ || !jobs_.empty(); });
        if (stop_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> threads_;
  bool stop_ = false;
};

struct Completion {
  std::size_t index;
  int attempt;
  ProviderReply reply;
};

class Executor {
 public:
  Executor(const std::vector<ChatRequest>& requests, ChatProvider& provider,
           const RateBudget& budget, const RunFiles& files, RunLedger ledger,
           const RunOptions& options, Clock& clock)
      : requests_(requests),
        provider_(provider),
        budget_(budget),
        files_(files),
        options_(options),
        clock_(clock),
        limiter_(budget.requests_per_minute, budget.tokens_per_minute),
        rng_(budget.jitter_seed) {
    result_.ledger = std::move(ledger);
  }

  RunResult run() {
    const double started = clock_.now();
    last_checkpoint_time_ = started;
    for (std::size_t i = 0; i < requests_.size(); ++i) {
      if (result_.ledger.pending_ids.contains(requests_[i].custom_id)) ready_.push_back(i);
    }
    for (auto idx : ready_) {
      if (request_tokens(idx) > budget_.tokens_per_minute) {
        fail(ErrorCode::ConfigValidation,
             "request " + requests_[idx].custom_id + " needs " +
                 std::to_string(request_tokens(idx)) + " estimated tokens, above tokens_per_minute");
      }
    }

    WorkerPool pool(budget_.max_in_flight);
    std::unique_lock lock(mutex_);
    while (true) {
      if (drain_completions()) {
        // Crash simulation: leave files exactly as a killed process would.
        result_.interrupted = true;
        return std::move(result_);
      }
      if (result_.ledger.pending_ids.empty()) break;
      if (auth_error_ && in_flight_ == 0) {
        finish(started);
        fail(ErrorCode::ProviderAuthError, *auth_error_);
      }

      double next_event = std::numeric_limits<double>::infinity();
      bool dispatched = false;
      while (!auth_error_ && in_flight_ < budget_.max_in_flight) {
        const double now = clock_.now();
        std::optional<std::size_t> candidate;
        bool from_retry = false;
        if (!retries_.empty() && retries_.top().due <= now) {
          candidate = retries_.top().index;
          from_retry = true;
        } else if (!ready_.empty()) {
          candidate = ready_.front();
        } else if (!retries_.empty()) {
          next_event = std::min(next_event, retries_.top().due);
        }
        if (!candidate) break;
        const std::size_t tokens = request_tokens(*candidate);
        const double allowed = limiter_.next_allowed(now, tokens);
        if (allowed > now) {
          next_event = std::min(next_event, allowed);
          break;
        }
        if (from_retry) {
          retries_.pop();
        } else {
          ready_.pop_front();
        }
        limiter_.try_acquire(now, tokens);
        dispatch(pool, *candidate, now, tokens);
        dispatched = true;
      }
      if (dispatched) continue;

      if (in_flight_ > 0) {
        clock_.wait_until(cv_, lock, next_event, [this] { return !done_.empty(); });
      } else if (std::isfinite(next_event)) {
        lock.unlock();
        clock_.sleep_until(next_event);
        lock.lock();
      } else if (!auth_error_) {
        fail(ErrorCode::Io, "batch engine stalled with pending requests");
      }
    }
    finish(started);
    return std::move(result_);
  }

 private:
  struct Retry {
    double due;
    std::size_t index;
    bool operator>(const Retry& o) const { return due > o.due || (due == o.due && index > o.index); }
  };

  std::size_t request_tokens(std::size_t idx) const {
    return estimate_tokens(requests_[idx].prompt) + requests_[idx].max_output_tokens;
  }

  void dispatch(WorkerPool& pool, std::size_t idx, double now, std::size_t tokens) {
    const int attempt = ++attempts_[idx];
    ++in_flight_;
    ++result_.dispatched;
    DispatchEvent ev{requests_[idx].custom_id, attempt, now, tokens};
    text::append_file(files_.dispatch_log(),
                      json({{"custom_id", ev.custom_id},
                            {"attempt", ev.attempt},
                            {"time", ev.time},
                            {"estimated_tokens", ev.estimated_tokens}})
                              .dump() +
                          "\n");
    result_.dispatches.push_back(std::move(ev));
    pool.submit([this, idx, attempt] {
      ProviderReply reply;
      try {
        reply = provider_.complete(requests_[idx]);
      } catch (const std::exception& e) {
        reply = {ProviderStatus::RetryableError, {}, 0, 0, e.what()};
      }
      {
        std::lock_guard lock(mutex_);
        done_.push_back({idx, attempt, std::move(reply)});
      }
      cv_.notify_all();
    });
  }

  double backoff(int failed_attempt) {
    const double floor = budget_.base_backoff_s * std::pow(2.0, failed_attempt - 1);
    std::uniform_real_distribution<double> jitter(0.0, floor);
    return std::max(floor, std::min(budget_.max_backoff_s, floor + jitter(rng_)));
  }

  // Returns true when the crash simulation should fire.
  bool drain_completions() {
    while (!done_.empty()) {
      Completion c = std::move(done_.front());
      done_.pop_front();
      --in_flight_;
      const auto& req = requests_[c.index];
      auto& reply = c.reply;
      if (reply.status == ProviderStatus::Ok && reply.text.empty()) {
        reply.status = ProviderStatus::RetryableError;
        reply.error = "empty reply";
      }
      if (reply.status == ProviderStatus::AuthError) {
        if (!auth_error_) auth_error_ = req.custom_id + ": " + reply.error;
        continue;
      }
      ChatResponse resp;
      resp.custom_id = req.custom_id;
      resp.attempts = c.attempt;
      resp.input_tokens = reply.input_tokens;
      resp.output_tokens = reply.output_tokens;
      if (reply.status == ProviderStatus::Ok) {
        resp.status = ResponseStatus::Ok;
        resp.raw_text = std::move(reply.text);
      } else if (c.attempt < budget_.max_attempts) {
        retries_.push({clock_.now() + backoff(c.attempt), c.index});
        continue;
      } else {
        resp.status = reply.status == ProviderStatus::Timeout ? ResponseStatus::Timeout
                                                              : ResponseStatus::ProviderError;
        resp.error = reply.error;
      }
      record_terminal(resp, req.model_id);
      if (options_.interrupt_after && completions_ >= *options_.interrupt_after) return true;
    }
    return false;
  }

  void record_terminal(const ChatResponse& resp, const std::string& model_id) {
    text::append_file(files_.responses(), response_line(resp));
    auto& l = result_.ledger;
    l.pending_ids.erase(resp.custom_id);
    l.completed_ids.insert(resp.custom_id);
    if (resp.status != ResponseStatus::Ok) l.failed_ids.insert(resp.custom_id);
    auto& usage = l.usage_by_model[model_id];
    usage.input_tokens += resp.input_tokens;
    usage.output_tokens += resp.output_tokens;
    ++completions_;
    ++since_checkpoint_;
    if (options_.on_progress) options_.on_progress(l);
    const double now = clock_.now();
    if (since_checkpoint_ >= budget_.checkpoint_every ||
        now - last_checkpoint_time_ >= budget_.checkpoint_interval_s) {
      checkpoint(now);
    }
  }

  void checkpoint(double now) {
    auto& l = result_.ledger;
    if (options_.prices) l.cost_accrued = estimate_cost(l, *options_.prices);
    text::write_file_atomic(files_.ledger(), serialize_ledger(l));
    since_checkpoint_ = 0;
    last_checkpoint_time_ = now;
  }

  void finish(double started) {
    const double now = clock_.now();
    result_.ledger.wall_time_s += now - started;
    checkpoint(now);
  }

  const std::vector<ChatRequest>& requests_;
  ChatProvider& provider_;
  const RateBudget& budget_;
  const RunFiles& files_;
  const RunOptions& options_;
  Clock& clock_;
  RateLimiter limiter_;
  std::mt19937_64 rng_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Completion> done_;
  std::size_t in_flight_ = 0;

  std::deque<std::size_t> ready_;
  std::priority_queue<Retry, std::vector<Retry>, std::greater<>> retries_;
  std::unordered_map<std::size_t, int> attempts_;
  std::optional<std::string> auth_error_;
  std::size_t completions_ = 0;
  std::size_t since_checkpoint_ = 0;
  double last_checkpoint_time_ = 0.0;
  RunResult result_;
};

RunResult execute(const RunFiles& files, ChatProvider& provider, const RateBudget& budget,
                  RunLedger ledger, const RunOptions& options) {
  budget.validate();
  const auto requests = read_requests(files.requests());
  SteadyClock steady;
  Clock& clock = options.clock ? *options.clock : steady;
  Executor exec(requests, provider, budget, files, std::move(ledger), options, clock);
  return exec.run();
}

}  // namespace

RunDirLock::RunDirLock(const fs::path& run_dir) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  const auto path = RunFiles{run_dir}.lock();
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorCode::Io, "cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorCode::RunDirLocked, "another run is active in " + run_dir.string());
  }
}

RunDirLock::~RunDirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

RunResult run_batch(const fs::path& request_file, ChatProvider& provider, const RateBudget& budget,
                    const fs::path& run_dir, const RunOptions& options) {
  budget.validate();
  RunDirLock lock(run_dir);
  const RunFiles files{run_dir};
  if (fs::exists(files.ledger())) {
    fail(ErrorCode::InvalidArgument,
         run_dir.string() + " already holds a run; resume it instead");
  }
  const auto requests = read_requests(request_file);
  std::error_code ec;
  if (!fs::equivalent(request_file, files.requests(), ec)) {
    write_requests(files.requests(), requests);
  }
  text::write_file_atomic(files.responses(), "");
  text::write_file_atomic(files.dispatch_log(), "");

  RunLedger ledger;
  ledger.run_id = run_id_for(requests);
  for (const auto& r : requests) ledger.pending_ids.insert(r.custom_id);
  text::write_file_atomic(files.ledger(), serialize_ledger(ledger));
  return execute(files, provider, budget, std::move(ledger), options);
}

RunResult resume(const fs::path& run_dir, ChatProvider& provider, const RateBudget& budget,
                 const RunOptions& options) {
  budget.validate();
  RunDirLock lock(run_dir);
  const RunFiles files{run_dir};
  if (!fs::exists(files.ledger())) {
    fail(ErrorCode::CorruptLedger, "no ledger checkpoint in " + run_dir.string());
  }
  RunLedger ledger = parse_ledger(text::read_file(files.ledger()));
  const auto requests = read_requests(files.requests());

  std::set<std::string> all;
  for (const auto& r : requests) all.insert(r.custom_id);
  std::set<std::string> in_ledger = ledger.completed_ids;
  in_ledger.insert(ledger.pending_ids.begin(), ledger.pending_ids.end());
  if (in_ledger != all) {
    fail(ErrorCode::CorruptLedger, "ledger ids do not match the request file");
  }

  // The response file is authoritative for completion: a crash can land
  // between appending a response and the next checkpoint.
  const auto responses = load_responses(files.responses(), true);
  std::set<std::string> answered;
  for (const auto& r : responses) answered.insert(r.custom_id);
  for (const auto& id : ledger.completed_ids) {
    if (!answered.contains(id)) {
      fail(ErrorCode::CorruptLedger, "ledger marks " + id + " complete but it has no response");
    }
  }

  bool changed = false;
  std::map<std::string, const ChatRequest*> by_id;
  for (const auto& r : requests) by_id[r.custom_id] = &r;
  for (const auto& r : responses) {
    if (!all.contains(r.custom_id)) {
      fail(ErrorCode::CorruptLedger, "response for unknown request " + r.custom_id);
    }
    if (ledger.pending_ids.erase(r.custom_id) > 0) {
      ledger.completed_ids.insert(r.custom_id);
      if (r.status != ResponseStatus::Ok) ledger.failed_ids.insert(r.custom_id);
      auto& usage = ledger.usage_by_model[by_id.at(r.custom_id)->model_id];
      usage.input_tokens += r.input_tokens;
      usage.output_tokens += r.output_tokens;
      changed = true;
    }
  }

  if (ledger.pending_ids.empty()) {
    if (changed) {
      if (options.prices) ledger.cost_accrued = estimate_cost(ledger, *options.prices);
      text::write_file_atomic(files.ledger(), serialize_ledger(ledger));
    }
    RunResult done;
    done.ledger = std::move(ledger);
    return done;
  }
  return execute(files, provider, budget, std::move(ledger), options);
}

RunResult run_or_resume(const fs::path& request_file, ChatProvider& provider,
                        const RateBudget& budget, const fs::path& run_dir,
                        const RunOptions& options) {
  if (fs::exists(RunFiles{run_dir}.ledger())) return resume(run_dir, provider, budget, options);
  return run_batch(request_file, provider, budget, run_dir, options);
}

std::vector<ChatResponse> read_responses(const fs::path& path) {
  return load_responses(path, false);
}

}  // namespace screenkit
