#include "screenkit/service.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>

#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

extern char** environ;

namespace screenkit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string scrub_credentials(std::string_view line) {
  std::string out(line);
  static const char* markers[] = {"KEY", "TOKEN", "SECRET", "PASSWORD", "PASSWD", "CREDENTIAL"};
  for (char** env = environ; env != nullptr && *env != nullptr; ++env) {
    const std::string_view entry(*env);
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string name = text::to_lower(entry.substr(0, eq));
    const std::string_view value = entry.substr(eq + 1);
    // Counts and flags such as MAX_TOKENS=4096 are not secrets.
    if (value.size() < 8 || std::none_of(value.begin(), value.end(), [](char c) {
          return std::isalpha(static_cast<unsigned char>(c)) != 0;
        })) {
      continue;
    }
    bool secret = false;
    for (const char* m : markers) secret = secret || name.find(text::to_lower(m)) != std::string::npos;
    if (!secret) continue;
    for (auto pos = out.find(value); pos != std::string::npos; pos = out.find(value, pos)) {
      out.replace(pos, value.size(), "[redacted]");
      pos += 10;
    }
  }
  static const std::regex sk_key(R"(sk-[A-Za-z0-9_\-]{8,})");
  static const std::regex bearer(R"((Bearer|bearer)\s+[A-Za-z0-9._~+/=\-]+)");
  out = std::regex_replace(out, sk_key, "[redacted]");
  out = std::regex_replace(out, bearer, "$1 [redacted]");
  return out;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Scrubs string values in place so the document stays valid JSON.
void scrub_json(json& j) {
  if (j.is_string()) {
    j = scrub_credentials(j.get<std::string>());
  } else if (j.is_structured()) {
    for (auto& child : j) scrub_json(child);
  }
}

void send_json(httplib::Response& res, int status, json body) {
  scrub_json(body);
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

struct RunState {
  std::string run_id;
  fs::path run_dir;
  RunConfig config;
  Corpus corpus;
  std::shared_ptr<RunDirLock> lock;
  std::thread worker;

  std::mutex mutex;
  Progress progress;
  TrainingLabelStore labels;
};

bool decisions_ready(Phase p) { return p == Phase::Evaluating || p == Phase::Done; }

json decision_json(const FinalDecision& f) {
  auto verdict = [](const ScreeningDecision& d) {
    return json{{"decision", std::string(to_string(d.decision))}, {"confidence", d.confidence}};
  };
  return {{"record_id", f.record_id},
          {"decision", std::string(to_string(f.decision))},
          {"aggregated_confidence", f.aggregated_confidence},
          {"rule", std::string(to_string(f.rule))},
          {"actor", verdict(f.actor)},
          {"critic", f.critic ? verdict(*f.critic) : json(nullptr)}};
}

}  // namespace

struct Service::Impl {
  ServiceOptions options;
  httplib::Server server;
  std::thread listener;
  std::mutex mutex;  // guards runs and idempotency
  std::map<std::string, std::shared_ptr<RunState>> runs;
  struct IdempotentReply {
    std::uint64_t body_hash;
    int status;
    json body;
  };
  std::map<std::string, IdempotentReply> idempotency;
  std::mt19937_64 rng{std::random_device{}()};

  explicit Impl(ServiceOptions o) : options(std::move(o)) {
    if (!options.make_provider) {
      options.make_provider = [](const std::string& id) { return make_provider(id); };
    }
    routes();
  }

  void log(const std::string& line) {
    const std::string clean = scrub_credentials(line);
    if (options.log_sink) {
      options.log_sink(clean);
    } else {
      std::cerr << clean << "\n";
    }
  }

  std::shared_ptr<RunState> find(const std::string& id) {
    std::lock_guard lock(mutex);
    auto it = runs.find(id);
    return it == runs.end() ? nullptr : it->second;
  }

  void routes() {
    server.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
      log(req.method + " " + req.path + " " + std::to_string(res.status));
    });
    server.set_exception_handler(
        [this](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "internal error";
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          log("handler failure: " + what);
          send_error(res, 500, what);
        });

    server.Get("/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });
    server.Post("/v1/runs",
                [this](const httplib::Request& req, httplib::Response& res) { create_run(req, res); });
    server.Get(R"(/v1/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto run = find(req.matches[1]);
      if (!run) return send_error(res, 404, "unknown run");
      send_json(res, 200, run_view(*run));
    });
    server.Post(R"(/v1/runs/([^/]+)/labels)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  auto run = find(req.matches[1]);
                  if (!run) return send_error(res, 404, "unknown run");
                  submit_labels(*run, req, res);
                });
    server.Get(R"(/v1/runs/([^/]+)/results)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 auto run = find(req.matches[1]);
                 if (!run) return send_error(res, 404, "unknown run");
                 results(*run, req, res);
               });
    server.Get(R"(/v1/runs/([^/]+)/metrics)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 auto run = find(req.matches[1]);
                 if (!run) return send_error(res, 404, "unknown run");
                 metrics(*run, req, res);
               });
    server.Get(R"(/v1/runs/([^/]+)/artifacts/(.+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 auto run = find(req.matches[1]);
                 if (!run) return send_error(res, 404, "unknown run");
                 artifact(*run, req.matches[2], res);
               });
  }

  std::string new_run_id() {
    return "run-" + text::hex64(rng()).substr(0, 12);
  }

  void create_run(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_json(res, 400, {{"error", "request body is not JSON"},
                                  {"fields", json::array({{{"field", "body"}, {"message", e.what()}}})}});
    }
    const std::string key = req.get_header_value("Idempotency-Key");
    const std::uint64_t body_hash = text::fnv1a64(body.dump());

    std::lock_guard lock(mutex);
    if (!key.empty()) {
      if (auto it = idempotency.find(key); it != idempotency.end()) {
        if (it->second.body_hash != body_hash) {
          return send_error(res, 422, "Idempotency-Key reused with a different request body");
        }
        return send_json(res, it->second.status, it->second.body);
      }
    }
    auto remember = [&](int status, const json& reply) {
      if (!key.empty() && status < 500 && status != 409) {
        idempotency[key] = {body_hash, status, reply};
      }
      send_json(res, status, reply);
    };

    if (!body.is_object() || !body.contains("config")) {
      return remember(400, {{"error", "validation failed"},
                            {"fields", json::array({{{"field", "config"}, {"message", "required"}}})}});
    }
    const auto errs = validate_run_config(body["config"]);
    if (!errs.empty()) {
      json fields = json::array();
      for (const auto& e : errs) fields.push_back({{"field", e.field}, {"message", e.message}});
      return remember(400, {{"error", "validation failed"}, {"fields", fields}});
    }
    if (body.contains("run_dir") && !body["run_dir"].is_string()) {
      return remember(400, {{"error", "validation failed"},
                            {"fields", json::array({{{"field", "run_dir"}, {"message", "must be a string"}}})}});
    }

    auto state = std::make_shared<RunState>();
    state->run_id = new_run_id();
    try {
      state->config = run_config_from_json(body["config"]);
    } catch (const Error& e) {
      return remember(400, {{"error", "validation failed"},
                            {"fields", json::array({{{"field", "config"}, {"message", e.what()}}})}});
    }
    const auto& cfg = state->config;
    try {
      state->corpus = cfg.corpus_csv ? parse_corpus(*cfg.corpus_csv, cfg.column_map)
                                     : load_corpus(cfg.corpus_path, cfg.column_map);
    } catch (const Error& e) {
      return remember(400, {{"error", "validation failed"},
                            {"fields", json::array({{{"field", cfg.corpus_csv ? "corpus_csv" : "corpus_path"},
                                                     {"message", e.what()}}})}});
    }
    try {
      Criteria criteria = cfg.criteria ? *cfg.criteria : load_criteria(cfg.criteria_path);
      if (cfg.inclusion_bias && !criteria.inclusion_bias) criteria = apply_inclusion_bias(criteria);
      validate(criteria, cfg.prompt);
    } catch (const Error& e) {
      return remember(400, {{"error", "validation failed"},
                            {"fields", json::array({{{"field", cfg.criteria ? "criteria" : "criteria_path"},
                                                     {"message", e.what()}}})}});
    }

    state->run_dir = body.contains("run_dir") ? fs::path(body["run_dir"].get<std::string>())
                                              : fs::path(state->run_id);
    if (state->run_dir.is_relative()) state->run_dir = options.runs_root / state->run_dir;
    try {
      state->lock = std::make_shared<RunDirLock>(state->run_dir);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::RunDirLocked) return send_error(res, 409, e.what());
      throw;
    }
    state->labels = TrainingLabelStore::load(RunDirLayout{state->run_dir}.training_labels());
    runs[state->run_id] = state;
    start_worker(state);
    log("run " + state->run_id + " created in " + state->run_dir.string());
    remember(201, {{"run_id", state->run_id}, {"phase", "building"}});
  }

  void start_worker(const std::shared_ptr<RunState>& state) {
    state->worker = std::thread([this, state] {
      ScreenHooks hooks;
      hooks.run_dir_locked = true;
      hooks.make_provider = options.make_provider;
      hooks.on_progress = [state](const Progress& p) {
        std::lock_guard lock(state->mutex);
        state->progress = p;
      };
      try {
        screen(state->config, state->run_dir, hooks);
      } catch (const std::exception& e) {
        {
          std::lock_guard lock(state->mutex);
          state->progress.phase = Phase::Failed;
          state->progress.error = e.what();
        }
        log("run " + state->run_id + " failed: " + e.what());
      }
      state->lock.reset();
    });
  }

  json run_view(RunState& run) {
    std::lock_guard lock(run.mutex);
    json j = to_json(run.progress);
    j["run_id"] = run.run_id;
    j["n_records"] = run.corpus.size();
    j["n_training_labels"] = run.labels.size();
    j["config"] = {{"mode", std::string(to_string(run.config.mode))},
                   {"rule", std::string(to_string(run.config.rule))},
                   {"actor_model_id", run.config.actor_model_id},
                   {"critic_model_id", run.config.critic_model_id ? json(*run.config.critic_model_id)
                                                                 : json(nullptr)},
                   {"replicates", run.config.replicates}};
    return j;
  }

  void submit_labels(RunState& run, const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return send_error(res, 400, "request body is not JSON");
    }
    if (!body.is_object() || !body.contains("labels") || !body["labels"].is_array()) {
      return send_error(res, 400, "expected {\"labels\": [...]}");
    }
    std::vector<TrainingLabel> incoming;
    json unknown = json::array();
    for (const auto& l : body["labels"]) {
      if (!l.is_object() || !l.contains("record_id") || !l["record_id"].is_string() ||
          !l.contains("human_decision") || !l["human_decision"].is_string()) {
        return send_error(res, 400, "each label needs record_id and human_decision");
      }
      TrainingLabel t;
      t.record_id = l["record_id"].get<std::string>();
      try {
        t.human_decision = parse_decision_name(l["human_decision"].get<std::string>());
      } catch (const Error&) {
        return send_error(res, 400, "human_decision must be include or exclude");
      }
      t.labeler = l.contains("labeler") && l["labeler"].is_string() ? l["labeler"].get<std::string>()
                                                                   : "reviewer";
      t.labeled_at = l.contains("labeled_at") && l["labeled_at"].is_string()
                         ? l["labeled_at"].get<std::string>()
                         : utc_now();
      if (!run.corpus.contains(t.record_id)) unknown.push_back(t.record_id);
      incoming.push_back(std::move(t));
    }
    if (!unknown.empty()) {
      return send_json(res, 422, {{"error", "unknown record_id"}, {"record_ids", unknown}});
    }
    std::lock_guard lock(run.mutex);
    for (auto& t : incoming) run.labels.upsert(std::move(t));
    run.labels.save(RunDirLayout{run.run_dir}.training_labels());
    send_json(res, 200, {{"stored", run.labels.size()}});
  }

  std::optional<LabelLevel> level_param(const httplib::Request& req, httplib::Response& res) {
    const std::string level = req.has_param("level") ? req.get_param_value("level") : "final";
    try {
      return parse_label_level(level);
    } catch (const Error&) {
      send_error(res, 400, "level must be fulltext or final");
      return std::nullopt;
    }
  }

  // Report against configured label files for the level, else the uploaded
  // training labels. Returns nullopt with a reason when no evaluation is possible.
  std::optional<json> report_for(RunState& run, LabelLevel level,
                                 const std::vector<FinalDecision>& finals, std::string& why) {
    LabelSet labels;
    labels.level = level;
    const auto& files = level == LabelLevel::Final ? run.config.final_labels
                                                   : run.config.fulltext_labels;
    std::string source;
    if (files) {
      labels = load_labels(files->includes, files->excludes, level, run.corpus).labels;
      source = "label_files";
    } else {
      std::lock_guard lock(run.mutex);
      for (const auto& [id, d] : run.labels.consensus()) {
        (d == Decision::Include ? labels.includes : labels.excludes).insert(id);
      }
      source = "training_labels";
    }
    if (labels.includes.empty() && labels.excludes.empty()) {
      why = "no labels available for evaluation";
      return std::nullopt;
    }
    try {
      const auto report = evaluate(finals, labels, level);
      json j = to_json(report);
      j["label_source"] = source;
      j["plot"] = plot_data_json(report);
      return j;
    } catch (const Error& e) {
      why = e.what();
      return std::nullopt;
    }
  }

  bool load_finals(RunState& run, std::vector<FinalDecision>& finals, httplib::Response& res) {
    Phase phase;
    {
      std::lock_guard lock(run.mutex);
      phase = run.progress.phase;
    }
    if (!decisions_ready(phase)) {
      send_error(res, 409, "decisions not yet available (phase " + std::string(to_string(phase)) + ")");
      return false;
    }
    finals = read_final_decisions(run.run_dir);
    std::sort(finals.begin(), finals.end(),
              [](const FinalDecision& a, const FinalDecision& b) { return a.record_id < b.record_id; });
    return true;
  }

  void results(RunState& run, const httplib::Request& req, httplib::Response& res) {
    const auto level = level_param(req, res);
    if (!level) return;
    std::size_t page = 1;
    std::size_t page_size = 50;
    try {
      if (req.has_param("page")) page = std::stoul(req.get_param_value("page"));
      if (req.has_param("page_size")) page_size = std::stoul(req.get_param_value("page_size"));
    } catch (const std::exception&) {
      return send_error(res, 400, "page and page_size must be positive integers");
    }
    if (page < 1 || page_size < 1 || page_size > 1000) {
      return send_error(res, 400, "page >= 1 and 1 <= page_size <= 1000 required");
    }
    std::vector<FinalDecision> finals;
    if (!load_finals(run, finals, res)) return;

    json decisions = json::array();
    const std::size_t begin = std::min(finals.size(), (page - 1) * page_size);
    const std::size_t end = std::min(finals.size(), begin + page_size);
    for (std::size_t i = begin; i < end; ++i) decisions.push_back(decision_json(finals[i]));
    json disagreements = json::array();
    for (const auto& f : finals) {
      if (f.critic && f.critic->decision != f.actor.decision) disagreements.push_back(decision_json(f));
    }
    json body = {{"level", std::string(to_string(*level))},
                 {"page", page},
                 {"page_size", page_size},
                 {"total", finals.size()},
                 {"decisions", decisions},
                 {"disagreements", disagreements}};
    std::string why;
    if (auto report = report_for(run, *level, finals, why)) {
      body["report"] = *report;
    } else {
      body["report"] = nullptr;
      body["report_error"] = {{"status", 409}, {"message", why}};
    }
    send_json(res, 200, body);
  }

  void metrics(RunState& run, const httplib::Request& req, httplib::Response& res) {
    const auto level = level_param(req, res);
    if (!level) return;
    std::vector<FinalDecision> finals;
    if (!load_finals(run, finals, res)) return;
    std::string why;
    if (auto report = report_for(run, *level, finals, why)) return send_json(res, 200, *report);
    send_error(res, 409, why);
  }

  void artifact(RunState& run, const std::string& name, httplib::Response& res) {
    static const std::set<std::string> allowed = {
        "final_decisions.csv", "decisions.csv", "replicates.csv", "errors.csv",
        "corpus_stats.json", "status.json", "reports/fulltext/report.json",
        "reports/fulltext/roc_points.csv", "reports/fulltext/reliability_bins.csv",
        "reports/final/report.json", "reports/final/roc_points.csv",
        "reports/final/reliability_bins.csv"};
    if (!allowed.contains(name)) return send_error(res, 404, "unknown artifact");
    const fs::path path = run.run_dir / name;
    if (!fs::exists(path)) return send_error(res, 409, "artifact not yet written");
    const bool is_json = name.size() > 5 && name.substr(name.size() - 5) == ".json";
    res.status = 200;
    std::string content = text::read_file(path);
    if (is_json) {
      json doc = json::parse(content, nullptr, false);
      if (!doc.is_discarded()) {
        scrub_json(doc);
        content = doc.dump(2) + "\n";
      } else {
        content = scrub_credentials(content);
      }
    } else {
      content = scrub_credentials(content);
    }
    res.set_content(content, is_json ? "application/json" : "text/csv");
  }

  std::vector<std::shared_ptr<RunState>> snapshot() {
    std::lock_guard lock(mutex);
    std::vector<std::shared_ptr<RunState>> out;
    for (const auto& [id, r] : runs) out.push_back(r);
    return out;
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::start() {
  auto& s = impl_->server;
  int port = impl_->options.port;
  if (port == 0) {
    port = s.bind_to_any_port(impl_->options.host);
  } else if (!s.bind_to_port(impl_->options.host, port)) {
    port = -1;
  }
  if (port < 0) fail(ErrorCode::Io, "cannot bind " + impl_->options.host);
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  impl_->log("listening on " + impl_->options.host + ":" + std::to_string(port));
  return port;
}

void Service::run() {
  auto& s = impl_->server;
  if (!s.bind_to_port(impl_->options.host, impl_->options.port)) {
    fail(ErrorCode::Io, "cannot bind " + impl_->options.host + ":" +
                            std::to_string(impl_->options.port));
  }
  impl_->log("listening on " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  s.listen_after_bind();
  wait_for_runs();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  wait_for_runs();
}

void Service::wait_for_runs() {
  for (const auto& r : impl_->snapshot()) {
    if (r->worker.joinable() && r->worker.get_id() != std::this_thread::get_id()) r->worker.join();
  }
}

}  // namespace screenkit
